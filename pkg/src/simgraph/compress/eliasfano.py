"""Elias-Fano representation of non-decreasing integer sequences."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .. import _kernels as K
from ..errors import CorruptionError, DomainError

SAMPLE_RATE = 1024


def lower_width(n: int, u: int) -> int:
    """Low-bit width ``ceil(log2(u / n))`` (0 when ``u <= n``).

    The ceiling keeps the upper bit vector at ``n + (u >> l) <= 2n`` bits.
    """
    if n == 0 or u <= n:
        return 0
    q = -(-u // n)  # ceil(u / n); ceil(log2(u/n)) == ceil(log2(ceil(u/n)))
    return (q - 1).bit_length()


@dataclass(frozen=True, eq=False)
class EliasFanoIndex:
    n: int
    u: int
    width: int
    lower: np.ndarray  # packed n * width bits
    upper: np.ndarray  # packed bit vector, n ones
    upper_bits: int
    samples: np.ndarray  # position of every SAMPLE_RATE-th one bit

    def __len__(self) -> int:
        return self.n

    @property
    def size_bits(self) -> int:
        """Bits actually emitted: low bits, high bit vector and 64-bit select samples."""
        return self.n * self.width + self.upper_bits + 64 * len(self.samples)

    def space_bound_bits(self) -> int:
        return 2 * self.n + self.n * self.width + 64 * (-(-self.n // SAMPLE_RATE))

    def access(self, i: int) -> int:
        if not 0 <= i < self.n:
            raise IndexError(f"index {i} out of range [0, {self.n})")
        return int(K.ef_access(self.upper, self.upper_bits, self.lower, self.width,
                               self.samples, SAMPLE_RATE, i))

    __getitem__ = access

    def access_many(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        if len(idx) and (idx.min() < 0 or idx.max() >= self.n):
            raise IndexError("index out of range")
        return K.ef_access_many(self.upper, self.upper_bits, self.lower, self.width,
                                self.samples, SAMPLE_RATE, idx)

    def decode(self) -> np.ndarray:
        """All values by a sequential scan (no select)."""
        if self.n == 0:
            return np.zeros(0, np.uint64)
        bits = np.unpackbits(self.upper)[: self.upper_bits]
        ones = np.flatnonzero(bits).astype(np.uint64)
        high = ones - np.arange(self.n, dtype=np.uint64)
        if self.width:
            lb = np.unpackbits(self.lower)[: self.n * self.width].reshape(self.n, self.width)
            weights = (1 << np.arange(self.width - 1, -1, -1, dtype=np.uint64))
            low = (lb.astype(np.uint64) * weights).sum(axis=1, dtype=np.uint64)
        else:
            low = np.zeros(self.n, np.uint64)
        return (high << np.uint64(self.width)) | low

    # -- serialisation: u64 n, u64 u, u8 width, u64 upper_bits, u64 samples,
    #    lower bytes, upper bytes, samples x u64

    def to_bytes(self) -> bytes:
        head = struct.pack("<QQBQQ", self.n, self.u, self.width, self.upper_bits, len(self.samples))
        return (head + self.lower.tobytes() + self.upper.tobytes()
                + self.samples.astype("<u8").tobytes())

    @classmethod
    def from_bytes(cls, buf, offset: int = 0) -> tuple["EliasFanoIndex", int]:
        head = struct.calcsize("<QQBQQ")
        if offset + head > len(buf):
            raise CorruptionError("Elias-Fano header truncated")
        n, u, width, upper_bits, ns = struct.unpack_from("<QQBQQ", buf, offset)
        offset += head
        lower_len = (n * width + 7) // 8
        upper_len = (upper_bits + 7) // 8
        total = lower_len + upper_len + 8 * ns
        if offset + total > len(buf) or ns != -(-n // SAMPLE_RATE):
            raise CorruptionError("Elias-Fano body truncated or inconsistent")
        mv = memoryview(buf)
        lower = np.frombuffer(mv[offset: offset + lower_len], np.uint8)
        offset += lower_len
        upper = np.frombuffer(mv[offset: offset + upper_len], np.uint8)
        offset += upper_len
        samples = np.frombuffer(mv[offset: offset + 8 * ns], "<u8").astype(np.int64)
        offset += 8 * ns
        return cls(n, u, width, lower, upper, upper_bits, samples), offset


def ef_build(values, u: int | None = None) -> EliasFanoIndex:
    """Encode a non-decreasing sequence of values in ``[0, u)``."""
    v = np.asarray(values, dtype=np.uint64)
    n = len(v)
    if u is None:
        u = int(v[-1]) + 1 if n else 0
    if n:
        if np.any(v[1:] < v[:-1]):
            raise DomainError("Elias-Fano input must be non-decreasing")
        if int(v[-1]) >= u:
            raise DomainError(f"value {int(v[-1])} outside universe {u}")
    width = lower_width(n, u)
    if width:
        low = (v & np.uint64((1 << width) - 1)).astype(np.int64)
        lower = K.pack_fixed(low, width)
    else:
        lower = np.zeros(0, np.uint8)
    high = (v >> np.uint64(width)).astype(np.int64)
    upper_bits = n + (u >> width) if n else 0
    bits = np.zeros(upper_bits, np.uint8)
    ones = high + np.arange(n, dtype=np.int64)
    bits[ones] = 1
    upper = np.packbits(bits)
    samples = ones[::SAMPLE_RATE].copy()
    return EliasFanoIndex(n, int(u), width, lower, upper, int(upper_bits), samples)


def ef_access(idx: EliasFanoIndex, i: int) -> int:
    return idx.access(i)


def ef_select_scan_check(idx: EliasFanoIndex) -> dict:
    """Cross-check select-based access against a sequential scan and the sample table."""
    scanned = idx.decode()
    selected = idx.access_many(np.arange(idx.n))
    bits = np.unpackbits(idx.upper)[: idx.upper_bits]
    ones = np.flatnonzero(bits)
    report = {
        "n": idx.n,
        "universe": idx.u,
        "lower_width": idx.width,
        "size_bits": idx.size_bits,
        "bound_bits": idx.space_bound_bits(),
        "ones_ok": len(ones) == idx.n,
        "samples_ok": bool(np.array_equal(ones[::SAMPLE_RATE], idx.samples)),
        "access_ok": bool(np.array_equal(scanned, selected)),
        "monotone_ok": bool(idx.n < 2 or np.all(scanned[1:] >= scanned[:-1])),
        "universe_ok": bool(idx.n == 0 or int(scanned[-1]) < idx.u),
    }
    report["ok"] = all(report[k] for k in ("ones_ok", "samples_ok", "access_ok",
                                           "monotone_ok", "universe_ok")) \
        and report["size_bits"] <= report["bound_bits"]
    return report
