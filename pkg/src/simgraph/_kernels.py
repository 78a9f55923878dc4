"""Compiled inner loops. Everything here is plain-array in, plain-array out.

Bit streams are MSB-first within each byte. Kernels that can fail return a
negative status instead of raising, so callers can attach context.
"""
import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True)


# ---------------------------------------------------------------------------
# gamma codes


@njit(**_JIT)
def gamma_len(x):
    n = 0
    y = x
    while y > 1:
        y >>= 1
        n += 1
    return 2 * n + 1


@njit(**_JIT)
def put_gamma(buf, pos, x):
    """Write gamma(x), x >= 1, at bit ``pos`` of a zeroed buffer; return the new position."""
    nbits = 0
    y = x
    while y > 1:
        y >>= 1
        nbits += 1
    pos += nbits  # zero prefix: buffer is already zero
    for k in range(nbits, -1, -1):
        if (x >> k) & 1:
            buf[pos >> 3] |= np.uint8(0x80 >> (pos & 7))
        pos += 1
    return pos


@njit(**_JIT)
def get_gamma(buf, pos, limit):
    """Decode one gamma code at ``pos``; returns (value, new_pos) or (0, -1) past ``limit``."""
    zeros = 0
    while True:
        if pos >= limit:
            return 0, -1
        if (buf[pos >> 3] >> (7 - (pos & 7))) & 1:
            break
        zeros += 1
        pos += 1
        if zeros > 40:
            return 0, -1
    if pos + zeros + 1 > limit:
        return 0, -1
    x = 0
    for _ in range(zeros + 1):
        x = (x << 1) | ((buf[pos >> 3] >> (7 - (pos & 7))) & 1)
        pos += 1
    return x, pos


@njit(**_JIT)
def encode_range(offsets, neighbors, weights, v_lo, v_hi):
    """Gamma-encode vertices [v_lo, v_hi) into a graph stream and a label stream.

    Returns (graph_buf, graph_bits, label_buf, label_bits, graph_pos, label_pos, status)
    where the position arrays hold v_hi - v_lo + 1 chunk-relative bit offsets.
    status is -1 - v for the first vertex with a non-increasing neighbour.
    """
    nv = v_hi - v_lo
    gbits = 0
    lbits = 0
    for v in range(v_lo, v_hi):
        a = offsets[v]
        b = offsets[v + 1]
        gbits += gamma_len(np.int64(b - a + 1))
        prev = np.int64(-1)
        for e in range(a, b):
            nb = np.int64(neighbors[e])
            if prev < 0:
                gbits += gamma_len(np.int64(nb + 1))
            else:
                if nb <= prev:
                    return (np.zeros(0, np.uint8), 0, np.zeros(0, np.uint8), 0,
                            np.zeros(0, np.int64), np.zeros(0, np.int64), -1 - v)
                gbits += gamma_len(np.int64(nb - prev))
            prev = nb
            lbits += gamma_len(np.int64(weights[e]) + 1)
    gbuf = np.zeros((gbits + 7) // 8, np.uint8)
    lbuf = np.zeros((lbits + 7) // 8, np.uint8)
    gpos = np.zeros(nv + 1, np.int64)
    lpos = np.zeros(nv + 1, np.int64)
    gp = 0
    lp = 0
    for v in range(v_lo, v_hi):
        gpos[v - v_lo] = gp
        lpos[v - v_lo] = lp
        a = offsets[v]
        b = offsets[v + 1]
        gp = put_gamma(gbuf, gp, np.int64(b - a + 1))
        prev = np.int64(-1)
        for e in range(a, b):
            nb = np.int64(neighbors[e])
            if prev < 0:
                gp = put_gamma(gbuf, gp, np.int64(nb + 1))
            else:
                gp = put_gamma(gbuf, gp, np.int64(nb - prev))
            prev = nb
            lp = put_gamma(lbuf, lp, np.int64(weights[e]) + 1)
    gpos[nv] = gp
    lpos[nv] = lp
    return gbuf, gbits, lbuf, lbits, gpos, lpos, 0


@njit(**_JIT)
def decode_all(gbuf, gbits, lbuf, lbits, vertex_count, edge_count):
    """Single sequential pass over both streams.

    Returns (offsets, neighbors, weights, status); status is 0 on success,
    otherwise -1 - v for the vertex at which a stream ran dry or overflowed.
    """
    offsets = np.zeros(vertex_count + 1, np.uint64)
    nbrs = np.zeros(edge_count, np.uint32)
    wts = np.zeros(edge_count, np.uint32)
    gp = 0
    lp = 0
    e = 0
    for v in range(vertex_count):
        d1, gp = get_gamma(gbuf, gp, gbits)
        if gp < 0 or d1 < 1:
            return offsets, nbrs, wts, -1 - v
        deg = d1 - 1
        if e + deg > edge_count:
            return offsets, nbrs, wts, -1 - v
        cur = np.int64(-1)
        for k in range(deg):
            x, gp = get_gamma(gbuf, gp, gbits)
            if gp < 0:
                return offsets, nbrs, wts, -1 - v
            if k == 0:
                cur = np.int64(x) - 1
            else:
                cur += np.int64(x)
            if cur > 0xFFFFFFFF:
                return offsets, nbrs, wts, -1 - v
            nbrs[e + k] = cur
            w, lp = get_gamma(lbuf, lp, lbits)
            if lp < 0 or w - 1 > 0xFFFFFFFF:
                return offsets, nbrs, wts, -1 - v
            wts[e + k] = w - 1
        e += deg
        offsets[v + 1] = e
    if e != edge_count or gp != gbits or lp != lbits:
        return offsets, nbrs, wts, -1 - vertex_count
    return offsets, nbrs, wts, 0


@njit(**_JIT)
def decode_vertex(gbuf, gbits, gpos, lbuf, lbits, lpos):
    """Decode one vertex's neighbour and weight lists from known bit positions."""
    d1, gpos = get_gamma(gbuf, gpos, gbits)
    if gpos < 0 or d1 < 1:
        return np.zeros(0, np.uint32), np.zeros(0, np.uint32), -1
    deg = d1 - 1
    nbrs = np.zeros(deg, np.uint32)
    wts = np.zeros(deg, np.uint32)
    cur = np.int64(-1)
    for k in range(deg):
        x, gpos = get_gamma(gbuf, gpos, gbits)
        if gpos < 0:
            return nbrs, wts, -1
        if k == 0:
            cur = np.int64(x) - 1
        else:
            cur += np.int64(x)
        nbrs[k] = cur
        w, lpos = get_gamma(lbuf, lpos, lbits)
        if lpos < 0:
            return nbrs, wts, -1
        wts[k] = w - 1
    return nbrs, wts, 0


# ---------------------------------------------------------------------------
# bit packing / Elias-Fano


@njit(**_JIT)
def pack_fixed(values, width):
    """Pack the low ``width`` bits of each value, MSB-first, into a byte buffer."""
    n = len(values)
    buf = np.zeros((n * width + 7) // 8, np.uint8)
    pos = 0
    for i in range(n):
        x = values[i]
        for k in range(width - 1, -1, -1):
            if (x >> k) & 1:
                buf[pos >> 3] |= np.uint8(0x80 >> (pos & 7))
            pos += 1
    return buf


@njit(**_JIT)
def get_fixed(buf, pos, width):
    x = np.uint64(0)
    for _ in range(width):
        x = (x << np.uint64(1)) | np.uint64((buf[pos >> 3] >> (7 - (pos & 7))) & 1)
        pos += 1
    return x


@njit(**_JIT)
def _popcount8(b):
    c = 0
    while b:
        b &= b - 1
        c += 1
    return c


@njit(**_JIT)
def select1(upper, upper_bits, samples, sample_rate, i):
    """Position of the i-th one bit (0-based), starting from the nearest sample."""
    pos = samples[i // sample_rate]
    need = i % sample_rate
    if need == 0:
        return pos
    pos += 1
    # finish the current byte bit by bit
    while pos & 7 and pos < upper_bits:
        if (upper[pos >> 3] >> (7 - (pos & 7))) & 1:
            if need == 1:
                return pos
            need -= 1
        pos += 1
    # then whole bytes
    while pos < upper_bits:
        byte = upper[pos >> 3]
        c = _popcount8(byte)
        if c < need:
            need -= c
            pos += 8
            continue
        for k in range(8):
            if (byte >> (7 - k)) & 1:
                if need == 1:
                    return pos + k
                need -= 1
        pos += 8
    return -1


@njit(**_JIT)
def ef_access(upper, upper_bits, lower, width, samples, sample_rate, i):
    hi = select1(upper, upper_bits, samples, sample_rate, i) - i
    lo = get_fixed(lower, i * width, width) if width else np.uint64(0)
    return (np.uint64(hi) << np.uint64(width)) | lo


@njit(**_JIT)
def ef_access_many(upper, upper_bits, lower, width, samples, sample_rate, idx):
    out = np.empty(len(idx), np.uint64)
    for k in range(len(idx)):
        out[k] = ef_access(upper, upper_bits, lower, width, samples, sample_rate, idx[k])
    return out


# ---------------------------------------------------------------------------
# Smith-Waterman with masked re-runs


@njit(**_JIT)
def smith_waterman(a, b, scores, gap, max_hits, min_score):
    """Local alignment scores of integer-coded sequences ``a`` and ``b``.

    After each hit, the traced cells are masked (forced to 0) and the
    matrix recomputed, yielding up to ``max_hits`` scores >= ``min_score``.
    The first hit is always the optimal local score.
    """
    m = len(a)
    n = len(b)
    H = np.zeros((m + 1, n + 1), np.int64)
    mask = np.zeros((m + 1, n + 1), np.bool_)
    out = np.zeros(max_hits, np.int64)
    found = 0
    while found < max_hits:
        best = 0
        bi = 0
        bj = 0
        for i in range(1, m + 1):
            ai = a[i - 1]
            for j in range(1, n + 1):
                if mask[i, j]:
                    H[i, j] = 0
                    continue
                h = H[i - 1, j - 1] + scores[ai, b[j - 1]]
                up = H[i - 1, j] + gap
                if up > h:
                    h = up
                left = H[i, j - 1] + gap
                if left > h:
                    h = left
                if h < 0:
                    h = 0
                H[i, j] = h
                if h > best:
                    best = h
                    bi = i
                    bj = j
        if best < min_score or best <= 0:
            break
        out[found] = best
        found += 1
        i = bi
        j = bj
        while i > 0 and j > 0 and H[i, j] > 0:
            mask[i, j] = True
            h = H[i, j]
            if h == H[i - 1, j - 1] + scores[a[i - 1], b[j - 1]]:
                i -= 1
                j -= 1
            elif h == H[i - 1, j] + gap:
                i -= 1
            else:
                j -= 1
    return out[:found]


# ---------------------------------------------------------------------------
# symmetrisation merge


@njit(**_JIT)
def merge_max(a_off, a_nbr, a_w, t_off, t_nbr, t_w, out_off, out_nbr, out_w):
    """Per-vertex two-way merge of sorted runs; equal neighbours collapse to the max weight.

    ``out_off`` must be pre-sized to the upper bound; the actual offsets are
    written back and the total edge count returned.
    """
    nv = len(a_off) - 1
    e = 0
    out_off[0] = 0
    for v in range(nv):
        i = a_off[v]
        ie = a_off[v + 1]
        j = t_off[v]
        je = t_off[v + 1]
        while i < ie or j < je:
            if j >= je or (i < ie and a_nbr[i] < t_nbr[j]):
                out_nbr[e] = a_nbr[i]
                out_w[e] = a_w[i]
                i += 1
            elif i >= ie or t_nbr[j] < a_nbr[i]:
                out_nbr[e] = t_nbr[j]
                out_w[e] = t_w[j]
                j += 1
            else:
                out_nbr[e] = a_nbr[i]
                out_w[e] = a_w[i] if a_w[i] >= t_w[j] else t_w[j]
                i += 1
                j += 1
            e += 1
        out_off[v + 1] = e
    return e


# ---------------------------------------------------------------------------
# disjoint-set union


@njit(**_JIT)
def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@njit(**_JIT)
def dsu_components(vertex_count, src, dst):
    """Union by size with path compression; returns a root per vertex."""
    parent = np.arange(vertex_count, dtype=np.int64)
    size = np.ones(vertex_count, np.int64)
    for k in range(len(src)):
        ra = _find(parent, np.int64(src[k]))
        rb = _find(parent, np.int64(dst[k]))
        if ra == rb:
            continue
        if size[ra] < size[rb]:
            ra, rb = rb, ra
        parent[rb] = ra
        size[ra] += size[rb]
    for v in range(vertex_count):
        _find(parent, v)
    return parent


@njit(**_JIT)
def sort_segments(buf, offs):
    """Sort ``buf[offs[k]:offs[k+1]]`` in place for every k."""
    for k in range(len(offs) - 1):
        a = offs[k]
        b = offs[k + 1]
        if b - a > 1:
            buf[a:b].sort()
