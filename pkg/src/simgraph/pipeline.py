"""End-to-end run: partition -> align -> COO to CSC -> validate -> dedup ->
symmetrize -> validate -> filter -> compact -> compress -> analyze.

Each stage writes into its own directory under the output root and finishes
by writing ``stage.txt``: a manifest holding the stage's parameter digest,
the digest of its inputs and a sha256 per output file. A rerun skips every
stage whose manifest still matches. Concurrent runs on one root are refused
through an exclusive lock on ``.lock``.
"""
from __future__ import annotations

import dataclasses
import fcntl
import hashlib
import logging
import shutil
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from . import analytics as A
from .builder import (BuildMetrics, coo_to_csc, dedup_max_weight, symmetrize, symmetrize_sorted,
                      validate_csc, validate_symmetric)
from .compress import CompressedGraph, compress, decompress_stream
from .errors import DomainError, FormatError, SimGraphError, ValidationError
from .filtering import (ABSOLUTE, RELATIVE, FilterSpec, multi_filter, remove_zero_degrees,
                        resolve_spec, validate_filtered, vrw_histogram, weight_histogram)
from .graph import (PartitionScheme, csc_checksum, file_sha256, parse_kv_lines,
                    read_csc, read_manifest, write_csc, write_manifest)
from .seqsim import (SCHEME_FILE, SubstitutionMatrix, WeightLaw, align_block, enumerate_blocks,
                     generate_synthetic_coo, partition_corpus)

log = logging.getLogger(__name__)

STAGE_FILE = "stage.txt"
REVERSE_MAP = "reverse.bin"


class LockedError(SimGraphError):
    pass


def parse_filter(text: str) -> FilterSpec:
    """``kind:target[:label]``; ``abs``/``vrw`` abbreviate the two kinds."""
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise DomainError(f"filter spec {text!r} is not kind:target[:label]")
    kind = {"abs": ABSOLUTE, "vrw": RELATIVE}.get(parts[0], parts[0])
    target = float(parts[1])
    label = parts[2] if len(parts) == 3 else f"{'A' if kind == ABSOLUTE else 'R'}{round(target * 1000)}"
    return FilterSpec(kind, target, label)


def format_filter(spec: FilterSpec) -> str:
    return f"{spec.kind}:{spec.target_fraction:g}:{spec.label}"


@dataclass
class PipelineConfig:
    out: Path
    partitions: int = 8
    corpus: Path | None = None
    # synthetic COO input, used when no corpus is given
    synthetic_vertices: int = 10_000
    synthetic_edges: int = 100_000
    weight_law: str = "powerlaw:low=98,high=634925,exponent=2.5"
    skew: float = 0.8
    duplicate_fraction: float = 0.01
    # aligner
    min_score: int = 30
    max_alignments: int = 3
    gap: int = -2
    matrix: Path | None = None
    budget_bytes: int = 64 << 20
    filters: list = field(default_factory=lambda: [
        FilterSpec(ABSOLUTE, 0.2, "A200"), FilterSpec(ABSOLUTE, 0.05, "A50"),
        FilterSpec(RELATIVE, 0.5, "R500"), FilterSpec(RELATIVE, 0.3, "R300")])
    chunk_count: int = 4
    seed: int = 0
    workers: int = 1

    _PATHS = ("out", "corpus", "matrix")

    def __post_init__(self):
        for name in self._PATHS:
            v = getattr(self, name)
            if v is not None and not isinstance(v, Path):
                setattr(self, name, Path(v))
        if self.partitions < 1 or self.chunk_count < 1 or self.budget_bytes <= 0:
            raise DomainError("partitions, chunk_count and budget_bytes must be positive")
        labels = [f.label for f in self.filters]
        if len(set(labels)) != len(labels):
            raise DomainError("filter labels must be unique")

    def to_fields(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            if f.name.startswith("_"):
                continue
            v = getattr(self, f.name)
            if f.name == "filters":
                v = ",".join(format_filter(s) for s in v)
            out[f.name] = "" if v is None else v
        return out

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.to_fields().items())

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_fields(cls, fields: dict) -> "PipelineConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kw = {}
        for k, v in fields.items():
            if k not in types:
                raise DomainError(f"unknown config key {k!r}")
            if k == "filters":
                kw[k] = [parse_filter(s) for s in v.split(",") if s.strip()]
            elif k in cls._PATHS:
                kw[k] = Path(v) if v else None
            elif "int" in types[k]:
                kw[k] = int(v)
            elif "float" in types[k]:
                kw[k] = float(v)
            else:
                kw[k] = v
        if "out" not in kw or kw["out"] is None:
            raise DomainError("config needs an output root (out=...)")
        return cls(**kw)

    @classmethod
    def load(cls, path, **overrides) -> "PipelineConfig":
        fields = parse_kv_lines(Path(path).read_text(), str(path))
        fields.update({k: str(v) for k, v in overrides.items() if v is not None})
        return cls.from_fields(fields)


@dataclass
class StageResult:
    name: str
    status: str  # ran | skipped
    seconds: float
    verdict: str = ""


@dataclass
class RunReport:
    stages: list = field(default_factory=list)
    ok: bool = True
    error: str = ""
    final_artifact: Path | None = None

    def to_fields(self) -> dict:
        out = {"ok": int(self.ok), "error": self.error,
               "final_artifact": self.final_artifact or ""}
        for s in self.stages:
            out[f"{s.name}.status"] = s.status
            out[f"{s.name}.seconds"] = f"{s.seconds:.3f}"
            if s.verdict:
                out[f"{s.name}.verdict"] = s.verdict
        return out


@contextmanager
def run_lock(root: Path):
    root.mkdir(parents=True, exist_ok=True)
    fh = open(root / ".lock", "w")
    try:
        fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
    except BlockingIOError:
        fh.close()
        raise LockedError(f"{root} is in use by another run") from None
    try:
        yield
    finally:
        fcntl.flock(fh, fcntl.LOCK_UN)
        fh.close()


def _digest(obj) -> str:
    return hashlib.sha256(repr(obj).encode()).hexdigest()


def _outputs(directory: Path) -> dict:
    return {str(p.relative_to(directory)): file_sha256(p)
            for p in sorted(directory.rglob("*")) if p.is_file() and p.name != STAGE_FILE}


class _Runner:
    def __init__(self, cfg: PipelineConfig, report: RunReport):
        self.cfg = cfg
        self.root = cfg.out
        self.report = report
        self.upstream = ""  # digest chaining each stage to everything before it

    def stage(self, name: str, params, body):
        """Run ``body(dir)`` unless ``dir/stage.txt`` proves an identical earlier run."""
        d = self.root / name
        key = _digest((name, params, self.upstream))
        t0 = time.perf_counter()
        m = d / STAGE_FILE
        if m.exists():
            try:
                fields = read_manifest(m)
                recorded = {k[5:]: v for k, v in fields.items() if k.startswith("file:")}
                if fields.get("key") == key and recorded == _outputs(d):
                    self.report.stages.append(StageResult(name, "skipped", time.perf_counter() - t0,
                                                          fields.get("verdict", "")))
                    self.upstream = _digest((self.upstream, fields["checksum_outputs"]))
                    return
            except FormatError:
                pass
        if d.exists():
            shutil.rmtree(d)
        d.mkdir(parents=True)
        verdict = body(d) or ""
        outputs = _outputs(d)
        summary = _digest(sorted(outputs.items()))
        write_manifest(m, {"stage": name, "key": key, "verdict": verdict,
                           "checksum_outputs": summary,
                           **{f"file:{k}": v for k, v in outputs.items()}})
        self.report.stages.append(StageResult(name, "ran", time.perf_counter() - t0, verdict))
        self.upstream = _digest((self.upstream, summary))


def _matrix(cfg):
    return SubstitutionMatrix.load(cfg.matrix, cfg.gap) if cfg.matrix else SubstitutionMatrix.simple(gap=cfg.gap)


def run_pipeline(cfg: PipelineConfig) -> RunReport:
    """Execute every stage; a failed validation stops the run with ``ok=False``."""
    report = RunReport()
    root = cfg.out
    with run_lock(root):
        cfg.save(root / "config.txt")
        try:
            _run(cfg, _Runner(cfg, report), report)
        except (SimGraphError, OSError, ValueError) as exc:
            report.ok = False
            report.error = f"{type(exc).__name__}: {exc}"
            log.error("pipeline stopped: %s", report.error)
        write_manifest(root / "report.txt", report.to_fields())
    return report


def _run(cfg: PipelineConfig, run: _Runner, report: RunReport):
    root = cfg.out
    coo = root / "coo"
    P = cfg.partitions

    if cfg.corpus is not None:
        corpus_digest = file_sha256(cfg.corpus)

        def partition(d):
            partition_corpus(cfg.corpus, P, d)
            return f"sequences={PartitionScheme.load(d / SCHEME_FILE).vertex_count}"

        run.stage("corpus", (corpus_digest, P), partition)
        corpus = root / "corpus"

        def align(d):
            for job in enumerate_blocks(PartitionScheme.load(corpus / SCHEME_FILE), corpus, d):
                align_block(job, _matrix(cfg), cfg.min_score, cfg.max_alignments)
            (d / SCHEME_FILE).write_text((corpus / SCHEME_FILE).read_text())
            return f"blocks={P * (P + 1) // 2}"

        run.stage("coo", (cfg.min_score, cfg.max_alignments, cfg.gap,
                          file_sha256(cfg.matrix) if cfg.matrix else ""), align)
    else:
        def generate(d):
            scheme = PartitionScheme.near_equal(cfg.synthetic_vertices, P)
            generate_synthetic_coo(cfg.synthetic_vertices, cfg.synthetic_edges,
                                   WeightLaw.parse(cfg.weight_law), scheme, cfg.seed, d,
                                   skew=cfg.skew, duplicate_fraction=cfg.duplicate_fraction)
            scheme.save(d / SCHEME_FILE)
            return f"blocks={scheme.block_count}"

        run.stage("coo", (cfg.synthetic_vertices, cfg.synthetic_edges, cfg.weight_law, cfg.skew,
                          cfg.duplicate_fraction, cfg.seed, P), generate)
    scheme = PartitionScheme.load(coo / SCHEME_FILE)

    def build(d):
        metrics = BuildMetrics()
        coo_to_csc(coo, scheme, cfg.budget_bytes, cfg.workers, out_dir=d, metrics=metrics)
        write_manifest(d / "metrics.txt", metrics.to_fields())
        g = read_csc(d)
        rep = validate_csc(g, coo, scheme)
        if not rep:
            raise ValidationError(f"COO to CSC validation failed: {rep.message}",
                                  vertex=rep.first_vertex, edge=rep.first_triple)
        return f"pass edges={g.edge_count}"

    # budget and workers change memory use and speed, never the output
    run.stage("csc", (), build)

    def dedup(d):
        g, removed = dedup_max_weight(read_csc(root / "csc"))
        write_csc(g, d, {"duplicates_removed": removed})
        return f"removed={removed}"

    run.stage("dedup", (), dedup)

    def symm(d):
        g = read_csc(root / "dedup")
        s = symmetrize(g, scheme, cfg.workers)
        rep = validate_symmetric(s, symmetrize_sorted(g))
        if not rep:
            raise ValidationError(f"symmetrization validation failed: {rep.message}",
                                  vertex=rep.first_vertex)
        write_csc(s, d, {"parent_checksum": csc_checksum(root / "dedup")})
        return f"pass edges={s.edge_count}"

    run.stage("sym", (), symm)
    sym_dir = root / "sym"

    def filt(d):
        g = read_csc(sym_dir)
        whist, vhist = weight_histogram(g), vrw_histogram(g)
        specs = [resolve_spec(s, g, whist, vhist) for s in cfg.filters]
        outs = multi_filter(g, specs, scheme, cfg.workers)
        parent = csc_checksum(sym_dir)
        verdicts = []
        for spec, child in zip(specs, outs):
            rep = validate_filtered(g, child, spec)
            if not rep:
                raise ValidationError(f"filter {spec.label} validation failed: {rep.message}",
                                      vertex=rep.first_vertex, edge=rep.first_triple)
            write_csc(child, d / spec.label, {**spec.manifest_fields(), "parent_checksum": parent})
            verdicts.append(f"{spec.label}:{spec.achieved_fraction:.4f}")
        return "pass " + " ".join(verdicts)

    run.stage("filter", tuple(format_filter(s) for s in cfg.filters), filt)

    def compact(d):
        g = read_csc(sym_dir)
        out = []
        for spec in cfg.filters:
            if spec.kind != ABSOLUTE:
                continue
            src = root / "filter" / spec.label
            child = read_csc(src)
            c, rmap = remove_zero_degrees(child)
            resolved = _resolved_from_manifest(src, spec)
            rep = validate_filtered(g, c, resolved, rmap)
            if not rep:
                raise ValidationError(f"compacted {spec.label} validation failed: {rep.message}")
            (d / spec.label).mkdir()
            rmap.write_reverse(d / spec.label / REVERSE_MAP)
            write_csc(c, d / spec.label, {"parent_checksum": csc_checksum(src),
                                          "removed_vertices": rmap.old_count - rmap.new_count})
            out.append(f"{spec.label}:{c.vertex_count}")
        return "pass " + " ".join(out)

    run.stage("compact", (), compact)

    def graphs():
        yield "sym", sym_dir
        for spec in cfg.filters:
            base = "compact" if spec.kind == ABSOLUTE else "filter"
            yield spec.label, root / base / spec.label

    def comp(d):
        for name, src in graphs():
            g = read_csc(src)
            cg = compress(g, cfg.chunk_count, workers=cfg.workers)
            path = d / f"{name}.bvz"
            cg.save(path)
            back = decompress_stream(CompressedGraph.load(path))
            if not back.equals(g):
                raise ValidationError(f"{name}: compressed round trip differs")
        return "pass"

    run.stage("compressed", (cfg.chunk_count,), comp)
    report.final_artifact = root / "compressed" / "sym.bvz"

    def analyze(d):
        for name, src in graphs():
            g = read_csc(src)
            out = d / name
            out.mkdir()
            comps = A.wcc(g)
            A.write_stats(A.table_stats(g, comps), out / "stats.txt")
            for side in ("in", "out"):
                A.write_views(A.degree_views(g, side), out, f"degree_{side}")
            A.write_views(A.weight_views(g), out, "weight")
            A.write_views(comps.size_views(), out, "wcc_size")
            if g.symmetric:
                A.write_decomposition(A.degree_decomposition(g, cfg.workers), out / "decomposition.tsv")
                A.write_vrw(A.vrw_views(g), out / "vrw.tsv")
            else:
                A.write_locality(A.push_pull_locality(g), out / "locality.tsv")
        return ""

    run.stage("analysis", (), analyze)


def _resolved_from_manifest(directory: Path, spec: FilterSpec) -> FilterSpec:
    m = read_manifest(directory / "manifest.txt")
    return dataclasses.replace(spec, threshold=int(m["filter_threshold"]),
                               achieved_fraction=float(m["filter_achieved"]))


def compressed_digest(report: RunReport) -> str:
    return file_sha256(report.final_artifact) if report.final_artifact else ""


__all__ = ["LockedError", "PipelineConfig", "RunReport", "StageResult", "compressed_digest",
           "format_filter", "parse_filter", "run_pipeline"]
