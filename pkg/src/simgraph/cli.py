"""Command-line entry point. Exit codes: 0 success, 1 operation failure, 2 usage error."""
from __future__ import annotations

import argparse
import logging
import signal
import sys
import threading
from pathlib import Path

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("simgraph")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _pair(text):
    try:
        i, j = (int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected i,j, got {text!r}") from None
    return i, j


def _scheme(args, coo_dir):
    from .graph import PartitionScheme
    from .seqsim import SCHEME_FILE
    return PartitionScheme.load(args.scheme or Path(coo_dir) / SCHEME_FILE)


# ---------------------------------------------------------------------------
# commands


def cmd_partition(args):
    from .seqsim import partition_corpus
    scheme = partition_corpus(args.fasta, args.partitions, args.out)
    print(f"sequences={scheme.vertex_count}\tpartitions={scheme.partition_count}\t"
          f"blocks={scheme.block_count}")


def cmd_schedule(args):
    from .dispatch import align_jobs, write_jobs_file
    from .graph import PartitionScheme
    from .seqsim import SCHEME_FILE, enumerate_blocks
    scheme = PartitionScheme.load(Path(args.corpus) / SCHEME_FILE)
    jobs = align_jobs(enumerate_blocks(scheme, args.corpus, args.out), args.min_score,
                      args.max_alignments, args.matrix, args.gap)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    (Path(args.out) / SCHEME_FILE).write_text(scheme.to_text())
    write_jobs_file(args.jobs, jobs)
    print(f"jobs={len(jobs)}")


def cmd_align(args):
    from .graph import PartitionScheme
    from .seqsim import SCHEME_FILE, SubstitutionMatrix, align_block, enumerate_blocks
    scheme = PartitionScheme.load(Path(args.corpus) / SCHEME_FILE)
    matrix = (SubstitutionMatrix.load(args.matrix, args.gap) if args.matrix
              else SubstitutionMatrix.simple(gap=args.gap))
    jobs = enumerate_blocks(scheme, args.corpus, args.out)
    if args.block:
        jobs = [j for j in jobs if j.block in set(args.block)]
        if len(jobs) != len(set(args.block)):
            raise SystemExit(EXIT_USAGE)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    (Path(args.out) / SCHEME_FILE).write_text(scheme.to_text())
    for job in jobs:
        align_block(job, matrix, args.min_score, args.max_alignments)
    print(f"blocks={len(jobs)}")


def cmd_gen_synthetic(args):
    from .graph import PartitionScheme
    from .seqsim import SCHEME_FILE, WeightLaw, generate_synthetic_coo
    scheme = PartitionScheme.near_equal(args.vertices, args.partitions)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    generate_synthetic_coo(args.vertices, args.edges, WeightLaw.parse(args.weight_law), scheme,
                           args.seed, args.out, skew=args.skew,
                           duplicate_fraction=args.duplicates)
    scheme.save(Path(args.out) / SCHEME_FILE)
    print(f"blocks={scheme.block_count}")


def cmd_build_csc(args):
    from .builder import BuildMetrics, coo_to_csc, write_metrics
    metrics = BuildMetrics()
    g = coo_to_csc(args.coo, _scheme(args, args.coo), args.budget_bytes, args.workers,
                   out_dir=args.out, metrics=metrics)
    write_metrics(Path(args.out) / "metrics.txt", metrics)
    print(f"vertices={g.vertex_count}\tedges={g.edge_count}\tgroups={metrics.groups}\t"
          f"peak_edge_buffer_bytes={metrics.peak_edge_buffer_bytes}")


def cmd_validate_csc(args):
    from .builder import validate_csc
    from .graph import read_csc
    g = read_csc(args.csc)  # checksums against the manifest
    g.check()
    if args.coo:
        rep = validate_csc(g, args.coo, _scheme(args, args.coo))
        print(("PASS " if rep else "FAIL ") + rep.message)
        return EXIT_OK if rep else EXIT_FAIL
    print(f"PASS structure and checksums ({g.edge_count} edges)")


def cmd_dedup(args):
    from .builder import dedup_max_weight
    from .graph import csc_checksum, read_csc, write_csc
    g, removed = dedup_max_weight(read_csc(args.csc))
    write_csc(g, args.out, {"duplicates_removed": removed, "parent_checksum": csc_checksum(args.csc)})
    print(f"removed={removed}\tedges={g.edge_count}")


def cmd_transpose(args):
    from .builder import transpose
    from .graph import read_csc, write_csc
    g = transpose(read_csc(args.csc), workers=args.workers)
    write_csc(g, args.out)
    print(f"edges={g.edge_count}")


def cmd_symmetrize(args):
    from .builder import symmetrize, symmetrize_sorted, validate_symmetric
    from .graph import csc_checksum, read_csc, write_csc
    g = read_csc(args.csc)
    s = symmetrize(g, workers=args.workers)
    rep = validate_symmetric(s, symmetrize_sorted(g))
    if not rep:
        print("FAIL " + rep.message)
        return EXIT_FAIL
    write_csc(s, args.out, {"parent_checksum": csc_checksum(args.csc)})
    print(f"edges={s.edge_count}")


def cmd_filter(args):
    from .filtering import multi_filter, resolve_spec, validate_filtered
    from .graph import csc_checksum, read_csc, write_csc
    from .pipeline import parse_filter
    g = read_csc(args.csc)
    specs = [resolve_spec(parse_filter(s), g) for s in args.spec]
    parent = csc_checksum(args.csc)
    status = EXIT_OK
    for spec, child in zip(specs, multi_filter(g, specs, workers=args.workers)):
        rep = validate_filtered(g, child, spec)
        write_csc(child, Path(args.out) / spec.label, {**spec.manifest_fields(), "parent_checksum": parent})
        border = spec.threshold if spec.alpha is None else f"{spec.alpha:.4f}"
        print(f"{spec.label}\tborder={border}\tachieved={spec.achieved_fraction:.6f}\t"
              f"edges={child.edge_count}\t{'PASS' if rep else 'FAIL'}"
              + ("\twarning=far-from-target" if spec.warning else ""))
        status = status if rep else EXIT_FAIL
    return status


def cmd_compact(args):
    from .filtering import remove_zero_degrees
    from .graph import csc_checksum, read_csc, write_csc
    from .pipeline import REVERSE_MAP
    g, rmap = remove_zero_degrees(read_csc(args.csc))
    Path(args.out).mkdir(parents=True, exist_ok=True)
    rmap.write_reverse(Path(args.out) / REVERSE_MAP)
    write_csc(g, args.out, {"parent_checksum": csc_checksum(args.csc),
                            "removed_vertices": rmap.old_count - rmap.new_count})
    print(f"vertices={g.vertex_count}\tremoved={rmap.old_count - rmap.new_count}")


def cmd_compress(args):
    from .compress import compress
    from .graph import read_csc
    g = read_csc(args.csc)
    cg = compress(g, args.chunks, workers=args.workers)
    cg.save(args.out)
    raw = 8 * (g.vertex_count + 1) + 8 * g.edge_count
    print(f"bytes={cg.size_bytes}\tuncompressed_bytes={raw}\tgraph_bits={cg.graph_bits}\t"
          f"label_bits={cg.label_bits}")


def cmd_decompress(args):
    from .compress import CompressedGraph, decompress_stream
    from .graph import write_csc
    g = decompress_stream(CompressedGraph.load(args.input))
    write_csc(g, args.out)
    print(f"vertices={g.vertex_count}\tedges={g.edge_count}")


def cmd_neighbors(args):
    from .compress import CompressedGraph
    cg = CompressedGraph.load(args.input)
    for v in args.vertex:
        for n, w in cg.neighbors(v):
            print(f"{v}\t{n}\t{w}")


def cmd_analyze(args):
    from . import analytics as A
    from .graph import read_csc
    g = read_csc(args.csc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    view = args.view
    if view in ("degree", "all"):
        for side in ([args.side] if view == "degree" else ["in", "out"]):
            A.write_views(A.degree_views(g, side), out, f"degree_{side}")
    if view in ("weight", "all"):
        A.write_views(A.weight_views(g), out, "weight")
    if view in ("vrw", "all") and (g.symmetric or view == "vrw"):
        A.write_vrw(A.vrw_views(g), out / "vrw.tsv")
    if view in ("decomposition", "all") and (g.symmetric or view == "decomposition"):
        A.write_decomposition(A.degree_decomposition(g, args.workers), out / "decomposition.tsv")
    comps = A.wcc(g) if view in ("wcc", "stats", "all") else None
    if view in ("wcc", "all"):
        A.write_views(comps.size_views(), out, "wcc_size")
    if view in ("locality", "all"):
        A.write_locality(A.push_pull_locality(g), out / "locality.tsv")
    if view in ("stats", "all"):
        stats = A.table_stats(g, comps)
        A.write_stats(stats, out / "stats.txt")
        for k, v in stats.items():
            print(f"{k}={v}")
    print(f"wrote {out}", file=sys.stderr)


def cmd_serve(args):
    from .dispatch import read_jobs_file, serve
    from .dispatch.protocol import parse_address
    jobs = read_jobs_file(args.jobs) if args.jobs else []
    server = serve(jobs, parse_address(args.bind), args.lease, journal_path=args.journal)
    print(f"serving {server.address} jobs={len(server.ledger.jobs)}", flush=True)
    done = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: done.set())
    try:
        while not done.wait(0.5):
            if args.exit_when_done and all(j.state == "done" for j in server.ledger.jobs.values()):
                break
    finally:
        server.stop()


def cmd_worker(args):
    from .dispatch import executor_for, run_worker
    report = run_worker(args.dispatcher, args.step, executor_for(args.executor or args.step),
                        slots=args.slots, worker_id=args.worker_id)
    print(f"worker={report.worker_id}\tcompleted={len(report.completed)}\t"
          f"failures={len(report.failures)}")
    return EXIT_OK if report.ok else EXIT_FAIL


def cmd_run(args):
    from .pipeline import PipelineConfig, run_pipeline
    overrides = {"out": args.out, "workers": args.workers, "budget_bytes": args.budget_bytes,
                 "chunk_count": args.chunks, "seed": args.seed}
    if args.config:
        cfg = PipelineConfig.load(args.config, **overrides)
    else:
        if args.out is None:
            raise SystemExit(EXIT_USAGE)
        cfg = PipelineConfig.from_fields({k: str(v) for k, v in overrides.items() if v is not None})
    if args.dispatcher:
        _drain_align(args.dispatcher)
    report = run_pipeline(cfg)
    for s in report.stages:
        print(f"{s.name}\t{s.status}\t{s.seconds:.3f}s\t{s.verdict}")
    if not report.ok:
        print(report.error, file=sys.stderr)
        return EXIT_FAIL


def _drain_align(address):
    """Contribute this process as an align worker until the dispatcher's align step drains."""
    from .dispatch import executor_for, run_worker
    run_worker(address, "align", executor_for("align"))


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="simgraph", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(fn=fn)
        return sp

    def workers(sp):
        sp.add_argument("--workers", type=int, default=1)

    def aligner(sp):
        sp.add_argument("--min-score", type=int, default=30)
        sp.add_argument("--max-alignments", type=int, default=3)
        sp.add_argument("--gap", type=int, default=-2)
        sp.add_argument("--matrix", help="20x20 substitution matrix file")

    sp = add("partition", cmd_partition, "split a FASTA corpus into P partitions")
    sp.add_argument("--fasta", required=True)
    sp.add_argument("-P", "--partitions", type=int, required=True)
    sp.add_argument("--out", required=True)

    sp = add("schedule", cmd_schedule, "write the align job file for a dispatcher")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True, help="COO block directory the jobs write into")
    sp.add_argument("--jobs", required=True)
    aligner(sp)

    sp = add("align", cmd_align, "align partition blocks locally")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--block", type=_pair, action="append", help="i,j (repeatable; default all)")
    aligner(sp)

    sp = add("gen-synthetic", cmd_gen_synthetic, "write synthetic COO blocks")
    sp.add_argument("--vertices", type=int, required=True)
    sp.add_argument("--edges", type=int, required=True)
    sp.add_argument("-P", "--partitions", type=int, default=4)
    sp.add_argument("--weight-law", default="powerlaw:low=98,high=634925,exponent=2.5")
    sp.add_argument("--skew", type=float, default=0.8)
    sp.add_argument("--duplicates", type=float, default=0.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)

    sp = add("build-csc", cmd_build_csc, "convert COO blocks to CSC under a memory budget")
    sp.add_argument("--coo", required=True)
    sp.add_argument("--scheme")
    sp.add_argument("--out", required=True)
    sp.add_argument("--budget-bytes", type=int, default=64 << 20)
    workers(sp)

    sp = add("validate-csc", cmd_validate_csc, "check a CSC directory (and against COO blocks)")
    sp.add_argument("--csc", required=True)
    sp.add_argument("--coo")
    sp.add_argument("--scheme")

    for name, fn, help_ in (("dedup", cmd_dedup, "keep the max weight of repeated edges"),
                            ("transpose", cmd_transpose, "reverse every edge"),
                            ("symmetrize", cmd_symmetrize, "union with the transpose"),
                            ("compact", cmd_compact, "drop zero-degree vertices and renumber")):
        sp = add(name, fn, help_)
        sp.add_argument("--csc", required=True)
        sp.add_argument("--out", required=True)
        workers(sp)

    sp = add("filter", cmd_filter, "single-pass multi-target edge filtering")
    sp.add_argument("--csc", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--spec", action="append", required=True,
                    help="kind:target[:label], kind in absolute_weight|vertex_relative|abs|vrw")
    workers(sp)

    sp = add("compress", cmd_compress, "gamma-code a CSC graph")
    sp.add_argument("--csc", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--chunks", type=int, default=1)
    sp.add_argument("--workers", type=int, default=None)

    sp = add("decompress", cmd_decompress, "rebuild CSC from a compressed container")
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True)

    sp = add("neighbors", cmd_neighbors, "random access into a compressed container")
    sp.add_argument("--input", required=True)
    sp.add_argument("--vertex", type=int, action="append", required=True)

    sp = add("analyze", cmd_analyze, "emit statistics and distribution views as TSV")
    sp.add_argument("view", choices=["degree", "weight", "vrw", "decomposition", "wcc",
                                     "locality", "stats", "all"])
    sp.add_argument("--csc", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--side", choices=["in", "out", "total"], default="in")
    workers(sp)

    sp = add("serve", cmd_serve, "run the job dispatcher")
    sp.add_argument("--jobs")
    sp.add_argument("--bind", default="127.0.0.1:7700")
    sp.add_argument("--lease", type=float, default=60.0)
    sp.add_argument("--journal", default="dispatcher.journal")
    sp.add_argument("--exit-when-done", action="store_true")

    sp = add("worker", cmd_worker, "acquire and execute jobs from a dispatcher")
    sp.add_argument("--dispatcher", required=True)
    sp.add_argument("--step", required=True)
    sp.add_argument("--slots", type=int, default=1)
    sp.add_argument("--executor", help="executor name (default: the step name)")
    sp.add_argument("--worker-id")

    sp = add("run", cmd_run, "run the whole pipeline")
    sp.add_argument("--config")
    sp.add_argument("--out")
    sp.add_argument("--workers", type=int)
    sp.add_argument("--budget-bytes", type=int)
    sp.add_argument("--chunks", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--dispatcher", help="drain the dispatcher's align step before running")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    from .errors import SimGraphError
    try:
        rc = args.fn(args)
    except SystemExit:
        raise
    except (SimGraphError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK if rc is None else rc


if __name__ == "__main__":
    sys.exit(main())
