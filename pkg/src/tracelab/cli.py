"""tracelab 命令列：圖樣分析、漫步、Monte Carlo 掃描、t_half 搜尋、指數擬合與精確計算。"""

import argparse
import json
import re
import sys
from pathlib import Path
from typing import Sequence

from src.api.schemas import ExperimentConfig, OracleRecord
from src.core.logger import get_logger
from src.core.run_repository import RunRepository
from src.tracelab.experiment import (
    analyze_pattern,
    compare_with_static,
    estimate_copy_count,
    estimate_forest_strategies,
    fit_threshold_exponent,
    halftime_scan,
    load_config,
    read_halftime_points,
    sweep,
    time_set_statistics,
    write_halftime_csv,
    write_sweep_csv,
)
from src.tracelab.graph import Graph, complete_graph, degree_stats, read_edge_list, sample_gnm, sample_gnp
from src.tracelab.oracle import (
    count_time_sets_formula,
    defective_fraction,
    enumerate_time_sets,
    exact_containment_probability,
    joint_containment_probability,
    mixing_time,
    worst_case_mixing_profile,
)
from src.tracelab.pattern import parse_pattern
from src.tracelab.selftest import all_passed, run_selftest, summarize
from src.tracelab.walk import STREAM_THRESHOLD, dump_steps, make_rng, run_walk, stream_walk, summarize_walk

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_SELFTEST = 3


class UsageError(Exception):
    """命令列參數錯誤（exit 1）。"""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


# ----------------------------------------------------------------------
# 參數解析工具
# ----------------------------------------------------------------------
def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in re.split(r"[,\s]+", text.strip()) if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"無法解析整數清單：{text!r}")


def _pairs(text: str) -> list[tuple[int, int]]:
    pairs = []
    for item in re.split(r"[,;]+", text):
        item = item.strip()
        if not item:
            continue
        match = re.fullmatch(r"(\d+)\s*[-\s]\s*(\d+)", item)
        if not match:
            raise argparse.ArgumentTypeError(f"無法解析邊：{item!r}")
        pairs.append((int(match.group(1)), int(match.group(2))))
    return pairs


def _graph_from_spec(spec: str, seed: int) -> Graph:
    """complete:N、gnp:N:P、gnm:N:M。"""
    parts = spec.split(":")
    try:
        if parts[0] == "complete" and len(parts) == 2:
            return complete_graph(int(parts[1]))
        if parts[0] == "gnp" and len(parts) == 3:
            return sample_gnp(int(parts[1]), float(parts[2]), make_rng(seed))
        if parts[0] == "gnm" and len(parts) == 3:
            return sample_gnm(int(parts[1]), int(parts[2]), make_rng(seed))
    except ValueError as exc:
        raise UsageError(f"無法解析底圖 {spec!r}：{exc}") from exc
    raise UsageError(f"未知的底圖格式：{spec!r}（complete:N、gnp:N:P 或 gnm:N:M）")


def _host_graph(args: argparse.Namespace) -> Graph:
    if args.graph_file:
        return read_edge_list(args.graph_file)
    if args.graph:
        return _graph_from_spec(args.graph, args.graph_seed)
    raise UsageError("需要 --graph 或 --graph-file。")


def _add_graph_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--graph", help="complete:N、gnp:N:P 或 gnm:N:M")
    parser.add_argument("--graph-file", type=Path, help="邊清單檔（首行 'n m'）")
    parser.add_argument("--graph-seed", type=int, default=0)


def _add_point_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--pattern", required=True)
    parser.add_argument("--base", choices=["complete", "gnp", "gnm"], default="complete")
    parser.add_argument("--p", type=float)
    parser.add_argument("--m", type=int)
    parser.add_argument("--trials", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--fixed-graph", action="store_true", help="所有 trial 共用同一張底圖（quenched）")
    parser.add_argument("--buffer-c", type=float, help="B = ceil(c·ln n) 的 c；預設取 TRACELAB_BUFFER_C")


def _point_config(args: argparse.Namespace, n_list: list[int], **extra) -> ExperimentConfig:
    return ExperimentConfig(
        base_model=args.base,
        n_list=n_list,
        p=args.p,
        m=args.m,
        pattern=args.pattern,
        trials=args.trials,
        master_seed=args.seed,
        workers=args.workers or 1,
        fixed_graph=args.fixed_graph,
        buffer_c=args.buffer_c,
        **extra,
    )


def _print_json(payload) -> None:
    print(json.dumps(payload, ensure_ascii=False, indent=2, default=str))


# ----------------------------------------------------------------------
# 子命令
# ----------------------------------------------------------------------
def cmd_analyze(args: argparse.Namespace) -> int:
    analysis = analyze_pattern(parse_pattern(args.pattern))
    print(analysis.model_dump_json(indent=2))
    return EXIT_OK


def cmd_walk(args: argparse.Namespace) -> int:
    g = _host_graph(args)
    rng = make_rng(args.seed)
    stream = args.stream or args.steps > STREAM_THRESHOLD
    if stream:
        if args.dump_steps:
            raise UsageError("串流模式不保留步序列，無法搭配 --dump-steps。")
        summary = stream_walk(g, args.steps, rng).summary()
    else:
        walk = run_walk(g, args.steps, rng)
        if args.dump_steps:
            dump_steps(walk, args.dump_steps)
        summary = summarize_walk(walk)
    payload = summary.model_dump()
    if not g.is_complete:
        stats = degree_stats(g)
        payload["base_degrees"] = {"min": stats.min_degree, "max": stats.max_degree, "mean": stats.mean_degree}
    payload["mode"] = "stream" if stream else "memory"
    _print_json(payload)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.trials is not None:
        cfg = cfg.model_copy(update={"trials": args.trials})
    if args.seed is not None:
        cfg = cfg.model_copy(update={"master_seed": args.seed})
    rows = sweep(cfg, workers=args.workers)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        write_sweep_csv(cfg, rows, fh)
    failed = sum(row.error is not None for row in rows)
    if args.store:
        run_id = RunRepository().save_run(cfg.model_dump(), [row.model_dump() for row in rows])
        print(f"stored run {run_id}")
    logger.info("Sweep written", extra={"out": str(args.out), "rows": len(rows), "failed": failed})
    print(f"{len(rows)} rows written to {args.out} ({failed} failed)")
    return EXIT_OK


def cmd_halftime(args: argparse.Namespace) -> int:
    if args.config:
        cfg = load_config(args.config)
    else:
        if not args.n_list or not args.pattern:
            raise UsageError("需要 --config，或同時給 --pattern 與 --n-list。")
        cfg = _point_config(args, args.n_list, search="halftime", rel_tol=args.rel_tol)
    results = halftime_scan(cfg, workers=args.workers)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        write_halftime_csv(cfg, results, fh)
    for res in results:
        print(f"n={res.n} t_half={res.t_half} bracket=[{res.t_low}, {res.t_high}]")
    return EXIT_OK


def cmd_fit(args: argparse.Namespace) -> int:
    with open(args.input, encoding="utf-8") as fh:
        points = read_halftime_points(fh)
    fit = fit_threshold_exponent(points)
    print(fit.model_dump_json(indent=2))
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = _point_config(args, [args.n])
    walk_estimate, static_estimate = compare_with_static(cfg, args.n, args.t, args.workers)
    payload = {"trace": walk_estimate.model_dump(), "static": static_estimate.model_dump()}
    if args.segmented:
        components, segmented = estimate_forest_strategies(cfg, args.n, args.t, args.workers)
        payload["components"] = components.model_dump()
        payload["segmented"] = segmented.model_dump()
    _print_json(payload)
    return EXIT_OK


def cmd_copies(args: argparse.Namespace) -> int:
    cfg = _point_config(args, [args.n])
    print(estimate_copy_count(cfg, args.n, args.t, args.workers).model_dump_json(indent=2))
    return EXIT_OK


def cmd_timesets(args: argparse.Namespace) -> int:
    cfg = _point_config(args, [args.n])
    print(time_set_statistics(cfg, args.n, args.t, args.workers).model_dump_json(indent=2))
    return EXIT_OK


def cmd_oracle(args: argparse.Namespace) -> int:
    if args.oracle_command == "containment":
        g = _host_graph(args)
        profile_value = exact_containment_probability(g, args.edges, args.t)
        record = OracleRecord(
            inputs={"n": g.n, "edges": args.edges, "t": args.t}, value=profile_value, method="dp"
        )
    elif args.oracle_command == "joint":
        g = _host_graph(args)
        both, a, b = joint_containment_probability(g, args.edges_a, args.edges_b, args.t)
        record = OracleRecord(
            inputs={"n": g.n, "edges_a": args.edges_a, "edges_b": args.edges_b, "t": args.t},
            value={"both": both, "a": a, "b": b, "product": a * b},
            method="dp",
        )
    elif args.oracle_command == "mixing":
        g = _host_graph(args)
        profile = worst_case_mixing_profile(g, args.steps)
        record = OracleRecord(
            inputs={"n": g.n, "steps": args.steps, "eps": args.eps},
            value={"tv": profile, "mixing_time": mixing_time(g, args.eps, args.steps)},
            method="matrix",
        )
    else:
        inputs = {"t": args.t, "w": args.w, "r": args.r, "buffer": args.buffer}
        formula = count_time_sets_formula(args.t, args.w, args.r)
        value = {"count": formula}
        method = "formula"
        if args.enumerate:
            counts = enumerate_time_sets(args.t, args.w, args.r, args.buffer)
            value.update(enumerated=counts.count, defective_histogram=counts.histogram)
            method = "enum"
        if formula:
            value["defective_fraction"] = str(defective_fraction(args.t, args.w, args.r, args.buffer))
        record = OracleRecord(inputs=inputs, value=value, method=method)
    print(record.model_dump_json(indent=2))
    return EXIT_OK


def cmd_selftest(args: argparse.Namespace) -> int:
    results = run_selftest(full=args.full)
    print(summarize(results))
    return EXIT_OK if all_passed(results) else EXIT_SELFTEST


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("src.api.main:app", host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tracelab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("analyze", help="圖樣的 k、ℓ、m₀、ρ、θ、|Aut| 與預測門檻")
    p.add_argument("pattern")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("walk", help="在底圖上跑一次惰性隨機漫步")
    _add_graph_arguments(p)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dump-steps", type=Path)
    p.add_argument("--stream", action="store_true")
    p.set_defaults(func=cmd_walk)

    p = sub.add_parser("sweep", help="依 TOML 設定掃描 (n, t) 格點")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--workers", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--store", action="store_true", help="同時存入 SQLite")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("halftime", help="各 n 的中位出現時間 t_half")
    p.add_argument("--config", type=Path)
    p.add_argument("--pattern")
    p.add_argument("--base", choices=["complete", "gnp", "gnm"], default="complete")
    p.add_argument("--p", type=float)
    p.add_argument("--m", type=int)
    p.add_argument("--n-list", type=_int_list)
    p.add_argument("--trials", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rel-tol", type=float, default=0.05)
    p.add_argument("--workers", type=int)
    p.add_argument("--fixed-graph", action="store_true")
    p.add_argument("--buffer-c", type=float)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_halftime)

    p = sub.add_parser("fit", help="log t_half 對 log n 的斜率")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("compare", help="軌跡與同邊數靜態 G(n, m) 的包含機率")
    _add_point_arguments(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--segmented", action="store_true", help="另估各分量不相交嵌入的兩種找法（整條軌跡回溯、分段）")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("copies", help="軌跡中副本數的平均")
    _add_point_arguments(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--t", type=int, required=True)
    p.set_defaults(func=cmd_copies)

    p = sub.add_parser("timesets", help="所找到副本的命中時間集合 W 的 run 統計")
    _add_point_arguments(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--t", type=int, required=True)
    p.set_defaults(func=cmd_timesets)

    p = sub.add_parser("oracle", help="精確計算")
    oracle_sub = p.add_subparsers(dest="oracle_command", required=True, parser_class=_Parser)
    o = oracle_sub.add_parser("containment")
    _add_graph_arguments(o)
    o.add_argument("--edges", type=_pairs, required=True)
    o.add_argument("--t", type=int, required=True)
    o = oracle_sub.add_parser("joint")
    _add_graph_arguments(o)
    o.add_argument("--edges-a", type=_pairs, required=True)
    o.add_argument("--edges-b", type=_pairs, required=True)
    o.add_argument("--t", type=int, required=True)
    o = oracle_sub.add_parser("mixing")
    _add_graph_arguments(o)
    o.add_argument("--steps", type=int, default=20)
    o.add_argument("--eps", type=float, default=0.01)
    o = oracle_sub.add_parser("wsets")
    o.add_argument("--t", type=int, required=True)
    o.add_argument("--w", type=int, required=True)
    o.add_argument("--r", type=int, required=True)
    o.add_argument("--buffer", type=int, default=1)
    o.add_argument("--enumerate", action="store_true")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("selftest", help="執行不變量測試組")
    p.add_argument("--full", action="store_true")
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("serve", help="啟動 HTTP 服務")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=9000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, RuntimeError, OSError, MemoryError) as exc:
        logger.error("Command failed", extra={"argv": list(argv or sys.argv[1:]), "error": str(exc)})
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
