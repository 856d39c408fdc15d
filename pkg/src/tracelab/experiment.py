import csv
import hashlib
import math

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterator, Sequence, TextIO

import numpy as np
from scipy import stats

from src.api.schemas import (
    CopyCountEstimate,
    ExperimentConfig,
    HalfTimeResult,
    PatternAnalysis,
    ProbEstimate,
    SweepRow,
    ThresholdFit,
    ThresholdPredictionModel,
    TimeSetSummary,
)
from src.core.config import get_settings
from src.core.errors import ConvergenceError, InvalidArgumentError
from src.core.logger import get_logger
from src.tracelab.graph import Graph, complete_graph, pair_count, sample_gnm, sample_gnp
from src.tracelab.pattern import (
    BASE_MODELS,
    Pattern,
    ThresholdPrediction,
    expected_copies_order,
    parse_pattern,
    predicted_threshold,
    static_threshold,
    trail_decomposition,
)
from src.tracelab.search import contains, count_copies, find_disjoint_copies, find_disjoint_copies_segmented
from src.tracelab.walk import (
    WalkRecord,
    buffer_length,
    hit_times,
    make_rng,
    run_walk_block,
    run_walk_union_block,
    trace,
)

logger = get_logger(__name__, log_type="experiment")

CSV_COLUMNS = (
    "base", "n", "p", "t", "pattern", "trials", "successes",
    "p_hat", "ci_low", "ci_high", "master_seed", "mode",
)
HALFTIME_COLUMNS = ("base", "n", "pattern", "t_half", "t_low", "t_high", "p_low", "p_high", "trials", "master_seed")
CONFIDENCE = 0.95
# 不相交聯集一次推進的鄰接項上限
UNION_ENTRY_LIMIT = 1 << 24


# ----------------------------------------------------------------------
# 種子與信賴區間
# ----------------------------------------------------------------------
def point_key(cfg: ExperimentConfig, n: int) -> str:
    """不含 t 的點位鍵；同一 trial 在不同 t 下共用亂數，Γ_t 隨 t 單調成長。"""
    return f"{cfg.base_model}|{n}|{cfg.model_parameter()}|{cfg.pattern}|{cfg.mode}"


def derive_seed(master_seed: int, key: str, index: int | str) -> int:
    digest = hashlib.blake2b(f"{master_seed}:{key}:{index}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def wilson_interval(successes: int, trials: int, confidence: float = CONFIDENCE) -> tuple[float, float]:
    if trials < 1:
        raise InvalidArgumentError("trials 必須 ≥ 1。")
    if not 0 <= successes <= trials:
        raise InvalidArgumentError("successes 必須落在 [0, trials]。")
    ci = stats.binomtest(successes, trials).proportion_ci(confidence_level=confidence, method="wilson")
    p_hat = successes / trials
    return max(0.0, min(float(ci.low), p_hat)), min(1.0, max(float(ci.high), p_hat))


def wilson_sigma(successes: int, trials: int) -> float:
    """Wilson 區間半寬換算的標準差。"""
    low, high = wilson_interval(successes, trials)
    return (high - low) / (2 * stats.norm.ppf(0.5 + CONFIDENCE / 2))


def resolve_workers(cfg: ExperimentConfig, workers: int | None = None) -> int:
    if workers is not None:
        return max(1, workers)
    settings = get_settings()
    if settings.threads_overridden:
        return settings.threads
    return cfg.workers


# ----------------------------------------------------------------------
# 試驗區塊
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class BlockTask:
    """一段連續的 trial 編號 [start, stop)；只攜帶可序列化的資料。"""

    config_json: str
    n: int
    t: int
    start: int
    stop: int
    measure: str = "contains"


@lru_cache(maxsize=16)
def _pattern(spec: str) -> Pattern:
    return parse_pattern(spec)


def sample_base_graph(cfg: ExperimentConfig, n: int, rng: np.random.Generator) -> Graph:
    if cfg.base_model == "complete":
        return complete_graph(n)
    if cfg.base_model == "gnp":
        return sample_gnp(n, cfg.p, rng)
    return sample_gnm(n, cfg.m, rng)


@lru_cache(maxsize=4)
def _quenched_graph(config_json: str, n: int) -> Graph:
    cfg = ExperimentConfig.model_validate_json(config_json)
    rng = make_rng(derive_seed(cfg.master_seed, point_key(cfg, n), "graph"))
    g = sample_base_graph(cfg, n, rng)
    logger.info("Quenched base graph sampled", extra={"n": n, "m": g.edge_count, "base": cfg.base_model})
    return g


def _flush(batch: list[tuple[Graph, np.random.Generator]], t: int) -> Iterator[tuple[Graph, np.ndarray]]:
    steps = run_walk_union_block([g for g, _ in batch], t, [rng for _, rng in batch])
    yield from zip((g for g, _ in batch), steps)


def _walk_block(cfg: ExperimentConfig, n: int, t: int, rngs: list[np.random.Generator]) -> Iterator[tuple[Graph, np.ndarray]]:
    if cfg.base_model == "complete" or cfg.fixed_graph:
        g = complete_graph(n) if cfg.base_model == "complete" else _quenched_graph(cfg.model_dump_json(), n)
        for row in run_walk_block(g, t, rngs):
            yield g, row
        return

    # annealed：每個 trial 先以自己的亂數取樣底圖，再走漫步
    batch: list[tuple[Graph, np.random.Generator]] = []
    entries = 0
    for rng in rngs:
        g = sample_base_graph(cfg, n, rng)
        batch.append((g, rng))
        entries += g.indices.size
        if entries >= UNION_ENTRY_LIMIT:
            yield from _flush(batch, t)
            batch, entries = [], 0
    if batch:
        yield from _flush(batch, t)


def _measure_contains(trace_graph: Graph, p: Pattern) -> float:
    return 1.0 if contains(trace_graph, p) is not None else 0.0


def _measure_copies(trace_graph: Graph, p: Pattern) -> float:
    return float(count_copies(trace_graph, p))


def _measure_components(trace_graph: Graph, p: Pattern) -> float:
    return 1.0 if find_disjoint_copies(trace_graph, p.components()) is not None else 0.0


_MEASURES = {"contains": _measure_contains, "copies": _measure_copies, "components": _measure_components}


def run_block(task: BlockTask) -> list[float]:
    """執行一個區塊的 trial，依 trial 編號順序回傳每個 trial 的量測值。"""
    cfg = ExperimentConfig.model_validate_json(task.config_json)
    p = _pattern(cfg.pattern)
    key = point_key(cfg, task.n)
    rngs = [make_rng(derive_seed(cfg.master_seed, key, i)) for i in range(task.start, task.stop)]

    if task.measure == "static":
        m = min(task.t, pair_count(task.n))
        return [_measure_contains(sample_gnm(task.n, m, rng), p) for rng in rngs]
    if task.measure == "segmented":
        components = p.components()
        return [
            1.0 if find_disjoint_copies_segmented(WalkRecord(g, row), components) is not None else 0.0
            for g, row in _walk_block(cfg, task.n, task.t, rngs)
        ]
    measure = _MEASURES[task.measure]
    return [measure(trace(WalkRecord(g, row)), p) for g, row in _walk_block(cfg, task.n, task.t, rngs)]


def _check_point(cfg: ExperimentConfig, n: int, t: int) -> Pattern:
    p = _pattern(cfg.pattern)
    if n < p.k:
        raise InvalidArgumentError(f"n={n} 小於圖樣頂點數 k={p.k}。")
    if t < 0:
        raise InvalidArgumentError("步數 t 不可為負數。")
    if cfg.base_model == "gnm" and cfg.m > pair_count(n):
        raise InvalidArgumentError(f"m={cfg.m} 超過 C({n}, 2)。")
    return p


def point_buffer(cfg: ExperimentConfig, n: int) -> int:
    return buffer_length(n, cfg.buffer_c)


def run_time_set_block(task: BlockTask) -> list[tuple[int, int, int] | None]:
    """每個 trial 在軌跡中找一份 H，回傳其命中時間集合的 (w, r, q)；未包含 H 時為 None。"""
    cfg = ExperimentConfig.model_validate_json(task.config_json)
    p = _pattern(cfg.pattern)
    key = point_key(cfg, task.n)
    rngs = [make_rng(derive_seed(cfg.master_seed, key, i)) for i in range(task.start, task.stop)]
    buffer = point_buffer(cfg, task.n)

    values: list[tuple[int, int, int] | None] = []
    for g, row in _walk_block(cfg, task.n, task.t, rngs):
        walk = WalkRecord(g, row)
        embedding = contains(trace(walk), p)
        if embedding is None:
            values.append(None)
            continue
        times = hit_times(walk, [(embedding.image[u], embedding.image[v]) for u, v in p.edges], buffer)
        values.append((times.w, times.r, times.q))
    return values


def _map_blocks(cfg: ExperimentConfig, n: int, t: int, measure: str, workers: int | None, runner: Callable[[BlockTask], list]) -> list:
    """切成固定大小的區塊並行執行；結果依 trial 編號歸併，與 worker 數無關。"""
    _check_point(cfg, n, t)
    block = get_settings().block_size
    config_json = cfg.model_dump_json()
    tasks = [
        BlockTask(config_json, n, t, start, min(start + block, cfg.trials), measure)
        for start in range(0, cfg.trials, block)
    ]
    workers = resolve_workers(cfg, workers)
    if workers == 1 or len(tasks) == 1:
        chunks = [runner(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            chunks = list(pool.map(runner, tasks))
    return [value for chunk in chunks for value in chunk]


def collect_trials(cfg: ExperimentConfig, n: int, t: int, measure: str = "contains", workers: int | None = None) -> list[float]:
    return _map_blocks(cfg, n, t, measure, workers, run_block)


# ----------------------------------------------------------------------
# 估計
# ----------------------------------------------------------------------
def _estimate_from_values(cfg: ExperimentConfig, n: int, t: int, values: Sequence[float], base: str, param, mode: str) -> ProbEstimate:
    successes = int(sum(values))
    low, high = wilson_interval(successes, cfg.trials)
    return ProbEstimate(
        base=base,
        n=n,
        p=param,
        t=t,
        pattern=cfg.pattern,
        trials=cfg.trials,
        successes=successes,
        p_hat=successes / cfg.trials,
        ci_low=low,
        ci_high=high,
        master_seed=cfg.master_seed,
        mode=mode,
    )


def estimate_probability(cfg: ExperimentConfig, n: int, t: int, workers: int | None = None) -> ProbEstimate:
    """Pr[H ⊆ Γ_t] 的 Monte Carlo 估計。"""
    values = collect_trials(cfg, n, t, "contains", workers)
    estimate = _estimate_from_values(cfg, n, t, values, cfg.base_model, cfg.model_parameter(), cfg.mode)
    logger.info(
        "Containment probability estimated",
        extra={
            "base": cfg.base_model,
            "n": n,
            "t": t,
            "pattern": cfg.pattern,
            "successes": estimate.successes,
            "trials": estimate.trials,
        },
    )
    return estimate


def estimate_static_probability(cfg: ExperimentConfig, n: int, t: int, workers: int | None = None) -> ProbEstimate:
    """Pr[H ⊆ G(n, m)]，m = min(t, C(n,2))：邊數相同的靜態隨機圖。"""
    values = collect_trials(cfg, n, t, "static", workers)
    m = min(t, pair_count(n))
    return _estimate_from_values(cfg, n, t, values, "gnm", m, "annealed")


def compare_with_static(cfg: ExperimentConfig, n: int, t: int, workers: int | None = None) -> tuple[ProbEstimate, ProbEstimate]:
    return estimate_probability(cfg, n, t, workers), estimate_static_probability(cfg, n, t, workers)


def estimate_forest_strategies(cfg: ExperimentConfig, n: int, t: int, workers: int | None = None) -> tuple[ProbEstimate, ProbEstimate]:
    """
    各帶邊分量互不相交地嵌入的兩種找法：
    components 在整條軌跡中回溯搜尋，segmented 把 [t] 等分成 z 段，第 i 個分量只在第 i 段裡找。
    同一 trial 上 segmented 成功時 components 必然成功。
    """
    estimates = []
    for measure in ("components", "segmented"):
        values = collect_trials(cfg, n, t, measure, workers)
        estimates.append(_estimate_from_values(cfg, n, t, values, cfg.base_model, cfg.model_parameter(), cfg.mode))
    logger.info(
        "Forest strategies compared",
        extra={
            "n": n,
            "t": t,
            "pattern": cfg.pattern,
            "components": estimates[0].successes,
            "segmented": estimates[1].successes,
        },
    )
    return estimates[0], estimates[1]


def estimate_copy_count(cfg: ExperimentConfig, n: int, t: int, workers: int | None = None) -> CopyCountEstimate:
    p = _check_point(cfg, n, t)
    values = np.asarray(collect_trials(cfg, n, t, "copies", workers))
    stderr = float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    return CopyCountEstimate(
        n=n,
        t=t,
        pattern=cfg.pattern,
        trials=cfg.trials,
        mean_copies=float(values.mean()),
        stderr=stderr,
        expected_order=expected_copies_order(n, t, p.k, p.ell, p.rho),
    )


def time_set_statistics(cfg: ExperimentConfig, n: int, t: int, workers: int | None = None) -> TimeSetSummary:
    """
    包含 H 的 trial 中，所找到副本的命中時間集合 W 的平均 w、r 與 defective run 數 q。
    B = ceil(c·ln n)，c 取 cfg.buffer_c（未設定時取 TRACELAB_BUFFER_C）。
    coverage_violations 計算 r(W) < ℓ + ρ − |W| 的 trial 數，應為 0。
    """
    p = _check_point(cfg, n, t)
    buffer = point_buffer(cfg, n)
    found = [v for v in _map_blocks(cfg, n, t, "timesets", workers, run_time_set_block) if v is not None]
    means: dict[str, float | int] = {}
    if found:
        w, r, q = np.asarray(found, dtype=np.float64).T
        means = {
            "mean_w": float(w.mean()),
            "mean_r": float(r.mean()),
            "mean_q": float(q.mean()),
            "coverage_violations": int(np.count_nonzero(r < p.ell + p.rho - w)),
        }
    summary = TimeSetSummary(
        n=n, t=t, pattern=cfg.pattern, trials=cfg.trials, buffer=buffer, contained=len(found), **means
    )
    logger.info(
        "Time-set statistics collected",
        extra={"n": n, "t": t, "pattern": cfg.pattern, "buffer": buffer, "contained": summary.contained},
    )
    return summary


# ----------------------------------------------------------------------
# t_half 搜尋與指數擬合
# ----------------------------------------------------------------------
def find_half_time(
    cfg: ExperimentConfig,
    n: int,
    rel_tol: float | None = None,
    workers: int | None = None,
    max_doublings: int = 48,
    max_bisections: int = 64,
) -> HalfTimeResult:
    """
    指數括區後二分，括區維持 p_low < 0.5 ≤ p_high。
    候選點的 Wilson 區間包含 0.5、括區寬度 ≤ rel_tol·t，或某點估計恰為 0.5 時停止；
    後者即以該點為 t_half。
    """
    rel_tol = cfg.rel_tol if rel_tol is None else rel_tol
    if rel_tol <= 0:
        raise InvalidArgumentError("rel_tol 必須為正數。")
    if _pattern(cfg.pattern).ell < 1:
        raise InvalidArgumentError("空圖樣沒有出現時間。")

    evaluations: dict[int, ProbEstimate] = {}

    def evaluate(t: int) -> ProbEstimate:
        evaluations[t] = estimate_probability(cfg, n, t, workers)
        return evaluations[t]

    # Γ_0 沒有邊，p(0) = 0
    t_low, p_low = 0, 0.0
    t_high = 1
    for _ in range(max_doublings):
        estimate = evaluate(t_high)
        if estimate.p_hat >= 0.5:
            break
        t_low, p_low = t_high, estimate.p_hat
        t_high *= 2
    else:
        raise ConvergenceError("指數括區未能越過 0.5", bracket=(t_low, t_high))
    p_high = evaluations[t_high].p_hat

    for _ in range(max_bisections):
        if p_high == 0.5 or t_high - t_low <= max(1, rel_tol * t_high):
            break
        mid = (t_low + t_high) // 2
        estimate = evaluate(mid)
        if estimate.p_hat < 0.5:
            t_low, p_low = mid, estimate.p_hat
        else:
            t_high, p_high = mid, estimate.p_hat
        if estimate.ci_low <= 0.5 <= estimate.ci_high:
            break
    else:
        raise ConvergenceError("二分搜尋未在迭代上限內收斂", bracket=(t_low, t_high))

    candidates = [t for t in evaluations if t_low <= t <= t_high]
    t_half = min(candidates, key=lambda t: (abs(evaluations[t].p_hat - 0.5), t))
    logger.info(
        "Half time located",
        extra={"n": n, "pattern": cfg.pattern, "t_half": t_half, "bracket": [t_low, t_high], "evaluations": len(evaluations)},
    )
    return HalfTimeResult(
        n=n,
        t_half=t_half,
        t_low=t_low,
        t_high=t_high,
        p_low=p_low,
        p_high=p_high,
        evaluations=[evaluations[t] for t in sorted(evaluations)],
    )


def fit_threshold_exponent(points: Sequence[tuple[int, float]]) -> ThresholdFit:
    """log t_half 對 log n 的普通最小平方法。"""
    if len(points) < 3:
        raise InvalidArgumentError(f"擬合至少需要 3 個點，收到 {len(points)} 個。")
    ns = np.array([n for n, _ in points], dtype=float)
    ts = np.array([t for _, t in points], dtype=float)
    if np.any(ns <= 0) or np.any(ts <= 0):
        raise InvalidArgumentError("n 與 t_half 必須為正數。")
    if np.all(ns == ns[0]):
        raise InvalidArgumentError("所有 n 相同，無法擬合斜率。")
    result = stats.linregress(np.log(ns), np.log(ts))
    if not math.isfinite(result.slope):
        raise InvalidArgumentError("擬合斜率不是有限值。")
    return ThresholdFit(
        points=[(int(n), float(t)) for n, t in points],
        slope=float(result.slope),
        intercept=float(result.intercept),
        stderr=float(result.stderr),
    )


def halftime_scan(cfg: ExperimentConfig, workers: int | None = None) -> list[HalfTimeResult]:
    return [find_half_time(cfg, n, workers=workers) for n in sorted(cfg.n_list)]


# ----------------------------------------------------------------------
# 掃描與輸出
# ----------------------------------------------------------------------
def sweep(cfg: ExperimentConfig, workers: int | None = None) -> list[SweepRow]:
    """每個 (n, t) 格點一列，依 n 再依 t 排序；單點錯誤記在該列並繼續。"""
    if not cfg.t_list:
        raise InvalidArgumentError("掃描需要 t_list。")
    rows: list[SweepRow] = []
    for n in sorted(cfg.n_list):
        for t in sorted(cfg.t_list):
            try:
                rows.append(SweepRow(n=n, t=t, estimate=estimate_probability(cfg, n, t, workers)))
            except (ValueError, RuntimeError) as exc:
                logger.warning("Sweep point failed", extra={"n": n, "t": t, "error": str(exc)})
                rows.append(SweepRow(n=n, t=t, error=str(exc)))
    return rows


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def _param_text(param: float | int | None) -> str:
    if param is None:
        return ""
    return str(param)


def write_sweep_csv(cfg: ExperimentConfig, rows: Sequence[SweepRow], out: TextIO) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        est = row.estimate
        if est is None:
            writer.writerow([
                cfg.base_model, row.n, _param_text(cfg.model_parameter()), row.t, cfg.pattern,
                cfg.trials, "", "", "", "", cfg.master_seed, cfg.mode,
            ])
            continue
        writer.writerow([
            est.base, est.n, _param_text(est.p), est.t, est.pattern, est.trials, est.successes,
            _fmt(est.p_hat), _fmt(est.ci_low), _fmt(est.ci_high), est.master_seed, est.mode,
        ])


def write_halftime_csv(cfg: ExperimentConfig, results: Sequence[HalfTimeResult], out: TextIO) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(HALFTIME_COLUMNS)
    for res in results:
        writer.writerow([
            cfg.base_model, res.n, cfg.pattern, res.t_half, res.t_low, res.t_high,
            _fmt(res.p_low), _fmt(res.p_high), cfg.trials, cfg.master_seed,
        ])


def read_halftime_points(source: TextIO) -> list[tuple[int, float]]:
    """讀取 (n, t_half)；接受 halftime 的輸出或只有 n,t_half 兩欄的 CSV。"""
    reader = csv.DictReader(source)
    if reader.fieldnames is None or not {"n", "t_half"} <= set(reader.fieldnames):
        raise InvalidArgumentError("CSV 需要 n 與 t_half 欄位。")
    points = []
    for line, record in enumerate(reader, start=2):
        try:
            points.append((int(record["n"]), float(record["t_half"])))
        except (TypeError, ValueError) as exc:
            raise InvalidArgumentError(f"第 {line} 行無法解析：{exc}") from exc
    return points


def load_config(path: str | Path) -> ExperimentConfig:
    """讀取 TOML 實驗設定並以 ExperimentConfig 驗證。"""
    try:
        with open(path, "rb") as fh:
            payload = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise InvalidArgumentError(f"無法解析設定檔 {path}：{exc}") from exc
    cfg = ExperimentConfig.model_validate(payload)
    logger.info("Experiment config loaded", extra={"path": str(path), "pattern": cfg.pattern, "base": cfg.base_model})
    return cfg


# ----------------------------------------------------------------------
# 圖樣分析
# ----------------------------------------------------------------------
def _prediction_model(prediction: ThresholdPrediction) -> ThresholdPredictionModel:
    exponent = prediction.exponent
    return ThresholdPredictionModel(
        base_model=prediction.base_model,
        exponent=None if exponent is None else str(exponent),
        exponent_value=None if exponent is None else float(exponent),
        formula_name=prediction.formula_name,
        applicable=prediction.applicable,
        reason=prediction.reason,
        warnings=list(prediction.warnings),
    )


def analyze_pattern(p: Pattern) -> PatternAnalysis:
    has_edges = p.ell >= 1
    return PatternAnalysis(
        name=p.name,
        k=p.k,
        ell=p.ell,
        m0=str(p.m0),
        rho=p.rho,
        theta=p.theta,
        aut_count=p.aut_count,
        component_count=p.component_count,
        isolated_vertices=list(p.isolated_vertices),
        trails=[list(trail) for trail in trail_decomposition(p).trails] if has_edges else [],
        predictions=[_prediction_model(predicted_threshold(p, base)) for base in BASE_MODELS] if has_edges else [],
        static_prediction=_prediction_model(static_threshold(p)) if has_edges else None,
    )
