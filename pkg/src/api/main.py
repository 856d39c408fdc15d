from fastapi import FastAPI, HTTPException

from src.core.errors import ConvergenceError
from src.core.logger import get_logger
from src.core.run_repository import RunRepository
from src.tracelab.experiment import analyze_pattern, estimate_probability, sweep
from src.tracelab.graph import Graph, complete_graph, sample_gnm, sample_gnp
from src.tracelab.oracle import count_time_sets_formula, enumerate_time_sets, exact_containment_probability
from src.tracelab.pattern import parse_pattern
from src.tracelab.walk import make_rng, run_walk, summarize_walk
from .schemas import (
    ContainmentRequest,
    EstimateRequest,
    ExperimentConfig,
    OracleRecord,
    PatternAnalysis,
    ProbEstimate,
    StoredRun,
    StoredRunSummary,
    SweepRow,
    TimeSetRequest,
    WalkRequest,
    WalkSummary,
)

app = FastAPI(title="tracelab")
logger = get_logger(__name__)

run_repo = RunRepository()

MAX_HTTP_TRIALS = 100_000


def _bad_request(exc: Exception) -> HTTPException:
    if isinstance(exc, ConvergenceError):
        return HTTPException(status_code=422, detail=str(exc))
    return HTTPException(status_code=400, detail=str(exc))


def _request_graph(request: WalkRequest) -> Graph:
    rng = make_rng(request.seed)
    if request.base_model == "complete":
        return complete_graph(request.n)
    if request.base_model == "gnp":
        if request.p is None:
            raise ValueError("gnp 底圖需要 p。")
        return sample_gnp(request.n, request.p, rng)
    if request.m is None:
        raise ValueError("gnm 底圖需要 m。")
    return sample_gnm(request.n, request.m, rng)


@app.get("/api/patterns/{spec}", response_model=PatternAnalysis)
def get_pattern_analysis(spec: str):
    """圖樣不變量與各底圖模型的預測門檻"""
    try:
        analysis = analyze_pattern(parse_pattern(spec))
    except ValueError as exc:
        raise _bad_request(exc)
    logger.info("Pattern analyzed", extra={"pattern": analysis.name, "m0": analysis.m0})
    return analysis


@app.post("/api/walk", response_model=WalkSummary)
def run_walk_endpoint(request: WalkRequest):
    """在指定底圖上跑一次漫步並回傳統計摘要"""
    try:
        g = _request_graph(request)
        # 底圖與漫步使用不同的亂數流
        summary = summarize_walk(run_walk(g, request.t, make_rng([request.seed, 1])))
    except ValueError as exc:
        raise _bad_request(exc)
    logger.info("Walk served", extra={"n": request.n, "t": request.t, "trace_edges": summary.trace_edges})
    return summary


@app.post("/api/estimate", response_model=ProbEstimate)
def estimate_endpoint(request: EstimateRequest):
    """單一 (n, t) 點位的 Monte Carlo 估計"""
    if request.config.trials > MAX_HTTP_TRIALS:
        raise HTTPException(status_code=400, detail=f"trials 上限為 {MAX_HTTP_TRIALS}。")
    try:
        return estimate_probability(request.config, request.n, request.t)
    except (ValueError, RuntimeError) as exc:
        raise _bad_request(exc)


@app.post("/api/oracle/containment", response_model=OracleRecord)
def containment_endpoint(request: ContainmentRequest):
    """固定嵌入副本在時間 t 前被完全走過的精確機率"""
    try:
        g = complete_graph(request.n) if request.complete else Graph.from_edges(request.n, request.edges)
        value = exact_containment_probability(g, request.embedded_edges, request.t)
    except ValueError as exc:
        raise _bad_request(exc)
    return OracleRecord(inputs=request.model_dump(), value=value, method="dp")


@app.post("/api/oracle/wsets", response_model=list[OracleRecord])
def time_sets_endpoint(request: TimeSetRequest):
    """|𝒲_{w,r}| 的公式值；t 夠小時附上窮舉結果與 q(W) 分佈"""
    try:
        records = [
            OracleRecord(
                inputs=request.model_dump(),
                value=count_time_sets_formula(request.t, request.w, request.r),
                method="formula",
            )
        ]
        if request.t <= 20:
            counts = enumerate_time_sets(request.t, request.w, request.r, request.buffer)
            records.append(
                OracleRecord(
                    inputs=request.model_dump(),
                    value={"count": counts.count, "defective_histogram": counts.histogram},
                    method="enum",
                )
            )
    except ValueError as exc:
        raise _bad_request(exc)
    return records


@app.post("/api/sweep", response_model=StoredRun)
def sweep_endpoint(config: ExperimentConfig):
    """執行掃描並存入歷史紀錄"""
    if config.trials * len(config.n_list) * max(len(config.t_list), 1) > MAX_HTTP_TRIALS:
        raise HTTPException(status_code=400, detail=f"單次掃描的總 trial 數上限為 {MAX_HTTP_TRIALS}。")
    try:
        rows = sweep(config)
    except ValueError as exc:
        raise _bad_request(exc)
    run_id = run_repo.save_run(config.model_dump(), [row.model_dump() for row in rows])
    logger.info("Sweep stored", extra={"run_id": run_id, "rows": len(rows)})
    record = run_repo.get_run(run_id)
    return StoredRun(id=run_id, created_at=record["created_at"], config=config, rows=rows)


@app.get("/api/runs", response_model=list[StoredRunSummary])
def list_runs(limit: int = 20, offset: int = 0):
    """取得已保存的掃描列表，預設最多返回 20 筆。"""
    return [StoredRunSummary(**rec) for rec in run_repo.list_runs(limit=limit, offset=offset)]


@app.get("/api/runs/{run_id}", response_model=StoredRun)
def get_run(run_id: int):
    """取得指定掃描的完整內容。"""
    record = run_repo.get_run(run_id)
    if not record:
        raise HTTPException(status_code=404, detail="找不到指定的掃描紀錄。")

    return StoredRun(
        id=record["id"],
        created_at=record["created_at"],
        config=ExperimentConfig(**record["config"]),
        rows=[SweepRow(**row) for row in record["rows"]],
    )
