from typing import Any, List, Literal

from pydantic import BaseModel, Field, field_validator, model_validator


BaseModelName = Literal["complete", "gnp", "gnm"]


class WalkSummary(BaseModel):
    """單次隨機漫步的統計摘要"""
    n: int
    t: int
    lazy_steps: int
    trace_edges: int
    max_multiplicity: int
    max_exit_count: int
    visited_vertices: int


class ThresholdPredictionModel(BaseModel):
    """單一底圖模型下的門檻預測"""
    base_model: str
    exponent: str | None
    exponent_value: float | None
    formula_name: str
    applicable: bool
    reason: str = ""
    warnings: List[str] = []


class PatternAnalysis(BaseModel):
    """圖樣的結構不變量與預測門檻"""
    name: str
    k: int
    ell: int
    m0: str
    rho: int
    theta: int
    aut_count: int
    component_count: int
    isolated_vertices: List[int] = []
    trails: List[List[int]] = []
    predictions: List[ThresholdPredictionModel] = []
    static_prediction: ThresholdPredictionModel | None = None


class OracleRecord(BaseModel):
    """精確計算的輸出紀錄"""
    inputs: dict[str, Any]
    value: Any
    method: Literal["dp", "enum", "formula", "matrix"]


class ExperimentConfig(BaseModel):
    """Monte Carlo 實驗設定（TOML 檔的鍵與此對應）"""
    base_model: BaseModelName = "complete"
    n_list: List[int]
    p: float | None = None
    m: int | None = None
    pattern: str
    t_list: List[int] = []
    search: Literal["grid", "halftime"] = "grid"
    rel_tol: float = 0.05
    trials: int = 1000
    master_seed: int = 0
    buffer_c: float | None = None  # None 時取 TRACELAB_BUFFER_C
    workers: int = 1
    fixed_graph: bool = False

    @field_validator("trials")
    @classmethod
    def _trials_positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("trials 必須 ≥ 1")
        return value

    @field_validator("buffer_c")
    @classmethod
    def _buffer_c_positive(cls, value: float | None) -> float | None:
        if value is not None and value <= 0:
            raise ValueError("buffer_c 必須為正數")
        return value

    @field_validator("p")
    @classmethod
    def _p_in_unit_interval(cls, value: float | None) -> float | None:
        if value is not None and not 0.0 <= value <= 1.0:
            raise ValueError("p 必須落在 [0, 1]")
        return value

    @field_validator("master_seed")
    @classmethod
    def _seed_64_bit(cls, value: int) -> int:
        if not 0 <= value < 2 ** 64:
            raise ValueError("master_seed 必須為 64 位元非負整數")
        return value

    @field_validator("workers")
    @classmethod
    def _workers_positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("workers 必須 ≥ 1")
        return value

    @model_validator(mode="after")
    def _check_model_parameters(self) -> "ExperimentConfig":
        if not self.n_list:
            raise ValueError("n_list 不可為空")
        if self.base_model == "gnp" and self.p is None:
            raise ValueError("gnp 底圖需要 p")
        if self.base_model == "gnm" and self.m is None:
            raise ValueError("gnm 底圖需要 m")
        if any(t < 0 for t in self.t_list):
            raise ValueError("t 不可為負數")
        return self

    @property
    def mode(self) -> str:
        return "quenched" if self.fixed_graph else "annealed"

    def model_parameter(self) -> float | int | None:
        if self.base_model == "gnp":
            return self.p
        if self.base_model == "gnm":
            return self.m
        return None


class ProbEstimate(BaseModel):
    """Pr[H ⊆ Γ_t] 的 Monte Carlo 估計與 Wilson 95% 區間"""
    base: str
    n: int
    p: float | int | None = None
    t: int
    pattern: str
    trials: int
    successes: int
    p_hat: float
    ci_low: float
    ci_high: float
    master_seed: int
    mode: Literal["annealed", "quenched"] = "annealed"

    @model_validator(mode="after")
    def _check_interval(self) -> "ProbEstimate":
        if not 0.0 <= self.ci_low <= self.p_hat <= self.ci_high <= 1.0:
            raise ValueError("信賴區間必須包含估計值且落在 [0, 1]")
        return self


class SweepRow(BaseModel):
    """掃描表的一列；點位失敗時 estimate 為空並記錄錯誤"""
    n: int
    t: int
    estimate: ProbEstimate | None = None
    error: str | None = None


class HalfTimeResult(BaseModel):
    """中位出現時間 t_half 的搜尋結果；括區滿足 p_low < 0.5 ≤ p_high"""
    n: int
    t_half: int
    t_low: int
    t_high: int
    p_low: float
    p_high: float
    evaluations: List[ProbEstimate] = []


class ThresholdFit(BaseModel):
    """log t_half 對 log n 的最小平方法擬合"""
    points: List[tuple[int, float]]
    slope: float
    intercept: float
    stderr: float


class CopyCountEstimate(BaseModel):
    """軌跡中 H 副本數的平均值與標準誤"""
    n: int
    t: int
    pattern: str
    trials: int
    mean_copies: float
    stderr: float
    expected_order: float


class TimeSetSummary(BaseModel):
    """包含 H 的 trial 中，所找到副本的命中時間集合 W 的 run 統計（B = ceil(c·ln n)）"""
    n: int
    t: int
    pattern: str
    trials: int
    buffer: int
    contained: int
    mean_w: float | None = None
    mean_r: float | None = None
    mean_q: float | None = None
    coverage_violations: int = 0


class StoredRunSummary(BaseModel):
    """已保存掃描的摘要"""
    id: int
    created_at: str
    pattern: str
    base_model: str
    row_count: int


class StoredRun(BaseModel):
    """已保存掃描的完整內容"""
    id: int
    created_at: str
    config: ExperimentConfig
    rows: List[SweepRow]


class WalkRequest(BaseModel):
    """HTTP 漫步請求"""
    base_model: BaseModelName = "complete"
    n: int = Field(ge=1)
    p: float | None = None
    m: int | None = None
    t: int = Field(ge=0)
    seed: int = 0


class EstimateRequest(BaseModel):
    """HTTP 單點估計請求"""
    config: ExperimentConfig
    n: int
    t: int


class ContainmentRequest(BaseModel):
    """HTTP 精確包含機率請求（底圖以邊清單給定）"""
    n: int
    edges: List[tuple[int, int]] = []
    complete: bool = False
    embedded_edges: List[tuple[int, int]]
    t: int = Field(ge=0)


class TimeSetRequest(BaseModel):
    """HTTP W-集合計數請求"""
    t: int
    w: int
    r: int
    buffer: int = 1
