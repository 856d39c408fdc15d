import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np
from scipy import sparse

from src.core.config import get_settings
from src.core.errors import InvalidArgumentError, SizeLimitError
from src.core.logger import get_logger
from src.tracelab.graph import Graph, is_connected

logger = get_logger(__name__)

MAX_DENSE_STATES = 2000
MAX_DP_EDGES = 12
MAX_TRANSITION_ENTRIES = 10_000_000
MAX_BRUTE_TIME = 20
MAX_CONSTRUCTIVE_TIME = 40
MAX_ENUMERATED_SETS = 5_000_000


# ----------------------------------------------------------------------
# 轉移矩陣與平穩分佈
# ----------------------------------------------------------------------
def transition_matrix(g: Graph) -> sparse.csr_matrix:
    """惰性鏈：p_uv = 1/(d(u)+1)，v ∈ N⁺(u)。"""
    adjacency = g.to_sparse() + sparse.identity(g.n, format="csr")
    scale = sparse.diags(1.0 / (g.degrees + 1.0))
    return (scale @ adjacency).tocsr()


def dense_transition_matrix(g: Graph) -> np.ndarray:
    if g.n > MAX_DENSE_STATES:
        raise SizeLimitError("稠密轉移矩陣的頂點數超過上限", limit=MAX_DENSE_STATES, required=g.n)
    return transition_matrix(g).toarray()


def _require_connected_with_edges(g: Graph) -> None:
    if g.n == 0 or g.edge_count == 0:
        raise InvalidArgumentError("需要至少一條邊的圖。")
    if not is_connected(g):
        raise InvalidArgumentError("圖不連通，平穩分佈不唯一。")


def stationary_distribution(g: Graph) -> np.ndarray:
    """實作之惰性鏈的精確平穩分佈：π_v = (d(v)+1) / (2|E| + n)。"""
    _require_connected_with_edges(g)
    return (g.degrees + 1.0) / (2.0 * g.edge_count + g.n)


def stationary_reference(g: Graph) -> np.ndarray:
    """簡單隨機漫步的平穩分佈 d(v) / 2|E|（度數趨於無窮時與上式漸近相同）。"""
    _require_connected_with_edges(g)
    return g.degrees / (2.0 * g.edge_count)


def uniform_distribution(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def point_mass(n: int, v: int) -> np.ndarray:
    dist = np.zeros(n)
    dist[v] = 1.0
    return dist


def tv_distance(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"分佈長度不一致：{a.shape} vs {b.shape}")
    return float(min(1.0, 0.5 * math.fsum(np.abs(a - b))))


def mixing_profile(g: Graph, start: np.ndarray, s_max: int) -> list[float]:
    """d_TV(start·P^s, π)，s = 0..s_max。"""
    _require_connected_with_edges(g)
    P = dense_transition_matrix(g)
    pi = stationary_distribution(g)
    dist = np.asarray(start, dtype=float)
    profile = [tv_distance(dist, pi)]
    for _ in range(s_max):
        dist = dist @ P
        profile.append(tv_distance(dist, pi))
    return profile


def worst_case_mixing_profile(g: Graph, s_max: int) -> list[float]:
    """所有單點起始分佈中最大的 TV 距離，s = 0..s_max。"""
    _require_connected_with_edges(g)
    P = dense_transition_matrix(g)
    pi = stationary_distribution(g)
    M = np.eye(g.n)
    profile = []
    for s in range(s_max + 1):
        if s:
            M = M @ P
        profile.append(float(0.5 * np.abs(M - pi).sum(axis=1).max()))
    logger.info("Worst-case mixing profile computed", extra={"n": g.n, "s_max": s_max, "final_tv": profile[-1]})
    return profile


def mixing_time(g: Graph, eps: float, s_max: int) -> int | None:
    """最壞起點下 TV < eps 的最小步數；s_max 內未達成則為 None。"""
    for s, tv in enumerate(worst_case_mixing_profile(g, s_max)):
        if tv < eps:
            return s
    return None


# ----------------------------------------------------------------------
# 覆蓋機率的位元遮罩 DP
# ----------------------------------------------------------------------
def _edge_bits(g: Graph, edges: Sequence[tuple[int, int]]) -> list[tuple[int, int]]:
    normalized: list[tuple[int, int]] = []
    for u, v in edges:
        if not g.has_edge(u, v):
            raise InvalidArgumentError(f"邊 ({u}, {v}) 不在底圖中。")
        key = (min(u, v), max(u, v))
        if key not in normalized:
            normalized.append(key)
    return normalized


def _check_budget(g: Graph, ell: int, t: int, budget: int | None) -> None:
    """每步成本為轉移矩陣非零項數 (n + 2|E|) 乘上 2^ℓ 個狀態。"""
    if ell > MAX_DP_EDGES:
        raise SizeLimitError("DP 的嵌入邊數超過上限", limit=MAX_DP_EDGES, required=ell)
    entries = g.n + 2 * g.edge_count
    if entries > MAX_TRANSITION_ENTRIES:
        raise SizeLimitError("轉移矩陣的非零項數超過上限", limit=MAX_TRANSITION_ENTRIES, required=entries)
    budget = get_settings().dp_budget if budget is None else budget
    required = entries * (1 << ell) * max(t, 1)
    if required > budget:
        raise SizeLimitError("DP 計算量超過預算", limit=budget, required=required)


def mask_distribution_profile(g: Graph, edges: Sequence[tuple[int, int]], t: int) -> np.ndarray:
    """回傳 (t+1, 2^ℓ) 陣列：第 s 列為時間 s 時「已走過的嵌入邊集合」之分佈。"""
    if t < 0:
        raise InvalidArgumentError("步數 t 不可為負數。")
    ell = len(edges)
    states = 1 << ell
    P = transition_matrix(g).tolil()
    crossings = []
    for bit, (a, b) in enumerate(edges):
        crossings.append((a, b, float(P[a, b]), 1 << bit))
        crossings.append((b, a, float(P[b, a]), 1 << bit))
        P[a, b] = 0.0
        P[b, a] = 0.0
    rest_T = P.tocsr().T.tocsr()
    rest_T.eliminate_zeros()

    masks = np.arange(states)
    prob = np.zeros((g.n, states))
    prob[:, 0] = 1.0 / g.n
    profile = np.empty((t + 1, states))
    profile[0] = [math.fsum(col) for col in prob.T]
    for s in range(1, t + 1):
        new = np.asarray(rest_T @ prob)
        for src, dst, weight, bit in crossings:
            np.add.at(new[dst], masks | bit, prob[src] * weight)
        prob = new
        profile[s] = [math.fsum(col) for col in prob.T]
    return profile


def containment_profile(g: Graph, embedded_edges: Sequence[tuple[int, int]], t: int, budget: int | None = None) -> list[float]:
    """Pr[H₀ ⊆ Γ_s]，s = 0..t。"""
    edges = _edge_bits(g, embedded_edges)
    _check_budget(g, len(edges), t, budget)
    profile = mask_distribution_profile(g, edges, t)
    return [float(min(1.0, x)) for x in profile[:, -1]]


def exact_containment_probability(g: Graph, embedded_edges: Sequence[tuple[int, int]], t: int, budget: int | None = None) -> float:
    """在初始分佈均勻下，時間 t 前走過全部 ℓ 條嵌入邊的精確機率。"""
    value = containment_profile(g, embedded_edges, t, budget)[-1]
    logger.info(
        "Exact containment probability computed",
        extra={"n": g.n, "ell": len(embedded_edges), "t": t, "value": value},
    )
    return value


def joint_containment_probability(
    g: Graph,
    edges_a: Sequence[tuple[int, int]],
    edges_b: Sequence[tuple[int, int]],
    t: int,
    budget: int | None = None,
) -> tuple[float, float, float]:
    """(P(A∧B), P(A), P(B))，A、B 為兩組嵌入邊各自全被走過的事件。"""
    set_a = _edge_bits(g, edges_a)
    set_b = _edge_bits(g, edges_b)
    combined = set_a + [e for e in set_b if e not in set_a]
    _check_budget(g, len(combined), t, budget)
    mask_a = sum(1 << combined.index(e) for e in set_a)
    mask_b = sum(1 << combined.index(e) for e in set_b)
    final = mask_distribution_profile(g, combined, t)[-1]
    masks = np.arange(final.size)
    has_a = (masks & mask_a) == mask_a
    has_b = (masks & mask_b) == mask_b
    both = math.fsum(final[has_a & has_b])
    return float(min(1.0, both)), float(min(1.0, math.fsum(final[has_a]))), float(min(1.0, math.fsum(final[has_b])))


# ----------------------------------------------------------------------
# W-集合組合計數
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class TimeSetCount:
    count: int
    histogram: dict[int, int] = field(default_factory=dict)
    method: str = "enum"


def _check_wr(t: int, w: int, r: int) -> None:
    if not 1 <= r <= w <= t:
        raise InvalidArgumentError(f"需要 1 ≤ r ≤ w ≤ t，收到 t={t}, w={w}, r={r}。")


def count_time_sets_formula(t: int, w: int, r: int) -> int:
    """|𝒲_{w,r}| = C(w-1, r-1) · C(t-w+1, r)。"""
    _check_wr(t, w, r)
    return math.comb(w - 1, r - 1) * math.comb(t - w + 1, r)


def _run_stats(times: Sequence[int], buffer: int) -> tuple[int, int]:
    runs = 0
    defective = 0
    prev = None
    for i in times:
        if prev is None or i != prev + 1:
            if prev is not None and i - (prev + 1) < 3 * buffer:
                defective += 1
            runs += 1
        prev = i
    return runs, defective


def _compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    for cuts in itertools.combinations(range(1, total), parts - 1):
        bounds = (0,) + cuts + (total,)
        yield tuple(b - a for a, b in zip(bounds, bounds[1:]))


def _sets_by_structure(t: int, w: int, r: int) -> Iterator[list[int]]:
    """以 run 長度與間隔直接產生 𝒲_{w,r} 的所有元素。"""
    for lengths in _compositions(w, r):
        for slots in itertools.combinations(range(t - w + 1), r):
            gaps = [slots[0]] + [b - a for a, b in zip(slots, slots[1:])]
            times = []
            position = 1
            for gap, length in zip(gaps, lengths):
                position += gap
                times.extend(range(position, position + length))
                position += length
            yield times


def enumerate_time_sets(t: int, w: int, r: int, buffer: int) -> TimeSetCount:
    """窮舉 |W| = w、r(W) = r 的 W ⊆ [t]，並依 q(W) 分組。"""
    _check_wr(t, w, r)
    if buffer < 1:
        raise InvalidArgumentError("buffer B 必須 ≥ 1。")
    histogram: Counter[int] = Counter()
    if t <= MAX_BRUTE_TIME:
        for times in itertools.combinations(range(1, t + 1), w):
            runs, defective = _run_stats(times, buffer)
            if runs == r:
                histogram[defective] += 1
    elif t <= MAX_CONSTRUCTIVE_TIME:
        expected = count_time_sets_formula(t, w, r)
        if expected > MAX_ENUMERATED_SETS:
            raise SizeLimitError("W-集合數量超過列舉上限", limit=MAX_ENUMERATED_SETS, required=expected)
        for times in _sets_by_structure(t, w, r):
            runs, defective = _run_stats(times, buffer)
            if runs != r or len(times) != w:
                raise AssertionError(f"產生的 W 結構不符：{times}")
            histogram[defective] += 1
    else:
        raise SizeLimitError("列舉的 t 超過上限", limit=MAX_CONSTRUCTIVE_TIME, required=t)
    return TimeSetCount(sum(histogram.values()), dict(sorted(histogram.items())), "enum")


def defective_fraction(t: int, w: int, r: int, buffer: int) -> Fraction:
    """𝒲_{w,r} 中 q(W) ≥ 1 的精確比例（內部間隔皆 ≥ 3B 者為非缺陷）。"""
    _check_wr(t, w, r)
    total = count_time_sets_formula(t, w, r)
    if total == 0:
        raise InvalidArgumentError(f"𝒲_{{w,r}} 為空：t={t}, w={w}, r={r}。")
    top = t - w - 3 * buffer * (r - 1) + r
    clean = math.comb(w - 1, r - 1) * (math.comb(top, r) if top >= 0 else 0)
    return 1 - Fraction(clean, total)


def sample_time_set(t: int, w: int, r: int, rng: np.random.Generator) -> list[int]:
    """自 𝒲_{w,r} 均勻抽樣一個 W。"""
    _check_wr(t, w, r)
    if count_time_sets_formula(t, w, r) == 0:
        raise InvalidArgumentError(f"𝒲_{{w,r}} 為空：t={t}, w={w}, r={r}。")
    cuts = np.sort(rng.choice(np.arange(1, w), size=r - 1, replace=False)) if r > 1 else np.empty(0, dtype=int)
    bounds = np.concatenate([[0], cuts, [w]])
    lengths = np.diff(bounds)
    slots = np.sort(rng.choice(t - w + 1, size=r, replace=False))
    gaps = np.concatenate([[slots[0]], np.diff(slots)])
    times: list[int] = []
    position = 1
    for gap, length in zip(gaps.tolist(), lengths.tolist()):
        position += gap
        times.extend(range(position, position + length))
        position += length
    return times


def sampled_defective_fraction(t: int, w: int, r: int, buffer: int, samples: int, rng: np.random.Generator) -> float:
    hits = 0
    for _ in range(samples):
        _, defective = _run_stats(sample_time_set(t, w, r, rng), buffer)
        hits += defective >= 1
    return hits / samples
