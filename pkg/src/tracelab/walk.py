import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from src.api.schemas import WalkSummary
from src.core.config import get_settings
from src.core.errors import InvalidArgumentError
from src.core.logger import get_logger
from src.tracelab.graph import Graph, disjoint_union, is_connected

logger = get_logger(__name__)

STREAM_THRESHOLD = 100_000_000


def make_rng(seed: int | Sequence[int] | np.random.SeedSequence) -> np.random.Generator:
    return np.random.default_rng(seed)


def buffer_length(n: int, c: float | None = None) -> int:
    """混合緩衝 B = ceil(c · ln n)，至少為 1。"""
    c = get_settings().buffer_c if c is None else c
    if n <= 1:
        return 1
    return max(1, math.ceil(c * math.log(n)))


@dataclass(frozen=True)
class WalkRecord:
    host: Graph
    steps: np.ndarray

    @property
    def t(self) -> int:
        return int(self.steps.size - 1)


@dataclass(frozen=True)
class TimeSet:
    """W ⊆ [t] 及其 run 結構；buffer 為判定 defective run 的 B。"""

    times: tuple[int, ...]
    buffer: int = 1

    @classmethod
    def from_times(cls, times: Iterable[int], buffer: int = 1) -> "TimeSet":
        return cls(tuple(sorted(set(int(i) for i in times))), buffer)

    @property
    def w(self) -> int:
        return len(self.times)

    @property
    def runs(self) -> list[tuple[int, int]]:
        """每個極大區間的 (起點, 長度)。"""
        runs: list[tuple[int, int]] = []
        for i in self.times:
            if runs and runs[-1][0] + runs[-1][1] == i:
                start, length = runs[-1]
                runs[-1] = (start, length + 1)
            else:
                runs.append((i, 1))
        return runs

    @property
    def r(self) -> int:
        return len(self.runs)

    @property
    def q(self) -> int:
        runs = self.runs
        return sum(
            1
            for (start, length), (next_start, _) in zip(runs, runs[1:])
            if next_start - (start + length) < 3 * self.buffer
        )


@dataclass(frozen=True)
class EdgeMultiplicities:
    counts: dict[tuple[int, int], int]
    max_count: int


# ----------------------------------------------------------------------
# 漫步
# ----------------------------------------------------------------------
def _initial_vertices(n: int, draws: np.ndarray) -> np.ndarray:
    return np.minimum((draws * n).astype(np.int64), n - 1)


def _advance(g: Graph, start: np.ndarray, draws: np.ndarray) -> np.ndarray:
    """由 start（每列一個頂點）出發，以 draws[:, i] 走第 i 步；回傳 (b, L) 的位置。

    每步一個均勻亂數：索引 floor(u·(d+1))，索引 d 代表停留。
    """
    b, length = draws.shape
    out = np.empty((b, length), dtype=np.int64)
    if length == 0:
        return out
    if g.is_complete:
        # K_n 上 N⁺(v) 為全部頂點，位置彼此獨立且均勻
        return np.minimum((draws * g.n).astype(np.int64), g.n - 1)
    if g.edge_count == 0:
        out[:] = start[:, None]
        return out

    degrees, indptr, indices = g.degrees, g.indptr, g.indices
    current = start.astype(np.int64)
    for i in range(length):
        d = degrees[current]
        idx = np.minimum((draws[:, i] * (d + 1)).astype(np.int64), d)
        move = idx < d
        nxt = current.copy()
        nxt[move] = indices[indptr[current[move]] + idx[move]]
        out[:, i] = nxt
        current = nxt
    return out


def run_walk(g: Graph, t: int, rng: np.random.Generator) -> WalkRecord:
    if g.n == 0:
        raise InvalidArgumentError("空圖上無法進行隨機漫步。")
    if t < 0:
        raise InvalidArgumentError("步數 t 不可為負數。")
    if not g.is_complete and not is_connected(g):
        logger.warning("Walking on a disconnected base graph", extra={"n": g.n, "m": g.edge_count})
    draws = rng.random(t + 1)
    x0 = _initial_vertices(g.n, draws[:1])
    rest = _advance(g, x0, draws[None, 1:])[0]
    return WalkRecord(g, np.concatenate([x0, rest]))


def run_walk_block(g: Graph, t: int, rngs: Sequence[np.random.Generator]) -> np.ndarray:
    """同一底圖上的一批漫步；第 i 列與 run_walk(g, t, rngs[i]) 逐位元相同。"""
    if g.n == 0:
        raise InvalidArgumentError("空圖上無法進行隨機漫步。")
    if not rngs:
        return np.empty((0, t + 1), dtype=np.int64)
    draws = np.stack([rng.random(t + 1) for rng in rngs])
    x0 = _initial_vertices(g.n, draws[:, 0])
    rest = _advance(g, x0, draws[:, 1:])
    return np.concatenate([x0[:, None], rest], axis=1)


def run_walk_union_block(graphs: Sequence[Graph], t: int, rngs: Sequence[np.random.Generator]) -> np.ndarray:
    """各自底圖上的一批漫步（底圖取不相交聯集後同步推進）；第 i 列與 run_walk(graphs[i], t, rngs[i]) 相同。"""
    if any(g.n == 0 for g in graphs):
        raise InvalidArgumentError("空圖上無法進行隨機漫步。")
    union, offsets = disjoint_union(list(graphs))
    draws = np.stack([rng.random(t + 1) for rng in rngs])
    sizes = np.array([g.n for g in graphs], dtype=np.int64)
    x0 = np.minimum((draws[:, 0] * sizes).astype(np.int64), sizes - 1) + offsets
    rest = _advance(union, x0, draws[:, 1:])
    return np.concatenate([x0[:, None], rest], axis=1) - offsets[:, None]


# ----------------------------------------------------------------------
# 軌跡統計
# ----------------------------------------------------------------------
def _moves(steps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a, b = steps[:-1], steps[1:]
    mask = a != b
    return a[mask], b[mask]


def trace_keys(steps: np.ndarray, n: int) -> np.ndarray:
    """軌跡邊以 min·n + max 編碼後的遞增唯一陣列。"""
    a, b = _moves(steps)
    return np.unique(np.minimum(a, b) * n + np.maximum(a, b))


def trace(w: WalkRecord, upto: int | None = None) -> Graph:
    """Γ_t：走過的邊（排除自環、忽略重數）；upto 取前綴長度。"""
    steps = w.steps if upto is None else w.steps[: upto + 1]
    keys = trace_keys(steps, w.host.n)
    edges = np.stack(np.divmod(keys, w.host.n), axis=1)
    return Graph.from_edges(w.host.n, edges)


def edge_multiplicities(w: WalkRecord) -> EdgeMultiplicities:
    a, b = _moves(w.steps)
    n = w.host.n
    keys, counts = np.unique(np.minimum(a, b) * n + np.maximum(a, b), return_counts=True)
    mapping = {(int(k // n), int(k % n)): int(c) for k, c in zip(keys, counts)}
    return EdgeMultiplicities(mapping, int(counts.max()) if counts.size else 0)


def exit_counts(w: WalkRecord) -> np.ndarray:
    """η(v, t)：各頂點的離開次數，以頂點編號索引。"""
    a, _ = _moves(w.steps)
    return np.bincount(a, minlength=w.host.n)


def lazy_step_count(w: WalkRecord) -> int:
    return int(np.count_nonzero(w.steps[:-1] == w.steps[1:]))


def hit_times(w: WalkRecord, embedded_edges: Iterable[tuple[int, int]], buffer: int | None = None) -> TimeSet:
    """W(H₀) = {i ∈ [t] : {X_{i-1}, X_i} ∈ E(H₀)}。"""
    n = w.host.n
    keys = []
    for u, v in embedded_edges:
        if not w.host.has_edge(u, v):
            raise InvalidArgumentError(f"邊 ({u}, {v}) 不在底圖中。")
        keys.append(min(u, v) * n + max(u, v))
    if buffer is None:
        buffer = buffer_length(n)
    a, b = w.steps[:-1], w.steps[1:]
    step_keys = np.minimum(a, b) * n + np.maximum(a, b)
    hit = (a != b) & np.isin(step_keys, np.asarray(keys, dtype=np.int64))
    return TimeSet.from_times(np.flatnonzero(hit) + 1, buffer)


def summarize_walk(w: WalkRecord) -> WalkSummary:
    multiplicities = edge_multiplicities(w)
    exits = exit_counts(w)
    return WalkSummary(
        n=w.host.n,
        t=w.t,
        lazy_steps=lazy_step_count(w),
        trace_edges=len(multiplicities.counts),
        max_multiplicity=multiplicities.max_count,
        max_exit_count=int(exits.max()) if exits.size else 0,
        visited_vertices=int(np.unique(w.steps).size),
    )


@dataclass
class StreamedWalk:
    """串流模式的累積結果（不保留步序列）。"""

    n: int
    t: int
    edge_keys: np.ndarray
    edge_counts: np.ndarray
    exits: np.ndarray
    lazy_steps: int
    visited: np.ndarray

    def trace(self) -> Graph:
        return Graph.from_edges(self.n, np.stack(np.divmod(self.edge_keys, self.n), axis=1))

    def multiplicities(self) -> EdgeMultiplicities:
        mapping = {
            (int(k // self.n), int(k % self.n)): int(c) for k, c in zip(self.edge_keys, self.edge_counts)
        }
        return EdgeMultiplicities(mapping, int(self.edge_counts.max()) if self.edge_counts.size else 0)

    def summary(self) -> WalkSummary:
        return WalkSummary(
            n=self.n,
            t=self.t,
            lazy_steps=self.lazy_steps,
            trace_edges=int(self.edge_keys.size),
            max_multiplicity=int(self.edge_counts.max()) if self.edge_counts.size else 0,
            max_exit_count=int(self.exits.max()) if self.exits.size else 0,
            visited_vertices=int(np.count_nonzero(self.visited)),
        )


def stream_walk(g: Graph, t: int, rng: np.random.Generator, chunk: int = 1 << 20) -> StreamedWalk:
    """分段產生漫步並即時累積統計；與 run_walk 使用相同的亂數序列。"""
    if g.n == 0:
        raise InvalidArgumentError("空圖上無法進行隨機漫步。")
    if t < 0:
        raise InvalidArgumentError("步數 t 不可為負數。")
    n = g.n
    current = _initial_vertices(n, rng.random(1))
    exits = np.zeros(n, dtype=np.int64)
    visited = np.zeros(n, dtype=bool)
    visited[current[0]] = True
    keys = np.empty(0, dtype=np.int64)
    counts = np.empty(0, dtype=np.int64)
    lazy = 0
    remaining = t
    while remaining > 0:
        size = min(chunk, remaining)
        positions = _advance(g, current, rng.random(size)[None, :])[0]
        steps = np.concatenate([current, positions])
        a, b = _moves(steps)
        lazy += size - a.size
        exits += np.bincount(a, minlength=n)
        visited[positions] = True
        chunk_keys, chunk_counts = np.unique(np.minimum(a, b) * n + np.maximum(a, b), return_counts=True)
        keys, inverse = np.unique(np.concatenate([keys, chunk_keys]), return_inverse=True)
        counts = np.bincount(inverse, weights=np.concatenate([counts, chunk_counts])).astype(np.int64)
        current = positions[-1:]
        remaining -= size
    logger.info("Streamed walk finished", extra={"n": n, "t": t, "trace_edges": int(keys.size)})
    return StreamedWalk(n, t, keys, counts, exits, lazy, visited)


def dump_steps(w: WalkRecord, path: str | Path) -> None:
    """每行一個頂點編號。"""
    np.savetxt(path, w.steps, fmt="%d")
