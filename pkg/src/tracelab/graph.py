import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from src.core.errors import InvalidArgumentError
from src.core.logger import get_logger

logger = get_logger(__name__)


def pair_count(n: int) -> int:
    return n * (n - 1) // 2


def pair_index_to_edges(idx: np.ndarray) -> np.ndarray:
    """將配對索引（依 (v, u)、u < v 的字典序編號）轉回 (u, v) 邊陣列。"""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    v = np.floor((1.0 + np.sqrt(1.0 + 8.0 * idx.astype(np.float64))) / 2.0).astype(np.int64)
    # 修正浮點誤差
    v[v * (v - 1) // 2 > idx] -= 1
    v[(v + 1) * v // 2 <= idx] += 1
    u = idx - v * (v - 1) // 2
    return np.stack([u, v], axis=1)


@dataclass(frozen=True)
class DegreeSummary:
    min_degree: float
    max_degree: float
    mean_degree: float
    odd_count: int


class Graph:
    """簡單無向圖；建立後不可變更。

    鄰接以 CSR 形式保存（indptr / indices，每列遞增排序）。完全圖 K_n 以隱式表示，
    不配置鄰接陣列，因此 n = 10^5 亦可使用。
    """

    def __init__(self, n: int, indptr: np.ndarray | None, indices: np.ndarray | None, *, complete: bool = False):
        if n < 0:
            raise InvalidArgumentError("頂點數不可為負數。")
        self.n = int(n)
        self.is_complete = complete
        if complete:
            self.indptr = None
            self.indices = None
            self._degrees = np.full(self.n, max(self.n - 1, 0), dtype=np.int64)
            self.edge_count = pair_count(self.n)
        else:
            self.indptr = np.asarray(indptr, dtype=np.int64)
            self.indices = np.asarray(indices, dtype=np.int64)
            self.indptr.flags.writeable = False
            self.indices.flags.writeable = False
            self._degrees = np.diff(self.indptr)
            self.edge_count = int(self.indices.size // 2)
        self._degrees.flags.writeable = False

    # ------------------------------------------------------------------
    # 建構
    # ------------------------------------------------------------------
    @classmethod
    def complete(cls, n: int) -> "Graph":
        return cls(n, None, None, complete=True)

    @classmethod
    def empty(cls, n: int) -> "Graph":
        return cls(n, np.zeros(n + 1, dtype=np.int64), np.empty(0, dtype=np.int64))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]] | np.ndarray) -> "Graph":
        """由邊清單建立圖；重複邊合併，自環與越界頂點視為錯誤。"""
        arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
        if arr.size == 0:
            return cls.empty(n)
        arr = arr.reshape(-1, 2)
        if arr.min() < 0 or arr.max() >= n:
            raise InvalidArgumentError(f"邊的端點必須落在 [0, {n}) 之內。")
        if np.any(arr[:, 0] == arr[:, 1]):
            raise InvalidArgumentError("簡單圖不允許自環。")
        lo = np.minimum(arr[:, 0], arr[:, 1])
        hi = np.maximum(arr[:, 0], arr[:, 1])
        keys = np.unique(lo * n + hi)
        return cls._from_unique_keys(n, keys)

    @classmethod
    def from_pair_index(cls, n: int, idx: np.ndarray) -> "Graph":
        edges = pair_index_to_edges(np.unique(idx))
        if edges.size == 0:
            return cls.empty(n)
        return cls._from_unique_keys(n, edges[:, 0] * n + edges[:, 1])

    @classmethod
    def _from_unique_keys(cls, n: int, keys: np.ndarray) -> "Graph":
        lo, hi = np.divmod(keys, n)
        src = np.concatenate([lo, hi])
        dst = np.concatenate([hi, lo])
        order = np.argsort(src * n + dst, kind="stable")
        src, dst = src[order], dst[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
        return cls(n, indptr, dst)

    # ------------------------------------------------------------------
    # 查詢
    # ------------------------------------------------------------------
    @property
    def degrees(self) -> np.ndarray:
        return self._degrees

    def degree(self, v: int) -> int:
        return int(self._degrees[v])

    def neighbors(self, v: int) -> np.ndarray:
        if self.is_complete:
            return np.concatenate([np.arange(v, dtype=np.int64), np.arange(v + 1, self.n, dtype=np.int64)])
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def closed_neighborhood(self, v: int) -> np.ndarray:
        """N⁺(v) = {v} ∪ N(v)，遞增排序。"""
        return np.union1d(self.neighbors(v), [v])

    def has_edge(self, u: int, v: int) -> bool:
        if u == v:
            return False
        if self.is_complete:
            return 0 <= u < self.n and 0 <= v < self.n
        row = self.indices[self.indptr[u]:self.indptr[u + 1]]
        pos = np.searchsorted(row, v)
        return bool(pos < row.size and row[pos] == v)

    def edges(self) -> np.ndarray:
        """所有邊 (u, v)、u < v，依字典序排列。"""
        if self.is_complete:
            u, v = np.triu_indices(self.n, k=1)
            return np.stack([u, v], axis=1).astype(np.int64)
        src = np.repeat(np.arange(self.n, dtype=np.int64), self._degrees)
        mask = src < self.indices
        return np.stack([src[mask], self.indices[mask]], axis=1)

    def edge_keys(self) -> np.ndarray:
        e = self.edges()
        return e[:, 0] * self.n + e[:, 1]

    def to_sparse(self) -> sparse.csr_matrix:
        if self.is_complete:
            dense = np.ones((self.n, self.n)) - np.eye(self.n)
            return sparse.csr_matrix(dense)
        data = np.ones(self.indices.size)
        return sparse.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def __repr__(self) -> str:
        kind = "complete" if self.is_complete else "sparse"
        return f"Graph(n={self.n}, edges={self.edge_count}, {kind})"


# ----------------------------------------------------------------------
# 產生器
# ----------------------------------------------------------------------
def complete_graph(n: int) -> Graph:
    if n < 1:
        raise InvalidArgumentError("完全圖至少需要 1 個頂點。")
    return Graph.complete(n)


def _skip_sample(total: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """以幾何跳躍在 [0, total) 中逐一獨立以機率 p 選取索引。"""
    chunks = []
    position = -1
    while True:
        remaining = total - 1 - position
        expected = remaining * p
        size = int(expected + 6.0 * math.sqrt(expected) + 16)
        idx = position + np.cumsum(rng.geometric(p, size=size))
        chunks.append(idx[idx < total])
        if idx[-1] >= total:
            break
        position = int(idx[-1])
    return np.concatenate(chunks)


def sample_gnp(n: int, p: float, rng: np.random.Generator) -> Graph:
    if n < 0:
        raise InvalidArgumentError("頂點數不可為負數。")
    if not 0.0 <= p <= 1.0:
        raise InvalidArgumentError(f"機率 p 必須落在 [0, 1]，收到 {p}。")
    total = pair_count(n)
    if total == 0 or p == 0.0:
        return Graph.empty(n)
    if p == 1.0:
        return Graph.from_pair_index(n, np.arange(total, dtype=np.int64))
    if p <= 0.5:
        idx = _skip_sample(total, p, rng)
    else:
        missing = _skip_sample(total, 1.0 - p, rng)
        idx = np.setdiff1d(np.arange(total, dtype=np.int64), missing, assume_unique=True)
    return Graph.from_pair_index(n, idx)


def sample_gnm(n: int, m: int, rng: np.random.Generator) -> Graph:
    total = pair_count(n)
    if n < 0 or m < 0 or m > total:
        raise InvalidArgumentError(f"邊數 m 必須落在 [0, {total}]，收到 {m}。")
    if m == 0:
        return Graph.empty(n)
    idx = rng.choice(total, size=m, replace=False, shuffle=False)
    return Graph.from_pair_index(n, idx)


# ----------------------------------------------------------------------
# 結構
# ----------------------------------------------------------------------
def connected_components(g: Graph) -> list[list[int]]:
    """連通分量，依最小頂點排序。"""
    if g.n == 0:
        return []
    if g.is_complete:
        return [list(range(g.n))]
    count, labels = csgraph.connected_components(g.to_sparse(), directed=False)
    groups: list[list[int]] = [[] for _ in range(count)]
    for v, label in enumerate(labels):
        groups[label].append(v)
    return sorted(groups, key=lambda comp: comp[0])


def disjoint_union(graphs: list[Graph]) -> tuple[Graph, np.ndarray]:
    """多個顯式圖的不相交聯集；回傳聯集與各圖的頂點位移。"""
    if any(g.is_complete for g in graphs):
        raise InvalidArgumentError("隱式完全圖無法取不相交聯集。")
    sizes = np.array([g.n for g in graphs], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    entry_offsets = np.concatenate([[0], np.cumsum([g.indices.size for g in graphs])[:-1]]).astype(np.int64)
    indptr = np.concatenate(
        [[0]] + [g.indptr[1:] + base for g, base in zip(graphs, entry_offsets)]
    ).astype(np.int64)
    indices = np.concatenate(
        [np.empty(0, dtype=np.int64)] + [g.indices + off for g, off in zip(graphs, offsets)]
    )
    return Graph(int(sizes.sum()), indptr, indices), offsets


def is_connected(g: Graph) -> bool:
    return len(connected_components(g)) <= 1


def degree_stats(g: Graph) -> DegreeSummary:
    degs = g.degrees
    if g.n == 0:
        return DegreeSummary(0.0, 0.0, 0.0, 0)
    return DegreeSummary(
        min_degree=float(degs.min()),
        max_degree=float(degs.max()),
        mean_degree=2.0 * g.edge_count / g.n,
        odd_count=int(np.count_nonzero(degs % 2)),
    )


# ----------------------------------------------------------------------
# 邊清單格式：首行 "n m"，其後 m 行 "u v"（0 ≤ u < v < n）
# ----------------------------------------------------------------------
def parse_edge_list(text: str) -> Graph:
    lines = [line.split("#", 1)[0].strip() for line in text.splitlines()]
    numbered = [(i + 1, line) for i, line in enumerate(lines) if line]
    if not numbered:
        raise InvalidArgumentError("邊清單為空，缺少 'n m' 標頭。")
    header_line, header = numbered[0]
    try:
        n, m = (int(x) for x in header.split())
    except ValueError as exc:
        raise InvalidArgumentError(f"第 {header_line} 行標頭格式錯誤：{header!r}") from exc
    body = numbered[1:]
    if len(body) != m:
        raise InvalidArgumentError(f"標頭宣告 {m} 條邊，實際讀到 {len(body)} 條。")
    edges = []
    for line_no, line in body:
        parts = line.split()
        if len(parts) != 2:
            raise InvalidArgumentError(f"第 {line_no} 行應為 'u v'：{line!r}")
        u, v = int(parts[0]), int(parts[1])
        if not 0 <= u < v < n:
            raise InvalidArgumentError(f"第 {line_no} 行需滿足 0 ≤ u < v < n：{line!r}")
        edges.append((u, v))
    if len(set(edges)) != len(edges):
        raise InvalidArgumentError("邊清單含有重複邊。")
    return Graph.from_edges(n, edges)


def read_edge_list(path: str | Path) -> Graph:
    graph = parse_edge_list(Path(path).read_text(encoding="utf-8"))
    logger.info("Graph loaded from edge list", extra={"path": str(path), "n": graph.n, "m": graph.edge_count})
    return graph


def format_edge_list(g: Graph) -> str:
    edges = g.edges()
    lines = [f"{g.n} {len(edges)}"] + [f"{u} {v}" for u, v in edges.tolist()]
    return "\n".join(lines) + "\n"


def write_edge_list(g: Graph, path: str | Path) -> None:
    Path(path).write_text(format_edge_list(g), encoding="utf-8")
