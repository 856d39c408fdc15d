from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from src.core.errors import SizeLimitError
from src.core.logger import get_logger
from src.tracelab.graph import Graph
from src.tracelab.pattern import Pattern
from src.tracelab.walk import WalkRecord, trace_keys

logger = get_logger(__name__)

MAX_COUNT_HOST_EDGES = 1_000_000


@dataclass(frozen=True)
class Embedding:
    """圖樣頂點 i → 底圖頂點 image[i] 的單射。"""

    image: tuple[int, ...]

    @property
    def map(self) -> dict[int, int]:
        return dict(enumerate(self.image))

    def vertices(self) -> set[int]:
        return set(self.image)


class _HostView:
    """底圖的延遲鄰接快取：只為搜尋觸及的頂點建立 Python 集合。"""

    def __init__(self, host: Graph):
        self.host = host
        self.degrees = host.degrees
        self._lists: dict[int, list[int]] = {}
        self._sets: dict[int, set[int]] = {}
        self._pools: dict[int, list[int]] = {}

    def neighbors(self, v: int) -> list[int]:
        if v not in self._lists:
            self._lists[v] = self.host.neighbors(v).tolist()
        return self._lists[v]

    def adjacent(self, u: int, v: int) -> bool:
        if self.host.is_complete:
            return u != v
        if u not in self._sets:
            self._sets[u] = set(self.neighbors(u))
        return v in self._sets[u]

    def pool(self, min_degree: int) -> list[int]:
        if min_degree not in self._pools:
            self._pools[min_degree] = np.flatnonzero(self.degrees >= min_degree).tolist()
        return self._pools[min_degree]


def search_order(p: Pattern) -> list[int]:
    """依 (已嵌入鄰居數, 度數) 遞減排序圖樣頂點，同分取較小編號。"""
    order: list[int] = []
    placed: set[int] = set()
    remaining = set(range(p.k))
    while remaining:
        best = max(remaining, key=lambda v: (len(p.adjacency[v] & placed), p.degrees[v], -v))
        order.append(best)
        placed.add(best)
        remaining.remove(best)
    return order


def iter_embeddings(host: Graph, p: Pattern, forbidden: frozenset[int] | set[int] = frozenset()) -> Iterator[Embedding]:
    """回溯列舉所有單射且保邊的映射（子圖包含，非誘導）。"""
    if p.k > host.n - len(forbidden):
        return
    view = _HostView(host)
    order = search_order(p)
    image = [-1] * p.k
    used = set(forbidden)

    def extend(depth: int) -> Iterator[Embedding]:
        if depth == p.k:
            yield Embedding(tuple(image))
            return
        v = order[depth]
        need = p.degrees[v]
        mapped = [image[u] for u in p.adjacency[v] if image[u] >= 0]
        if mapped:
            anchor = min(mapped, key=lambda h: view.degrees[h])
            candidates = view.neighbors(anchor)
            others = [h for h in mapped if h != anchor]
        else:
            candidates = view.pool(need)
            others = []
        for c in candidates:
            if c in used or view.degrees[c] < need:
                continue
            if not all(view.adjacent(c, h) for h in others):
                continue
            image[v] = c
            used.add(c)
            yield from extend(depth + 1)
            used.discard(c)
        image[v] = -1

    yield from extend(0)


def contains(host: Graph, p: Pattern) -> Embedding | None:
    if host.edge_count < p.ell:
        return None
    return next(iter_embeddings(host, p), None)


def count_embeddings(host: Graph, p: Pattern) -> int:
    if host.edge_count > MAX_COUNT_HOST_EDGES:
        raise SizeLimitError("計數的底圖邊數超過上限", limit=MAX_COUNT_HOST_EDGES, required=host.edge_count)
    if host.edge_count < p.ell:
        return 0
    return sum(1 for _ in iter_embeddings(host, p))


def count_copies(host: Graph, p: Pattern) -> int:
    """副本數 = 嵌入數 / |Aut(H)|。"""
    embeddings = count_embeddings(host, p)
    copies, remainder = divmod(embeddings, p.aut_count)
    if remainder:
        raise AssertionError(f"嵌入數 {embeddings} 不能被 |Aut|={p.aut_count} 整除")
    return copies


def find_disjoint_copies(host: Graph, components: Sequence[Pattern]) -> list[Embedding] | None:
    """依序嵌入各分量並避開先前已用頂點；必要時跨分量回溯。"""

    def place(i: int, used: frozenset[int]) -> list[Embedding] | None:
        if i == len(components):
            return []
        for emb in iter_embeddings(host, components[i], used):
            rest = place(i + 1, used | emb.vertices())
            if rest is not None:
                return [emb] + rest
        return None

    return place(0, frozenset())


def find_disjoint_copies_segmented(w: WalkRecord, components: Sequence[Pattern]) -> list[Embedding] | None:
    """森林證明中的分段策略：s = ⌊t/z⌋，第 i 個分量只在第 i 段的軌跡中找，並避開先前副本。"""
    z = len(components)
    if z == 0:
        return []
    s = w.t // z
    if s == 0:
        return None
    n = w.host.n
    used: frozenset[int] = frozenset()
    found: list[Embedding] = []
    for i, component in enumerate(components):
        # 第 i 段只取位置 [i·s, (i+1)·s)，段與段之間不共用任何一步
        keys = trace_keys(w.steps[i * s:(i + 1) * s], n)
        segment = Graph.from_edges(n, np.stack(np.divmod(keys, n), axis=1))
        emb = next(iter_embeddings(segment, component, used), None)
        if emb is None:
            logger.info("Segment lacks a disjoint copy", extra={"segment": i, "s": s})
            return None
        found.append(emb)
        used = used | emb.vertices()
    return found
