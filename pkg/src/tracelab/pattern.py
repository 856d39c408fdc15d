import json
import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Any, Iterable, Sequence

from src.core.errors import InvalidArgumentError, PatternParseError, SizeLimitError
from src.core.logger import get_logger

logger = get_logger(__name__)

MAX_PATTERN_VERTICES = 12
MAX_PATTERN_EDGES = 20
MAX_BRUTEFORCE_EDGES = 8

BASE_MODELS = ("complete", "gnp", "gnm")


# ----------------------------------------------------------------------
# 任意標籤邊集合上的工具函式
# ----------------------------------------------------------------------
def _adjacency(edges: Iterable[tuple[Any, Any]]) -> dict[Any, list[Any]]:
    adj: dict[Any, list[Any]] = {}
    for u, v in edges:
        adj.setdefault(u, []).append(v)
        adj.setdefault(v, []).append(u)
    return adj


def odd_count(edges: Iterable[tuple[Any, Any]]) -> int:
    return sum(1 for nbrs in _adjacency(edges).values() if len(nbrs) % 2)


def edge_components(edges: Sequence[tuple[Any, Any]]) -> list[list[tuple[Any, Any]]]:
    """依連通性分組邊集合（只含帶邊的分量），順序依分量中的最小頂點。"""
    adj = _adjacency(edges)
    label: dict[Any, int] = {}
    next_id = 0
    for root in sorted(adj):
        if root in label:
            continue
        root_id = next_id
        next_id += 1
        label[root] = root_id
        stack = [root]
        while stack:
            v = stack.pop()
            for w in adj[v]:
                if w not in label:
                    label[w] = root_id
                    stack.append(w)
    groups: dict[int, list[tuple[Any, Any]]] = {}
    for u, v in edges:
        groups.setdefault(label[u], []).append((u, v))
    return [groups[i] for i in sorted(groups)]


def trail_number(edges: Sequence[tuple[Any, Any]]) -> int:
    """最少邊不相交 trail 覆蓋數：各帶邊分量取 max{odd/2, 1} 後加總。"""
    return sum(max(odd_count(comp) // 2, 1) for comp in edge_components(edges))


def _tree_centers(adj: dict[Any, list[Any]]) -> list[Any]:
    degree = {v: len(nbrs) for v, nbrs in adj.items()}
    layer = [v for v, d in degree.items() if d <= 1]
    remaining = len(adj)
    while remaining > 2:
        remaining -= len(layer)
        nxt = []
        for v in layer:
            for w in adj[v]:
                degree[w] -= 1
                if degree[w] == 1:
                    nxt.append(w)
        layer = nxt
    return layer


def tree_canonical_form(edges: Sequence[tuple[Any, Any]]) -> str:
    """樹的同構不變編碼：以中心為根的括號字串，兩個中心時取較小者。"""
    if not edges:
        return "()"
    adj = _adjacency(edges)

    def encode(v: Any, parent: Any) -> str:
        return "(" + "".join(sorted(encode(w, v) for w in adj[v] if w != parent)) + ")"

    return min(encode(c, None) for c in _tree_centers(adj))


@lru_cache(maxsize=None)
def non_isomorphic_trees(k: int) -> tuple[tuple[tuple[int, int], ...], ...]:
    """k 個頂點（編號 0..k-1）的所有互不同構的樹；由 k-1 頂點的樹逐一加葉生成。"""
    if k < 1:
        raise InvalidArgumentError("樹至少需要 1 個頂點。")
    if k == 1:
        return ((),)
    seen: dict[str, tuple[tuple[int, int], ...]] = {}
    for tree in non_isomorphic_trees(k - 1):
        for v in range(k - 1):
            grown = tree + ((v, k - 1),)
            seen.setdefault(tree_canonical_form(grown), grown)
    return tuple(seen[key] for key in sorted(seen))


# ----------------------------------------------------------------------
# Pattern
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class TrailDecomposition:
    trails: list[tuple[int, ...]]
    part_count: int


@dataclass(frozen=True)
class ThresholdPrediction:
    base_model: str
    exponent: Fraction | None
    formula_name: str
    applicable: bool
    reason: str = ""
    warnings: list[str] = field(default_factory=list)


class Pattern:
    """固定的小圖 H 與其結構不變量（k、ℓ、m₀、ρ、θ、|Aut|）。"""

    def __init__(self, k: int, edges: Iterable[tuple[int, int]], name: str | None = None):
        normalized = sorted({(min(u, v), max(u, v)) for u, v in edges})
        if k > MAX_PATTERN_VERTICES:
            raise SizeLimitError("圖樣頂點數超過上限", limit=MAX_PATTERN_VERTICES, required=k)
        if len(normalized) > MAX_PATTERN_EDGES:
            raise SizeLimitError("圖樣邊數超過上限", limit=MAX_PATTERN_EDGES, required=len(normalized))
        for u, v in normalized:
            if u == v:
                raise InvalidArgumentError("圖樣不允許自環。")
            if not 0 <= u < v < k:
                raise InvalidArgumentError(f"邊 ({u}, {v}) 超出頂點範圍 [0, {k})。")

        self.k = k
        self.edges: tuple[tuple[int, int], ...] = tuple(normalized)
        self.ell = len(self.edges)
        self.name = name or _canonical_name(k, self.edges)

        self.adjacency: tuple[frozenset[int], ...] = tuple(
            frozenset(w for e in self.edges for w in e if v in e and w != v) for v in range(k)
        )
        self.degrees: tuple[int, ...] = tuple(len(nbrs) for nbrs in self.adjacency)
        self.isolated_vertices: tuple[int, ...] = tuple(v for v in range(k) if self.degrees[v] == 0)

        comps = edge_components(list(self.edges))
        self.component_edges: tuple[tuple[tuple[int, int], ...], ...] = tuple(tuple(c) for c in comps)
        self.component_count = len(comps) + len(self.isolated_vertices)
        self.rho = sum(max(odd_count(c) // 2, 1) for c in comps)
        self.theta = max((odd_count(c) for c in comps), default=0)
        self.m0 = _max_density(k, self.adjacency) if self.ell else Fraction(0)
        self.aut_count = _count_automorphisms(k, self.adjacency, self.degrees)

    @property
    def is_forest(self) -> bool:
        return self.ell >= 1 and self.m0 < 1

    @property
    def is_tree(self) -> bool:
        return self.is_forest and len(self.component_edges) == 1 and not self.isolated_vertices

    def components(self) -> list["Pattern"]:
        """帶邊分量，各自重新編號為 0..k_i-1。"""
        result = []
        for comp in self.component_edges:
            vertices = sorted({w for e in comp for w in e})
            relabel = {v: i for i, v in enumerate(vertices)}
            result.append(Pattern(len(vertices), [(relabel[u], relabel[v]) for u, v in comp]))
        return result

    def to_dict(self) -> dict[str, Any]:
        return {"k": self.k, "edges": [list(e) for e in self.edges]}

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Pattern) and self.k == other.k and self.edges == other.edges

    def __hash__(self) -> int:
        return hash((self.k, self.edges))

    def __repr__(self) -> str:
        return f"Pattern({self.name!r}, k={self.k}, ell={self.ell}, m0={self.m0}, rho={self.rho}, theta={self.theta})"


def _canonical_name(k: int, edges: Sequence[tuple[int, int]]) -> str:
    return json.dumps({"k": k, "edges": [list(e) for e in edges]}, separators=(",", ":"))


def _max_density(k: int, adjacency: Sequence[frozenset[int]]) -> Fraction:
    """列舉所有非空頂點子集的誘導邊密度，取精確有理數最大值。"""
    adj_mask = [sum(1 << w for w in nbrs) for nbrs in adjacency]
    induced = [0] * (1 << k)
    best = Fraction(0)
    for mask in range(1, 1 << k):
        low = (mask & -mask).bit_length() - 1
        rest = mask & (mask - 1)
        induced[mask] = induced[rest] + (adj_mask[low] & rest).bit_count()
        density = Fraction(induced[mask], mask.bit_count())
        if density > best:
            best = density
    return best


def _count_automorphisms(k: int, adjacency: Sequence[frozenset[int]], degrees: Sequence[int]) -> int:
    image = [-1] * k
    used = [False] * k

    def extend(v: int) -> int:
        if v == k:
            return 1
        total = 0
        for cand in range(k):
            if used[cand] or degrees[cand] != degrees[v]:
                continue
            if any((u in adjacency[v]) != (image[u] in adjacency[cand]) for u in range(v)):
                continue
            image[v] = cand
            used[cand] = True
            total += extend(v + 1)
            used[cand] = False
        image[v] = -1
        return total

    return extend(0)


# ----------------------------------------------------------------------
# 解析
# ----------------------------------------------------------------------
_BUILTIN = re.compile(r"^(path|star|cycle|k)-(\d+)$", re.IGNORECASE)


def builtin_pattern(name: str) -> Pattern | None:
    key = name.strip().lower()
    if key == "triangle":
        return Pattern(3, [(0, 1), (1, 2), (0, 2)], name="triangle")
    if key == "edge":
        return Pattern(2, [(0, 1)], name="edge")
    match = _BUILTIN.match(key)
    if not match:
        return None
    family, size = match.group(1), int(match.group(2))
    canonical = f"{family if family != 'k' else 'K'}-{size}"
    if family == "path":
        if size < 1:
            raise PatternParseError("path-L 需要 L ≥ 1", position=1)
        return Pattern(size + 1, [(i, i + 1) for i in range(size)], name=canonical)
    if family == "star":
        if size < 1:
            raise PatternParseError("star-D 需要 D ≥ 1", position=1)
        return Pattern(size + 1, [(0, i) for i in range(1, size + 1)], name=canonical)
    if family == "cycle":
        if size < 3:
            raise PatternParseError("cycle-L 需要 L ≥ 3", position=1)
        return Pattern(size, [(i, (i + 1) % size) for i in range(size)], name=canonical)
    if size < 1:
        raise PatternParseError("K-r 需要 r ≥ 1", position=1)
    return Pattern(size, [(u, v) for u in range(size) for v in range(u + 1, size)], name=canonical)


def _validated(k: int | None, pairs: list[tuple[int, int]], name: str | None) -> Pattern:
    seen: set[tuple[int, int]] = set()
    for position, (u, v) in enumerate(pairs, start=1):
        if u < 0 or v < 0:
            raise PatternParseError(f"頂點編號不可為負數：({u}, {v})", position=position)
        if u == v:
            raise PatternParseError(f"不允許自環：({u}, {v})", position=position)
        key = (min(u, v), max(u, v))
        if key in seen:
            raise PatternParseError(f"重複邊：({u}, {v})", position=position)
        seen.add(key)
        if k is not None and max(u, v) >= k:
            raise PatternParseError(f"頂點超出 k={k}：({u}, {v})", position=position)
    if len(pairs) > MAX_PATTERN_EDGES:
        raise PatternParseError(f"邊數 {len(pairs)} 超過上限 {MAX_PATTERN_EDGES}", position=MAX_PATTERN_EDGES + 1)
    vertex_count = k if k is not None else (max((max(e) for e in pairs), default=-1) + 1)
    if vertex_count > MAX_PATTERN_VERTICES:
        raise PatternParseError(f"頂點數 {vertex_count} 超過上限 {MAX_PATTERN_VERTICES}", position=len(pairs) or 1)
    pattern = Pattern(vertex_count, pairs, name=name)
    if pattern.isolated_vertices:
        logger.warning(
            "Pattern has isolated vertices",
            extra={"pattern": pattern.name, "isolated": list(pattern.isolated_vertices)},
        )
    return pattern


def _parse_json(payload: dict[str, Any], name: str | None) -> Pattern:
    if "edges" not in payload:
        raise PatternParseError("JSON 圖樣缺少 'edges' 欄位", position=1)
    k = payload.get("k")
    if k is not None and (not isinstance(k, int) or isinstance(k, bool) or k < 0):
        raise PatternParseError("'k' 必須為非負整數", position=1)
    pairs = []
    for position, item in enumerate(payload["edges"], start=1):
        if (
            not isinstance(item, (list, tuple))
            or len(item) != 2
            or not all(isinstance(x, int) and not isinstance(x, bool) for x in item)
        ):
            raise PatternParseError(f"邊格式錯誤：{item!r}", position=position)
        pairs.append((item[0], item[1]))
    return _validated(k, pairs, name)


def _parse_text(text: str) -> Pattern:
    items = [item.strip() for item in re.split(r"[\n,;]+", text)]
    pairs = []
    position = 0
    for item in items:
        item = item.split("#", 1)[0].strip()
        if not item:
            continue
        position += 1
        parts = re.split(r"[\s\-]+", item)
        if len(parts) != 2 or not all(re.fullmatch(r"\d+", x) for x in parts):
            raise PatternParseError(f"無法解析邊：{item!r}", position=position)
        pairs.append((int(parts[0]), int(parts[1])))
    if not pairs:
        raise PatternParseError("圖樣描述為空", position=1)
    return _validated(None, pairs, None)


def parse_pattern(spec: str | dict[str, Any]) -> Pattern:
    """解析圖樣：JSON（字串或 dict）、內建名稱，或逐行 "u v" 邊清單。"""
    if isinstance(spec, dict):
        return _parse_json(spec, None)
    text = spec.strip()
    if text.startswith("{"):
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise PatternParseError(f"JSON 格式錯誤：{exc.msg}", position=exc.pos + 1) from exc
        if not isinstance(payload, dict):
            raise PatternParseError("JSON 圖樣必須為物件", position=1)
        return _parse_json(payload, None)
    named = builtin_pattern(text)
    if named is not None:
        return named
    return _parse_text(text)


# ----------------------------------------------------------------------
# 不變量運算
# ----------------------------------------------------------------------
def max_density(p: Pattern) -> Fraction:
    if p.ell < 1:
        raise InvalidArgumentError("空圖樣沒有定義 m₀。")
    return p.m0


def automorphism_count(p: Pattern) -> int:
    return p.aut_count


def _euler_circuit(start: int, adjacency: dict[int, list[tuple[int, int]]], edge_total: int) -> list[tuple[int, int, int]]:
    """Hierholzer 演算法；回傳依序的 (from, to, edge_id)。"""
    used = [False] * edge_total
    pointer = {v: 0 for v in adjacency}
    stack: list[tuple[int, int | None, int | None]] = [(start, None, None)]
    circuit: list[tuple[int, int, int]] = []
    while stack:
        v, prev, eid = stack[-1]
        nbrs = adjacency[v]
        while pointer[v] < len(nbrs) and used[nbrs[pointer[v]][1]]:
            pointer[v] += 1
        if pointer[v] == len(nbrs):
            stack.pop()
            if prev is not None:
                circuit.append((prev, v, eid))
        else:
            w, next_id = nbrs[pointer[v]]
            used[next_id] = True
            stack.append((w, v, next_id))
    circuit.reverse()
    return circuit


def _split_component(comp: Sequence[tuple[int, int]]) -> list[tuple[int, ...]]:
    real = list(comp)
    odd = sorted(v for v, nbrs in _adjacency(real).items() if len(nbrs) % 2)
    virtual = [(odd[i], odd[i + 1]) for i in range(0, len(odd), 2)]
    all_edges = real + virtual
    adjacency: dict[int, list[tuple[int, int]]] = {}
    for eid, (u, v) in enumerate(all_edges):
        adjacency.setdefault(u, []).append((v, eid))
        adjacency.setdefault(v, []).append((u, eid))
    circuit = _euler_circuit(min(adjacency), adjacency, len(all_edges))

    if not virtual:
        return [tuple([circuit[0][0]] + [b for _, b, _ in circuit])]

    is_virtual = [eid >= len(real) for _, _, eid in circuit]
    last_virtual = max(i for i, flag in enumerate(is_virtual) if flag)
    rotated = circuit[last_virtual + 1:] + circuit[:last_virtual + 1]
    trails: list[tuple[int, ...]] = []
    current = [rotated[0][0]]
    for a, b, eid in rotated:
        if eid >= len(real):
            if len(current) > 1:
                trails.append(tuple(current))
            current = [b]
        else:
            current.append(b)
    return trails


def trail_decomposition(p: Pattern) -> TrailDecomposition:
    """以奇點配對加虛擬邊、Euler tour 後刪除虛擬邊，得到最少 trail 分解。"""
    if p.ell < 1:
        raise InvalidArgumentError("空圖樣沒有 trail 分解。")
    trails: list[tuple[int, ...]] = []
    for comp in p.component_edges:
        trails.extend(_split_component(comp))
    if len(trails) != p.rho:
        raise AssertionError(f"trail 數 {len(trails)} 與 ρ={p.rho} 不符")
    return TrailDecomposition(trails=trails, part_count=len(trails))


def is_trail_cover(p: Pattern, trails: Sequence[Sequence[int]]) -> bool:
    """檢查 trails 為 H 中邊不相交的 trail，且聯集恰為 E(H)。"""
    covered: list[tuple[int, int]] = []
    for trail in trails:
        for a, b in zip(trail, trail[1:]):
            covered.append((min(a, b), max(a, b)))
    return len(covered) == len(set(covered)) and sorted(covered) == list(p.edges)


def min_trail_cover_bruteforce(p: Pattern) -> int:
    """窮舉所有 trail（以邊遮罩表示）後，對邊集合分割做 DP 求最少 trail 數。"""
    if p.ell > MAX_BRUTEFORCE_EDGES:
        raise SizeLimitError("暴力 trail 覆蓋的邊數超過上限", limit=MAX_BRUTEFORCE_EDGES, required=p.ell)
    if p.ell == 0:
        return 0
    incident: dict[int, list[tuple[int, int]]] = {}
    for eid, (u, v) in enumerate(p.edges):
        incident.setdefault(u, []).append((v, eid))
        incident.setdefault(v, []).append((u, eid))

    trail_masks: set[int] = set()

    def extend(v: int, mask: int) -> None:
        for w, eid in incident.get(v, []):
            bit = 1 << eid
            if mask & bit:
                continue
            trail_masks.add(mask | bit)
            extend(w, mask | bit)

    for start in incident:
        extend(start, 0)

    full = (1 << p.ell) - 1
    infinity = p.ell + 1
    best = [infinity] * (full + 1)
    best[0] = 0
    masks = sorted(trail_masks)
    for mask in range(1, full + 1):
        low = mask & -mask
        for trail in masks:
            if trail & low and trail & mask == trail:
                candidate = best[mask ^ trail] + 1
                if candidate < best[mask]:
                    best[mask] = candidate
    return best[full]


# ----------------------------------------------------------------------
# 門檻預測
# ----------------------------------------------------------------------
def predicted_threshold(p: Pattern, base: str) -> ThresholdPrediction:
    if p.ell < 1:
        raise InvalidArgumentError("空圖樣沒有出現門檻。")
    if base not in BASE_MODELS:
        raise InvalidArgumentError(f"未知的底圖模型：{base}")
    warnings = []
    if p.isolated_vertices:
        warnings.append(
            "pattern has isolated vertices: appearance also needs enough distinct visited vertices; "
            "the prediction concerns the edge set only"
        )

    if base in ("gnp", "gnm"):
        if p.m0 >= 1:
            return ThresholdPrediction(base, 2 - 1 / p.m0, "cyclic_gnp", True, "t ~ n^(2-1/m0)", warnings)
        return ThresholdPrediction(
            base,
            None,
            "open_problem",
            False,
            "open problem: the threshold for forests in the trace of a walk on a random graph is unknown",
            warnings,
        )

    if p.m0 >= 1:
        return ThresholdPrediction(
            base, 2 - 1 / p.m0, "cyclic_gnp", True, "p = 1 instance of the m0 >= 1 theorem", warnings
        )
    if p.theta == 2:
        return ThresholdPrediction(base, Fraction(0), "path_constant", True, "every component is a path: t >> 1", warnings)
    formula = "tree_complete" if len(p.component_edges) == 1 else "forest_complete"
    return ThresholdPrediction(base, 1 - Fraction(2, p.theta), formula, True, "t ~ n^(1-2/theta)", warnings)


def static_threshold(p: Pattern) -> ThresholdPrediction:
    """靜態 G(n, m) 的出現門檻：m ~ n^(2-1/m0)。"""
    if p.ell < 1:
        raise InvalidArgumentError("空圖樣沒有出現門檻。")
    return ThresholdPrediction("gnm", 2 - 1 / p.m0, "static_gnm", True, "m ~ n^(2-1/m0) in the static random graph")


def tree_threshold_by_rho(p: Pattern) -> Fraction:
    """樹在 K_n 上的門檻指數的 ρ 形式：1 - 1/ρ。"""
    if not p.is_tree:
        raise InvalidArgumentError("僅適用於樹。")
    return 1 - Fraction(1, p.rho)


def key_lemma_order(n: int, p: float, t: float, ell: int, rho: int) -> float:
    """固定副本被軌跡包含機率的量級：(np)^(-ℓ) Σ_{r=ρ}^{ℓ} (t/n)^r。"""
    return (n * p) ** (-ell) * sum((t / n) ** r for r in range(rho, ell + 1))


def key_lemma_dense_limit(n: int, p: float, t: float, ell: int) -> float:
    """t ≫ n 時的漸近值 (2t / (n² p))^ℓ。"""
    return (2.0 * t / (n * n * p)) ** ell


def expected_copies_order(n: int, t: float, k: int, ell: int, rho: int) -> float:
    """軌跡中副本數期望的量級：n^(k-ℓ) Σ_{r=ρ}^{ℓ} (t/n)^r。"""
    return float(n) ** (k - ell) * sum((t / n) ** r for r in range(rho, ell + 1))
