import io
import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from src.api.schemas import ExperimentConfig
from src.core.logger import get_logger
from src.tracelab.experiment import sweep, write_sweep_csv
from src.tracelab.graph import complete_graph, sample_gnp
from src.tracelab.oracle import (
    count_time_sets_formula,
    defective_fraction,
    enumerate_time_sets,
    exact_containment_probability,
    joint_containment_probability,
    worst_case_mixing_profile,
)
from src.tracelab.pattern import (
    Pattern,
    edge_components,
    is_trail_cover,
    min_trail_cover_bruteforce,
    non_isomorphic_trees,
    odd_count,
    parse_pattern,
    trail_decomposition,
    trail_number,
)
from src.tracelab.search import contains
from src.tracelab.walk import WalkRecord, hit_times, make_rng, run_walk_block, trace

logger = get_logger(__name__)


@dataclass
class SuiteResult:
    name: str
    checked: int = 0
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def random_connected_pattern(rng: np.random.Generator, max_vertices: int = 8, max_edges: int = 8) -> Pattern:
    """隨機生成樹再補邊，得到連通的小圖。"""
    k = int(rng.integers(2, max_vertices + 1))
    edges = {(int(rng.integers(0, v)), v) for v in range(1, k)}
    candidates = [(u, v) for u in range(k) for v in range(u + 1, k) if (u, v) not in edges]
    extra = int(rng.integers(0, max_edges - len(edges) + 1))
    if extra and candidates:
        picks = rng.choice(len(candidates), size=min(extra, len(candidates)), replace=False)
        edges.update(candidates[i] for i in picks)
    return Pattern(k, edges)


def check_trail_number(samples: int = 1000, seed: int = 0) -> SuiteResult:
    result = SuiteResult("trail_number")
    rng = make_rng(seed)
    for _ in range(samples):
        p = random_connected_pattern(rng)
        decomposition = trail_decomposition(p)
        expected = max(odd_count(p.edges) // 2, 1)
        brute = min_trail_cover_bruteforce(p)
        result.checked += 1
        if not decomposition.part_count == expected == brute or not is_trail_cover(p, decomposition.trails):
            result.failures.append(f"{p.name}: parts={decomposition.part_count} formula={expected} brute={brute}")
    return result


def check_subtree_monotonicity(max_vertices: int = 7) -> SuiteResult:
    """樹 T₂ 的每棵子樹 T₁ 都滿足 ρ(T₁) ≤ ρ(T₂)。"""
    result = SuiteResult("subtree_monotonicity")
    for k in range(2, max_vertices + 1):
        for tree in non_isomorphic_trees(k):
            rho = trail_number(tree)
            for mask in range(1, 1 << len(tree)):
                sub = [e for i, e in enumerate(tree) if mask >> i & 1]
                if len(edge_components(sub)) != 1:
                    continue
                result.checked += 1
                if trail_number(sub) > rho:
                    result.failures.append(f"{list(tree)} ⊇ {sub}: {trail_number(sub)} > {rho}")
    return result


def check_tree_intersection(max_vertices: int = 6, host_n: int = 8) -> SuiteResult:
    """K_host_n 中相交的兩份標號樹副本：k' − ℓ' − 2 + ρ(T₁ ∪ T₂)/ρ(T) ≥ 0。"""
    result = SuiteResult("tree_intersection")
    for k in range(2, max_vertices + 1):
        for tree in non_isomorphic_trees(k):
            rho = trail_number(tree)
            first = {(min(u, v), max(u, v)) for u, v in tree}
            first_vertices = set(range(k))
            # 由 K_n 的對稱性，第一份副本固定在 0..k-1
            for image in itertools.permutations(range(host_n), k):
                shared = first_vertices.intersection(image)
                if not shared:
                    continue
                second = {(min(image[u], image[v]), max(image[u], image[v])) for u, v in tree}
                k_shared = len(shared)
                ell_shared = len(first & second)
                rho_union = trail_number(sorted(first | second))
                result.checked += 1
                if k_shared - ell_shared - 2 + Fraction(rho_union, rho) < 0:
                    result.failures.append(f"{list(tree)} at {image}: k'={k_shared} l'={ell_shared} rho^={rho_union}")
    return result


def check_density_monotonicity(samples: int = 300, seed: int = 0) -> SuiteResult:
    """H' ⊆ H ⇒ m₀(H') ≤ m₀(H)。"""
    result = SuiteResult("density_monotonicity")
    rng = make_rng(seed)
    for _ in range(samples):
        p = random_connected_pattern(rng)
        keep = rng.random(p.ell) < 0.6
        sub = [e for e, kept in zip(p.edges, keep) if kept]
        if not sub:
            continue
        result.checked += 1
        if Pattern(p.k, sub).m0 > p.m0:
            result.failures.append(f"{p.name} ⊇ {sub}")
    return result


def check_time_set_counts(t_max: int = 12) -> SuiteResult:
    result = SuiteResult("time_set_counts")
    for t in range(1, t_max + 1):
        for w in range(1, t + 1):
            for r in range(1, w + 1):
                enumerated = enumerate_time_sets(t, w, r, 1).count
                result.checked += 1
                if enumerated != count_time_sets_formula(t, w, r):
                    result.failures.append(f"t={t} w={w} r={r}: enum={enumerated}")
    return result


def check_defective_fraction(t_max: int = 14, buffers: tuple[int, ...] = (1, 2)) -> SuiteResult:
    result = SuiteResult("defective_fraction")
    for buffer in buffers:
        for t in range(2, t_max + 1):
            for w in range(1, t + 1):
                for r in range(1, min(w, t - w + 1) + 1):
                    counts = enumerate_time_sets(t, w, r, buffer)
                    clean = counts.histogram.get(0, 0)
                    result.checked += 1
                    if defective_fraction(t, w, r, buffer) != 1 - Fraction(clean, counts.count):
                        result.failures.append(f"t={t} w={w} r={r} B={buffer}")
    return result


def check_coverage_inequality(trials: int = 2000, seed: int = 0) -> SuiteResult:
    """每次成功包含時，該副本的命中時間集合滿足 r(W) ≥ ℓ + ρ − |W|。"""
    result = SuiteResult("coverage_inequality")
    patterns = [parse_pattern(name) for name in ("triangle", "star-3", "path-4")]
    hosts = [(complete_graph(20), 60), (sample_gnp(30, 0.5, make_rng(seed)), 120)]
    for host, t in hosts:
        rngs = [make_rng([seed, host.n, i]) for i in range(trials)]
        for row in run_walk_block(host, t, rngs):
            walk = WalkRecord(host, row)
            trace_graph = trace(walk)
            for p in patterns:
                embedding = contains(trace_graph, p)
                if embedding is None:
                    continue
                edges = [(embedding.image[u], embedding.image[v]) for u, v in p.edges]
                times = hit_times(walk, edges)
                result.checked += 1
                if times.r < p.ell + p.rho - times.w:
                    result.failures.append(f"{p.name} on n={host.n}: r={times.r} w={times.w}")
    return result


def check_correlation(t_max: int = 20) -> SuiteResult:
    """K_6 上兩條不相交邊：P(A∧B) ≤ P(A)·P(B)。"""
    result = SuiteResult("negative_correlation")
    g = complete_graph(6)
    for t in range(t_max + 1):
        both, a, b = joint_containment_probability(g, [(0, 1)], [(2, 3)], t)
        result.checked += 1
        if both > a * b + 1e-12:
            result.failures.append(f"t={t}: {both} > {a * b}")
    return result


def check_dense_regime(n: int = 100, t: int = 2000) -> SuiteResult:
    result = SuiteResult("dense_regime")
    ratio = exact_containment_probability(complete_graph(n), [(0, 1)], t) / (2 * t / n ** 2)
    result.checked = 1
    if not 0.9 <= ratio <= 1.1:
        result.failures.append(f"ratio={ratio:.4f}")
    return result


def check_mixing(n: int = 300, p: float = 0.1, steps: int = 10, seed: int = 0) -> SuiteResult:
    result = SuiteResult("mixing")
    g = sample_gnp(n, p, make_rng(seed))
    profile = worst_case_mixing_profile(g, steps)
    result.checked = 1
    if profile[-1] >= 0.01:
        result.failures.append(f"worst TV after {steps} steps = {profile[-1]:.4f}")
    return result


def check_sweep_determinism() -> SuiteResult:
    result = SuiteResult("sweep_determinism")
    cfg = ExperimentConfig(base_model="gnp", n_list=[20, 12], p=0.3, pattern="triangle", t_list=[30, 0, 10], trials=40, master_seed=7)
    outputs = []
    for workers in (1, 2):
        buffer = io.StringIO()
        write_sweep_csv(cfg, sweep(cfg, workers=workers), buffer)
        outputs.append(buffer.getvalue())
    result.checked = 1
    if outputs[0] != outputs[1]:
        result.failures.append("sweep output depends on the worker count")
    return result


def _quick_suites() -> list[Callable[[], SuiteResult]]:
    return [
        lambda: check_trail_number(200),
        lambda: check_subtree_monotonicity(6),
        lambda: check_tree_intersection(5, 7),
        lambda: check_density_monotonicity(200),
        lambda: check_time_set_counts(12),
        lambda: check_defective_fraction(12),
        lambda: check_correlation(20),
        lambda: check_dense_regime(),
        lambda: check_mixing(),
        lambda: check_coverage_inequality(300),
        check_sweep_determinism,
    ]


def _full_suites() -> list[Callable[[], SuiteResult]]:
    return [
        lambda: check_trail_number(1000),
        lambda: check_subtree_monotonicity(7),
        lambda: check_tree_intersection(6, 8),
        lambda: check_density_monotonicity(1000),
        lambda: check_time_set_counts(12),
        lambda: check_defective_fraction(14),
        lambda: check_correlation(20),
        lambda: check_dense_regime(),
        lambda: check_mixing(),
        lambda: check_coverage_inequality(5000),
        check_sweep_determinism,
    ]


def run_selftest(full: bool = False) -> list[SuiteResult]:
    results = []
    for suite in (_full_suites() if full else _quick_suites()):
        outcome = suite()
        results.append(outcome)
        log = logger.info if outcome.passed else logger.error
        log("Selftest suite finished", extra={"suite": outcome.name, "checked": outcome.checked, "failures": len(outcome.failures)})
    return results


def summarize(results: list[SuiteResult]) -> str:
    width = max((len(r.name) for r in results), default=0)
    lines = []
    for r in results:
        status = "ok" if r.passed else f"FAILED ({len(r.failures)})"
        lines.append(f"{r.name:<{width}}  {r.checked:>6}  {status}")
        lines.extend(f"    {failure}" for failure in r.failures[:5])
    passed = sum(r.passed for r in results)
    lines.append(f"{passed}/{len(results)} suites passed")
    return "\n".join(lines)


def all_passed(results: list[SuiteResult]) -> bool:
    return all(r.passed for r in results)
