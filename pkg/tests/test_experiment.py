import io
import math

import numpy as np
import pytest
from pydantic import ValidationError

from src.api.schemas import ExperimentConfig, HalfTimeResult, ProbEstimate
from src.core.config import PROJECT_ROOT, get_settings
from src.core.errors import ConvergenceError, InvalidArgumentError
from src.tracelab import experiment
from src.tracelab.experiment import (
    CSV_COLUMNS,
    analyze_pattern,
    collect_trials,
    derive_seed,
    estimate_copy_count,
    estimate_forest_strategies,
    estimate_probability,
    estimate_static_probability,
    find_half_time,
    fit_threshold_exponent,
    load_config,
    point_buffer,
    point_key,
    read_halftime_points,
    resolve_workers,
    sweep,
    time_set_statistics,
    wilson_interval,
    wilson_sigma,
    write_halftime_csv,
    write_sweep_csv,
)
from src.tracelab.graph import complete_graph
from src.tracelab.oracle import exact_containment_probability
from src.tracelab.pattern import parse_pattern


def _cfg(**overrides) -> ExperimentConfig:
    values = {"base_model": "complete", "n_list": [20], "pattern": "edge", "trials": 200, "master_seed": 1}
    values.update(overrides)
    return ExperimentConfig(**values)


def _csv(cfg, rows) -> str:
    out = io.StringIO()
    write_sweep_csv(cfg, rows, out)
    return out.getvalue()


def test_derive_seed_is_stable_and_distinct():
    key = point_key(_cfg(), 20)
    assert derive_seed(5, key, 0) == derive_seed(5, key, 0)
    seeds = {derive_seed(5, key, i) for i in range(1000)}
    assert len(seeds) == 1000
    assert derive_seed(6, key, 0) != derive_seed(5, key, 0)
    assert 0 <= derive_seed(5, key, 0) < 2 ** 64


def test_point_key_ignores_t_but_not_mode():
    assert point_key(_cfg(), 20) != point_key(_cfg(), 21)
    assert point_key(_cfg(base_model="gnp", p=0.3), 20) != point_key(_cfg(base_model="gnp", p=0.3, fixed_graph=True), 20)


def test_wilson_interval_properties():
    low, high = wilson_interval(0, 100)
    assert low == 0.0 and 0 < high < 0.05
    low, high = wilson_interval(100, 100)
    assert high == 1.0 and low > 0.95
    low, high = wilson_interval(37, 80)
    assert low < 37 / 80 < high
    assert wilson_sigma(50, 100) == pytest.approx(0.05, rel=0.05)
    with pytest.raises(InvalidArgumentError):
        wilson_interval(3, 0)


def test_config_validation():
    with pytest.raises(ValidationError):
        _cfg(trials=0)
    with pytest.raises(ValidationError):
        _cfg(base_model="gnp", p=1.5)
    with pytest.raises(ValidationError):
        _cfg(base_model="gnp")
    with pytest.raises(ValidationError):
        _cfg(master_seed=-1)
    with pytest.raises(ValidationError):
        _cfg(buffer_c=0)
    assert _cfg(base_model="gnp", p=0.2, fixed_graph=True).mode == "quenched"


def test_empty_trace_gives_zero_probability():
    est = estimate_probability(_cfg(n_list=[50]), 50, 0)
    assert est.successes == 0 and est.p_hat == 0.0 and est.ci_low == 0.0


def test_path_appears_quickly_on_huge_complete_graph():
    est = estimate_probability(_cfg(n_list=[100_000], pattern="path-3", trials=300), 100_000, 200)
    assert est.p_hat >= 0.99


def test_short_path_appears_as_soon_as_it_can():
    est = estimate_probability(_cfg(n_list=[100_000], pattern="path-5", trials=300), 100_000, 5)
    assert est.p_hat >= 0.99


def test_estimate_agrees_with_exact_probability():
    # K_3 上任一步非停留即走出一條邊：Pr[edge ⊆ Γ_t] = 1 - (1/3)^t
    cfg = _cfg(n_list=[3], trials=20_000, master_seed=3)
    est = estimate_probability(cfg, 3, 2)
    exact = 1 - (1 / 3) ** 2
    assert abs(est.p_hat - exact) < 4 * math.sqrt(exact * (1 - exact) / cfg.trials)


def test_triangle_probability_matches_oracle_by_symmetry():
    # K_4 上 Pr[某三角形 ⊆ Γ_t] ≤ 4 · Pr[固定三角形 ⊆ Γ_t]
    t = 12
    cfg = _cfg(n_list=[4], pattern="triangle", trials=20_000, master_seed=9)
    est = estimate_probability(cfg, 4, t)
    single = exact_containment_probability(complete_graph(4), [(0, 1), (1, 2), (0, 2)], t)
    assert single <= est.ci_high
    assert est.ci_low <= 4 * single


def test_worker_count_does_not_change_results():
    cfg = _cfg(base_model="gnp", p=0.3, n_list=[25], pattern="triangle", trials=150)
    serial = collect_trials(cfg, 25, 40, workers=1)
    parallel = collect_trials(cfg, 25, 40, workers=3)
    assert serial == parallel


def test_quenched_mode_reuses_one_graph():
    cfg = _cfg(base_model="gnp", p=0.2, n_list=[30], pattern="triangle", trials=100, fixed_graph=True)
    first = estimate_probability(cfg, 30, 60)
    second = estimate_probability(cfg, 30, 60)
    assert first == second
    assert first.mode == "quenched"


def test_annealed_probabilities_monotone_in_t():
    cfg = _cfg(base_model="gnp", p=0.3, n_list=[30, 40], pattern="triangle", trials=120, t_list=[10, 40, 80, 160])
    rows = sweep(cfg)
    for n in (30, 40):
        successes = [row.estimate.successes for row in rows if row.n == n]
        assert successes == sorted(successes)


def test_gnm_base_and_size_checks():
    cfg = _cfg(base_model="gnm", m=60, n_list=[20], pattern="triangle", trials=50)
    assert 0.0 <= estimate_probability(cfg, 20, 50).p_hat <= 1.0
    with pytest.raises(InvalidArgumentError):
        estimate_probability(cfg, 10, 50)
    with pytest.raises(InvalidArgumentError):
        estimate_probability(_cfg(pattern="K-5"), 4, 10)


def test_sweep_rows_sorted_and_deterministic():
    cfg = _cfg(n_list=[30, 10], t_list=[20, 5], trials=1, master_seed=42)
    rows = sweep(cfg)
    assert [(r.n, r.t) for r in rows] == [(10, 5), (10, 20), (30, 5), (30, 20)]
    assert _csv(cfg, rows) == _csv(cfg, sweep(cfg))


def test_sweep_csv_identical_across_worker_counts():
    cfg = _cfg(base_model="gnp", p=0.4, n_list=[15, 25], pattern="path-2", t_list=[3, 9], trials=130)
    outputs = {_csv(cfg, sweep(cfg, workers=w)) for w in (1, 4)}
    assert len(outputs) == 1


def test_sweep_zero_time_column():
    cfg = _cfg(n_list=[10, 20], t_list=[0], trials=50)
    assert all(row.estimate.p_hat == 0 for row in sweep(cfg))


def test_sweep_records_errors_in_row():
    cfg = _cfg(n_list=[2, 10], pattern="triangle", t_list=[5], trials=20)
    rows = sweep(cfg)
    assert rows[0].estimate is None and "k=3" in rows[0].error
    assert rows[1].estimate is not None
    lines = _csv(cfg, rows).splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert lines[1] == "complete,2,,5,triangle,20,,,,,1,annealed"


def test_sweep_requires_t_list():
    with pytest.raises(InvalidArgumentError):
        sweep(_cfg(t_list=[]))


def test_half_time_for_single_edge():
    n = 40
    result = find_half_time(_cfg(n_list=[n], trials=2000, master_seed=11), n, rel_tol=0.05)
    assert result.p_low < 0.5 <= result.p_high
    assert result.t_low <= result.t_half <= result.t_high
    assert result.t_half == pytest.approx(n * n * math.log(2) / 2, rel=0.1)


def test_half_time_convergence_error_carries_bracket():
    cfg = _cfg(n_list=[1000], pattern="triangle", trials=20)
    with pytest.raises(ConvergenceError) as info:
        find_half_time(cfg, 1000, max_doublings=3)
    assert info.value.bracket == (4, 8)


def _scripted_curve(monkeypatch, curve):
    """以固定的 p(t) 取代 Monte Carlo 估計，回傳被查詢過的 t。"""
    calls = []

    def fake(cfg, n, t, workers=None):
        calls.append(t)
        successes = round(curve(t) * cfg.trials)
        low, high = wilson_interval(successes, cfg.trials)
        return ProbEstimate(
            base=cfg.base_model, n=n, t=t, pattern=cfg.pattern, trials=cfg.trials, successes=successes,
            p_hat=successes / cfg.trials, ci_low=low, ci_high=high, master_seed=cfg.master_seed,
        )

    monkeypatch.setattr(experiment, "estimate_probability", fake)
    return calls


def test_half_time_stops_when_doubling_hits_exactly_half(monkeypatch):
    calls = _scripted_curve(monkeypatch, lambda t: 0.0 if t < 4 else 0.5 if t < 8 else 1.0)
    result = find_half_time(_cfg(trials=10_000), 20, rel_tol=0.01)
    assert calls == [1, 2, 4]
    assert (result.t_half, result.t_low, result.t_high) == (4, 2, 4)
    assert result.p_high == 0.5


def test_half_time_bisection_point_at_exactly_half(monkeypatch):
    calls = _scripted_curve(monkeypatch, lambda t: 0.0 if t < 6 else 0.5 if t == 6 else 1.0)
    result = find_half_time(_cfg(trials=10_000), 20, rel_tol=0.01)
    assert calls == [1, 2, 4, 8, 6]
    assert (result.t_half, result.t_low, result.t_high) == (6, 4, 6)
    assert result.p_low < 0.5 <= result.p_high


def test_fit_exact_power_law():
    points = [(n, 7 * n ** 0.5) for n in (100, 200, 400, 800, 1600)]
    fit = fit_threshold_exponent(points)
    assert fit.slope == pytest.approx(0.5, abs=1e-9)
    assert fit.intercept == pytest.approx(math.log(7), abs=1e-9)


def test_fit_noisy_linear_law():
    rng = np.random.default_rng(4)
    for _ in range(50):
        ns = np.geomspace(100, 1000, 6)
        points = [(int(n), 3.0 * n * (1 + 0.05 * rng.standard_normal())) for n in ns]
        assert fit_threshold_exponent(points).slope == pytest.approx(1.0, abs=0.1)


def test_fit_rejects_degenerate_input():
    with pytest.raises(InvalidArgumentError):
        fit_threshold_exponent([(100, 5.0), (200, 7.0)])
    with pytest.raises(InvalidArgumentError):
        fit_threshold_exponent([(100, 5.0), (100, 6.0), (100, 7.0)])


def test_halftime_csv_feeds_fit():
    cfg = _cfg(n_list=[100, 200, 400])
    results = [
        HalfTimeResult(n=n, t_half=int(2 * n), t_low=n, t_high=3 * n, p_low=0.4, p_high=0.6) for n in cfg.n_list
    ]
    out = io.StringIO()
    write_halftime_csv(cfg, results, out)
    out.seek(0)
    points = read_halftime_points(out)
    assert points == [(100, 200.0), (200, 400.0), (400, 800.0)]
    assert fit_threshold_exponent(points).slope == pytest.approx(1.0)
    with pytest.raises(InvalidArgumentError):
        read_halftime_points(io.StringIO("a,b\n1,2\n"))


def test_load_config_from_toml(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text(
        'base_model = "gnp"\nn_list = [200, 400]\np = 0.2\npattern = "triangle"\n'
        "t_list = [100, 200]\ntrials = 50\nmaster_seed = 7\nworkers = 2\n"
    )
    cfg = load_config(path)
    assert cfg.base_model == "gnp" and cfg.p == 0.2 and cfg.workers == 2
    path.write_text('base_model = "gnp"\nn_list = [10]\npattern = "edge"\n')
    with pytest.raises(ValueError):
        load_config(path)
    path.write_text("n_list = [")
    with pytest.raises(InvalidArgumentError):
        load_config(path)


def test_thread_override_from_environment(monkeypatch):
    cfg = _cfg(workers=2)
    get_settings.cache_clear()
    assert resolve_workers(cfg) == 2
    monkeypatch.setenv("TRACELAB_THREADS", "6")
    get_settings.cache_clear()
    try:
        assert resolve_workers(cfg) == 6
        assert resolve_workers(cfg, workers=1) == 1
    finally:
        monkeypatch.delenv("TRACELAB_THREADS")
        get_settings.cache_clear()


def test_copy_count_of_single_edge_equals_trace_size():
    cfg = _cfg(n_list=[30], trials=100)
    est = estimate_copy_count(cfg, 30, 20)
    assert 15 < est.mean_copies <= 20
    assert est.stderr >= 0
    assert est.expected_order == pytest.approx(20.0)


def test_point_buffer_follows_config_then_settings():
    assert point_buffer(_cfg(), 1000) == math.ceil(get_settings().buffer_c * math.log(1000))
    assert point_buffer(_cfg(buffer_c=1.0), 1000) == 7
    assert point_buffer(_cfg(buffer_c=5.0), 50) == 20


def test_time_set_statistics_uses_configured_buffer():
    narrow = time_set_statistics(_cfg(n_list=[12], pattern="triangle", trials=100, buffer_c=1.0), 12, 60)
    wide = time_set_statistics(_cfg(n_list=[12], pattern="triangle", trials=100, buffer_c=5.0), 12, 60)
    assert (narrow.buffer, wide.buffer) == (3, 13)
    # 同一組種子找到同一份副本，只有 defective 的判定隨 B 改變
    assert narrow.contained == wide.contained > 0
    assert narrow.mean_w == wide.mean_w and narrow.mean_r == wide.mean_r
    assert wide.mean_q >= narrow.mean_q
    assert narrow.coverage_violations == wide.coverage_violations == 0


def test_time_set_statistics_without_any_copy():
    summary = time_set_statistics(_cfg(n_list=[50], pattern="triangle", trials=20), 50, 1)
    assert summary.contained == 0
    assert summary.mean_w is None and summary.coverage_violations == 0


def test_forest_strategies_on_connected_pattern():
    cfg = _cfg(n_list=[12], pattern="triangle", trials=100)
    components, segmented = estimate_forest_strategies(cfg, 12, 40)
    # 連通圖樣只有一個分量；唯一的一段少了最後一步
    assert segmented.successes <= components.successes == estimate_probability(cfg, 12, 40).successes


def test_forest_strategies_on_two_disjoint_edges():
    cfg = _cfg(n_list=[20], pattern="0 1\n2 3", trials=200)
    components, segmented = estimate_forest_strategies(cfg, 20, 200)
    assert segmented.successes <= components.successes == estimate_probability(cfg, 20, 200).successes
    assert segmented.p_hat > 0.9
    short_components, short_segmented = estimate_forest_strategies(cfg, 20, 1)
    assert short_components.successes == short_segmented.successes == 0


def test_static_comparison_model():
    cfg = _cfg(n_list=[30], pattern="triangle", trials=30)
    assert estimate_static_probability(cfg, 30, 10_000).p_hat == 1.0
    static = estimate_static_probability(cfg, 30, 2)
    assert static.p_hat == 0.0 and static.base == "gnm" and static.p == 2


def test_analyze_pattern_report():
    report = analyze_pattern(parse_pattern("star-4"))
    assert (report.k, report.ell, report.rho, report.theta, report.aut_count) == (5, 4, 2, 4, 24)
    assert report.m0 == "4/5"
    by_base = {pred.base_model: pred for pred in report.predictions}
    assert by_base["complete"].exponent == "1/2"
    assert not by_base["gnp"].applicable
    assert report.static_prediction.exponent == "3/4"
    assert len(report.trails) == 2


@pytest.mark.parametrize("name", ["triangle.toml", "star4_halftime.toml"])
def test_bundled_example_configs_load(name):
    cfg = load_config(PROJECT_ROOT / "experiments" / name)
    assert cfg.trials == 2000
    assert all(n >= parse_pattern(cfg.pattern).k for n in cfg.n_list)
