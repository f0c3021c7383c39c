import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracbench.controllers import preset
from fracbench.errors import ConfigurationError, InvalidParameterError
from fracbench.factorial import (
    CELLS,
    EFFECT_CELL,
    EFFECTS,
    METRICS,
    PUBLISHED_CELLS,
    DesignError,
    FactorialRow,
    FactorialTable,
    derived_seed,
    influence,
    influence_report,
    measurement_factor,
    published_table,
    reproduce_paper_tables,
    run_design,
)
from fracbench.simloop import FactorLevels, ResponseMetrics, SimConfig


def synthetic(fn, replicates=2, noise=None):
    rows = []
    rng = np.random.default_rng(noise) if noise is not None else None
    for c, b, a in CELLS:
        lv = FactorLevels(a, b, c)
        A, B, C = lv.coded
        for r in range(replicates):
            y = fn(A, B, C) + (rng.normal() if rng is not None else 0.0)
            rows.append(FactorialRow(lv, r, ResponseMetrics(y, y, y, y)))
    return FactorialTable(rows)


def regression_ss(table, metric):
    """Sequential sums of squares of the full coded model, fitted term by term."""
    X = table.coded()
    A, B, C = X.T
    terms = {"A": A, "B": B, "AB": A * B, "C": C, "AC": A * C, "BC": B * C, "ABC": A * B * C}
    y = table.response(metric)
    cols = [np.ones_like(y)]

    def rss(cols):
        M = np.column_stack(cols)
        beta, *_ = np.linalg.lstsq(M, y, rcond=None)
        r = y - M @ beta
        return float(r @ r)

    out = {}
    prev = rss(cols)
    for name in EFFECTS:
        cols.append(terms[name])
        cur = rss(cols)
        out[name] = prev - cur
        prev = cur
    return out


def test_single_factor_construction():
    entry = influence(synthetic(lambda A, B, C: 10 + 4 * A), "ise")
    assert entry.percentages["A"] == pytest.approx(100.0)
    assert sum(v for k, v in entry.percentages.items() if k != "A") == pytest.approx(0.0, abs=1e-9)


def test_two_factor_symmetry():
    entry = influence(synthetic(lambda A, B, C: A + B, replicates=3), "ise")
    assert entry.percentages["A"] == pytest.approx(50.0)
    assert entry.percentages["B"] == pytest.approx(50.0)


def test_interaction_construction():
    entry = influence(synthetic(lambda A, B, C: A * B, replicates=1), "ise")
    assert entry.percentages["AB"] == pytest.approx(100.0)


@pytest.mark.parametrize("seed", range(20))
def test_contrasts_match_regression(seed):
    table = synthetic(lambda A, B, C: 0.0, replicates=2, noise=seed)
    entry = influence(table, "ise")
    oracle = regression_ss(table, "ise")
    for name in EFFECTS:
        assert entry.sum_squares[name] == pytest.approx(oracle[name], abs=1e-9)
    assert sum(entry.percentages.values()) == pytest.approx(100.0, abs=0.01)


def test_degenerate_table_is_flagged():
    entry = influence(synthetic(lambda A, B, C: 3.0), "ise")
    assert entry.degenerate
    assert all(v == 0.0 for v in entry.percentages.values())


def test_f_statistics_need_replication():
    noisy = influence(synthetic(lambda A, B, C: 2 * A, replicates=2, noise=0), "ise")
    assert noisy.error_df == 8
    assert noisy.f_values["A"] > noisy.f_values["ABC"]
    assert 0 <= noisy.p_values["A"] < 0.05
    single = influence(synthetic(lambda A, B, C: 2 * A, replicates=1, noise=0), "ise")
    assert single.f_values["A"] is None and single.p_values["A"] is None


@settings(max_examples=50, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    shift=st.floats(-100, 100),
    scale=st.floats(0.01, 100),
)
def test_shift_scale_and_duplication_invariance(seed, shift, scale):
    base = synthetic(lambda A, B, C: 0.0, replicates=2, noise=seed)
    ref = influence(base, "ise").percentages
    moved = FactorialTable([
        FactorialRow(r.levels, r.replicate,
                     ResponseMetrics(*(scale * v + shift for v in r.response.to_dict().values())))
        for r in base.rows
    ])
    dup = FactorialTable(base.rows + [replace(r, replicate=r.replicate + 2) for r in base.rows])
    for other in (moved, dup):
        got = influence(other, "ise").percentages
        for name in EFFECTS:
            assert got[name] == pytest.approx(ref[name], abs=1e-6)
            assert 0.0 <= got[name] <= 100.0


def test_incomplete_table_rejected():
    table = synthetic(lambda A, B, C: A)
    with pytest.raises(ConfigurationError):
        FactorialTable(table.rows[:-1])
    with pytest.raises(InvalidParameterError):
        table.response("bogus")


def test_measurement_factor():
    assert measurement_factor(0.49, 45.761) == pytest.approx(0.22423, abs=1e-5)
    assert measurement_factor(3.7, 0) == 0
    assert measurement_factor(3.7, 100) == 3.7
    with pytest.raises(InvalidParameterError):
        measurement_factor(1.0, 101.0)


def test_embedded_tables():
    assert [row[0] for row in PUBLISHED_CELLS["FOPID"]] == [0.49, 0.49, 0.73, 0.81, 0.77, 0.76, 0.81, 0.59]
    assert max(row[0] for row in PUBLISHED_CELLS["SIMC PID"]) == 4.639
    t = published_table("IOPID")
    assert t.cell_means("control_mean")[(0, 0, 1)] == 0.720


def test_effect_cells():
    assert EFFECT_CELL["A"] == (0, 0, 1)
    assert EFFECT_CELL["BC"] == (1, 1, 0)
    assert EFFECT_CELL["ABC"] == (1, 1, 1)


def test_replay_emits_full_matrices():
    replay = reproduce_paper_tables()
    assert len(replay.mf) == 3 * len(METRICS) * len(EFFECTS) * 8
    for ctrl, report in replay.computed.items():
        for metric in METRICS:
            assert sum(report.entries[metric].percentages.values()) == pytest.approx(100.0, abs=0.01)
    first = next(r for r in replay.mf if r["controller"] == "FOPID" and r["metric"] == "ise"
                 and r["effect"] == "A" and r["matched"])
    assert first["mf"] == pytest.approx(0.22423, abs=1e-5)
    rows = replay.comparison_rows()
    assert len(rows) == 3 * 4 * 7
    assert all(r["difference"] == pytest.approx(r["computed"] - r["published"]) for r in rows)


def test_derived_seeds_are_distinct():
    seeds = {derived_seed(42, FactorLevels(a, b, c), r) for c, b, a in CELLS for r in range(4)}
    assert len(seeds) == 32
    assert derived_seed(42, FactorLevels(1, 0, 1), 1) == derived_seed(42, FactorLevels(1, 0, 1), 1)


@pytest.fixture(scope="module")
def fopid_design():
    return run_design(preset("fopid").params, SimConfig(), replicates=2)


def test_design_is_complete(fopid_design):
    t = fopid_design
    assert len(t.rows) == 16 and t.replicates == 2
    cells = [r.cell for r in t.rows]
    assert all(cells.count(c) == 2 for c in CELLS)


def test_noise_free_replicates_identical(fopid_design):
    by_cell = {}
    for r in fopid_design.rows:
        by_cell.setdefault(r.cell, []).append(r.response)
    for (c, b, a), responses in by_cell.items():
        if b == 0:
            assert responses[0] == responses[1]
        else:
            assert responses[0] != responses[1]


def test_parallel_matches_serial(fopid_design):
    parallel = run_design(preset("fopid").params, SimConfig(), replicates=2, max_workers=2)
    assert parallel.to_dict() == fopid_design.to_dict()


def test_table_serialisation(fopid_design, tmp_path):
    path = tmp_path / "t.csv"
    fopid_design.to_csv(path)
    header = path.read_text().splitlines()[0]
    assert header == "C,B,A,replicate,ise,step_std,u_mean,u_std"
    assert FactorialTable.read_csv(path).to_dict() == fopid_design.to_dict()
    back = FactorialTable.from_dict(json.loads(json.dumps(fopid_design.to_dict())))
    assert back.to_dict() == fopid_design.to_dict()
    report = influence_report(fopid_design)
    report.to_csv(tmp_path / "i.csv")
    lines = (tmp_path / "i.csv").read_text().splitlines()
    assert lines[0] == "metric,effect,percentage" and len(lines) == 1 + 4 * 7
    json.dumps(report.to_dict())


@pytest.mark.parametrize("workers", [1, 2])
def test_failing_cell_is_identified(workers):
    # the nonlinear tanks cannot start empty
    cfg = SimConfig(plant_mode="nonlinear", nonlinear_x0=(0.0, 0.0))
    with pytest.raises(DesignError) as info:
        run_design(preset("fopid").params, cfg, replicates=1, max_workers=workers)
    assert info.value.cell == (0, 0, 0, 0)
    assert "C=0 B=0 A=0" in str(info.value)


def test_zero_replicates_rejected():
    with pytest.raises(ConfigurationError):
        run_design(preset("fopid").params, SimConfig(), replicates=0)


@pytest.mark.xfail(strict=True, reason="nominal FOPID ISE is about 1.06 on the delayed design model")
def test_fopid_base_cell_near_reported(fopid_design):
    base = fopid_design.cell_means("ise")[(0, 0, 0)]
    assert base == pytest.approx(0.49, rel=0.25)
