import numpy as np
import pytest

from macrotensor.simulation import (
    SCENARIOS,
    ContaminationSpec,
    generate,
    mse_imputed,
    mse_regular,
    run_scenario,
    subspace_angle,
    summarize_rows,
)
from macrotensor.tensor import khatri_rao


DIMS = (50, 76, 61)


def test_scenario_table():
    assert SCENARIOS["U"] == (1.0, 0.0, 0.0, 0.0)
    assert SCENARIOS["R20"] == (0.8, 0.2, 0.0, 0.0)
    assert SCENARIOS["C10"] == (0.0, 0.0, 0.1, 0.0)
    assert SCENARIOS["R10C10NA20"] == (0.0, 0.1, 0.1, 0.2)
    assert SCENARIOS["U40R10C10NA10"] == (0.4, 0.1, 0.1, 0.1)
    assert len(SCENARIOS) == 11
    for quartet in SCENARIOS.values():
        ContaminationSpec(*quartet)


def test_spec_validation():
    with pytest.raises(ValueError):
        ContaminationSpec(0.8, 0.3, 0.0, 0.0)
    with pytest.raises(ValueError):
        ContaminationSpec(-0.1, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        ContaminationSpec(0.0, 0.0, 0.0, 1.2)
    with pytest.raises(ValueError):
        ContaminationSpec(0.0, 0.0, 0.0, 0.0, gamma=-1.0)


def test_uncontaminated_scenario_is_clean():
    data = generate(ContaminationSpec(1.0, 0.0, 0.0, 0.0, seed=4), dims=DIMS)
    assert np.array_equal(data.x.values, data.x_clean.values)
    assert data.x.mask.all()
    assert data.row_outliers == frozenset()
    assert data.cell_outliers == frozenset()
    assert data.na_cells == frozenset()
    assert np.all(data.w == 1.0)


def test_noise_calibration_algebra():
    data = generate(ContaminationSpec(1.0, 0.0, 0.0, 0.0, seed=9), dims=DIMS)
    x_pure = 100.0 * (data.a @ khatri_rao(data.c, data.b).T)
    e = data.x_clean.unfold()[0] - x_pure
    target = (0.2 / 0.8) * np.linalg.norm(x_pure)
    assert abs(np.linalg.norm(e) - target) <= 1e-9 * target
    frac = np.sum(e ** 2) / np.sum(data.x_clean.values ** 2)
    assert abs(frac - 0.0625 / 1.0625) < 0.01


def test_rowwise_rule():
    data = generate(ContaminationSpec(0.8, 0.2, 0.0, 0.0, seed=11), dims=DIMS)
    assert len(data.row_outliers) == 10
    rows = sorted(data.row_outliers)
    assert np.array_equal(data.x.values[rows],
                          3.0 * data.x_clean.values[rows] + 1.0)
    others = sorted(set(range(DIMS[0])) - data.row_outliers)
    assert np.array_equal(data.x.values[others], data.x_clean.values[others])
    assert np.all(data.w[rows] == 0.0)
    assert np.all(data.w[others] == 1.0)


def test_cellwise_value_formula():
    # gamma = 0: shifted cells sit exactly at the column mean
    data = generate(ContaminationSpec(0.0, 0.0, 0.1, 0.0, gamma=0.0, seed=13),
                    dims=DIMS)
    x1, _ = data.x.unfold()
    xc1, _ = data.x_clean.unfold()
    # reconstruct the pre-shift matrix: no rowwise rows here
    pre = xc1
    col_mean = pre.mean(axis=0)
    for (i, j, k) in data.cell_outliers:
        col = k * DIMS[1] + j
        assert x1[i, col] == col_mean[col]

    data = generate(ContaminationSpec(0.0, 0.1, 0.1, 0.0, gamma=7.0, seed=17),
                    dims=DIMS)
    x1, _ = data.x.unfold()
    xc1, _ = data.x_clean.unfold()
    # shift scale comes from the noisy pre-contamination columns, so the
    # tripled rowwise rows do not blow it up
    col_mean = xc1.mean(axis=0)
    col_std = xc1.std(axis=0, ddof=1)
    checked = 0
    for (i, j, k) in sorted(data.cell_outliers)[:200]:
        col = k * DIMS[1] + j
        assert x1[i, col] == col_mean[col] + 7.0 * col_std[col]
        assert i not in data.row_outliers
        checked += 1
    assert checked == 200


def test_counts_and_disjointness():
    spec = ContaminationSpec(0.0, 0.1, 0.1, 0.2, seed=19)
    data = generate(spec, dims=DIMS)
    n_cells = DIMS[0] * DIMS[1] * DIMS[2]
    assert len(data.row_outliers) == 5
    assert len(data.cell_outliers) == round(0.1 * n_cells)
    assert len(data.na_cells) == round(0.2 * n_cells)
    assert not data.cell_outliers & data.na_cells
    for (i, j, k) in data.cell_outliers:
        assert i not in data.row_outliers
    # missing cells are really missing, shifted cells are observed
    for (i, j, k) in list(data.na_cells)[:100]:
        assert not data.x.mask[i, j, k]
    assert data.x.n_observed == n_cells - len(data.na_cells)


def test_w_consistency():
    data = generate(ContaminationSpec(0.4, 0.1, 0.1, 0.1, seed=23), dims=DIMS)
    w_expect = np.ones(DIMS)
    for i in data.row_outliers:
        w_expect[i] = 0.0
    for (i, j, k) in data.cell_outliers:
        w_expect[i, j, k] = 0.0
    for (i, j, k) in data.na_cells:
        w_expect[i, j, k] = 0.0
    assert np.array_equal(data.w, w_expect)


def test_generate_determinism_and_seed_sensitivity():
    spec = ContaminationSpec(0.0, 0.1, 0.1, 0.1, seed=31)
    d1 = generate(spec, dims=(20, 9, 8))
    d2 = generate(spec, dims=(20, 9, 8))
    assert np.array_equal(d1.x.values, d2.x.values)
    assert d1.cell_outliers == d2.cell_outliers
    assert d1.na_cells == d2.na_cells
    d3 = generate(ContaminationSpec(0.0, 0.1, 0.1, 0.1, seed=32),
                  dims=(20, 9, 8))
    assert not np.array_equal(d1.x.values, d3.x.values)


def test_infeasible_counts():
    with pytest.raises(ValueError):
        # every row reserved clean leaves no room for shifted cells
        generate(ContaminationSpec(1.0, 0.0, 0.5, 0.0, seed=1), dims=(10, 4, 3))
    with pytest.raises(ValueError):
        generate(ContaminationSpec(0.0, 0.0, 0.6, 0.5, seed=1), dims=(10, 4, 3))
    with pytest.raises(ValueError):
        generate(ContaminationSpec(0.0, 0.0, 0.0, 0.0, seed=1),
                 dims=(10, 4, 3), f=3)


def test_mse_regular_oracle():
    rng = np.random.default_rng(41)
    x = rng.normal(size=(3, 4, 5))
    x_hat = rng.normal(size=(3, 4, 5))
    w = (rng.random((3, 4, 5)) > 0.3).astype(float)
    got = mse_regular(x, x_hat, w)
    total, m = 0.0, 0
    for i in range(3):
        for j in range(4):
            for k in range(5):
                if w[i, j, k] == 1.0:
                    total += (x[i, j, k] - x_hat[i, j, k]) ** 2
                    m += 1
    assert got == pytest.approx(total / m, rel=1e-12)
    assert mse_regular(x, x, w) == 0.0

    w1 = np.zeros((2, 2, 2))
    w1[0, 0, 0] = 1.0
    x0 = np.zeros((2, 2, 2))
    x2 = x0.copy()
    x2[0, 0, 0] = 2.0
    assert mse_regular(x0, x2, w1) == 4.0
    with pytest.raises(ValueError):
        mse_regular(x, x_hat, np.zeros((3, 4, 5)))


def test_mse_imputed_oracle():
    rng = np.random.default_rng(43)
    x_true = rng.normal(size=(3, 4, 5))
    x_tilde = rng.normal(size=(3, 4, 5))
    w = (rng.random((3, 4, 5)) > 0.6).astype(float)
    got = mse_imputed(x_true, x_tilde, w)
    total, m = 0.0, 0
    for i in range(3):
        for j in range(4):
            for k in range(5):
                if w[i, j, k] == 0.0:
                    total += (x_true[i, j, k] - x_tilde[i, j, k]) ** 2
                    m += 1
    assert got == pytest.approx(total / m, rel=1e-12)
    assert mse_imputed(x_true, x_true, w) == 0.0

    w1 = np.ones((2, 2, 2))
    w1[1, 1, 1] = 0.0
    x3 = x_true[:2, :2, :2].copy()
    x3[1, 1, 1] += 3.0
    assert mse_imputed(x_true[:2, :2, :2], x3, w1) == 9.0
    with pytest.raises(ValueError):
        mse_imputed(x_true, x_tilde, np.ones((3, 4, 5)))


def test_subspace_angle_cases():
    rng = np.random.default_rng(47)
    m = rng.normal(size=(6, 2))
    assert subspace_angle(m, m) == pytest.approx(0.0, abs=1e-12)
    e = np.eye(6)
    assert subspace_angle(e[:, [0, 1]], e[:, [0, 2]]) == pytest.approx(
        np.pi / 2)
    # mixing the basis leaves the span alone
    rot = np.array([[0.6, -0.8], [0.8, 0.6]])
    assert subspace_angle(m @ rot, m) <= 1e-10
    v = rng.normal(size=(6, 1))
    assert subspace_angle(2.5 * v, v) == pytest.approx(0.0, abs=1e-10)
    with pytest.raises(ValueError):
        subspace_angle(np.hstack([v, v]), m)
    with pytest.raises(ValueError):
        subspace_angle(m, m[:, :1])


def test_run_scenario_rows_and_determinism():
    rows = run_scenario("NA20", "par", 1, seed=100, dims=(14, 8, 7),
                        n_starts=2)
    again = run_scenario("NA20", "par", 1, seed=100, dims=(14, 8, 7),
                         n_starts=2)
    assert len(rows) == 1
    row = rows[0]
    assert row["scenario"] == "NA20" and row["method"] == "par"
    assert row["mse"] >= 0.0 and row["mse_imp"] is not None
    for col in ("mse", "b_angle", "c_angle", "mse_imp"):
        assert row[col] == again[0][col]

    clean = run_scenario("U", "par", 1, seed=5, dims=(14, 8, 7), n_starts=2)
    assert clean[0]["mse_imp"] is None

    with pytest.raises(ValueError):
        run_scenario("NOPE", "par", 1, seed=0)
    with pytest.raises(ValueError):
        run_scenario("U", "other", 1, seed=0)

    summary = summarize_rows(rows + clean)
    assert len(summary) == 2
    med = [s for s in summary if s["scenario"] == "NA20"][0]
    assert med["mse_median"] == pytest.approx(row["mse"])
    assert med["mse_imp_median"] is not None
