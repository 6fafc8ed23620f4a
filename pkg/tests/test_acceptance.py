"""Acceptance suite: one test per stated criterion, at the stated settings.

Every test prints one line "criterion N ...: PASS/FAIL (measured values)"
and appends it to acceptance_report.txt next to this package's tests, so
the outcome of each criterion is readable in one place after a run.
Benchmark criteria run at the full 50x76x61 size with 2 components and
20 percent noise; expect the whole module to take on the order of twenty
minutes on one core.
"""

import itertools
import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from macrotensor.detect import detect_cells
from macrotensor.diagnostics import compute_diagnostics
from macrotensor.macro import MacroOptions, macroparafac
from macrotensor.parafac import FitOptions, als_complete, als_incomplete
from macrotensor.robust import chi2_quantile, fastmcd, unimcd
from macrotensor.simulation import (ContaminationSpec, SCENARIOS, generate,
                                    mse_imputed, run_scenario,
                                    write_rows_csv)
from macrotensor.tensor import Tensor3, fold_mode1, khatri_rao, unfold_mode1

REPORT = Path(__file__).resolve().parent.parent / "acceptance_report.txt"
_LINES = []
_CACHE = {}


def record(num, name, passed, detail):
    line = f"criterion {num} {name}: {'PASS' if passed else 'FAIL'} ({detail})"
    _LINES.append(line)
    print(line)
    REPORT.write_text("\n".join(_LINES) + "\n", encoding="utf-8")
    assert passed, line


def rows_for(scenario, method, n_rep=20, gamma=7.0):
    key = (scenario, method, n_rep, gamma)
    if key not in _CACHE:
        _CACHE[key] = run_scenario(scenario, method, n_rep=n_rep, seed=0,
                                   gamma=gamma)
    return _CACHE[key]


def med(rows, col):
    return float(np.median([r[col] for r in rows]))


def test_criterion_1_clean_data_parity():
    t0 = time.perf_counter()
    par = rows_for("U", "par")
    macro = rows_for("U", "macro")
    elapsed = time.perf_counter() - t0
    m_par, m_mac = med(par, "mse"), med(macro, "mse")
    ok = m_mac <= 1.25 * m_par and elapsed <= 300.0
    record(1, "clean-data parity", ok,
           f"macro median mse {m_mac:.4f} vs par {m_par:.4f}, "
           f"ratio {m_mac / m_par:.3f} <= 1.25, runtime {elapsed:.0f}s <= 300s")


def test_criterion_2_cellwise_robustness():
    m_mac = med(rows_for("C10", "macro"), "mse")
    m_par = med(rows_for("C10", "par"), "mse")
    ok = m_mac <= 0.11 and m_par >= 10.0 * m_mac
    record(2, "cellwise robustness", ok,
           f"macro median mse {m_mac:.4f} <= 0.11, par {m_par:.4f}, "
           f"ratio {m_par / m_mac:.2f} needs >= 10")


def test_criterion_3_loading_recovery():
    angles = {s: med(rows_for(s, "macro"), "b_angle")
              for s in ("C10", "R20", "R10C10")}
    ok = all(v <= 0.015 for v in angles.values())
    detail = ", ".join(f"{s} {v:.4f}" for s, v in angles.items())
    record(3, "loading recovery", ok, f"median b-angle needs <= 0.015: {detail}")


def test_criterion_4_missing_data_regime():
    macro = rows_for("R10C10NA20", "macro")
    par = rows_for("R10C10NA20", "par")
    m_mac, ang = med(macro, "mse"), med(macro, "b_angle")
    m_par = med(par, "mse")
    ok = m_mac <= 0.11 and ang <= 0.015 and m_par >= 5.0 * m_mac
    record(4, "missing-data regime", ok,
           f"macro median mse {m_mac:.4f} <= 0.11, b-angle {ang:.4f} needs "
           f"<= 0.015, par/macro ratio {m_par / m_mac:.2f} needs >= 5")


def test_criterion_5_imputation_benefit():
    final, stage1 = [], []
    for r in range(20):
        spec = ContaminationSpec(*SCENARIOS["R10C10NA10"], gamma=7.0, seed=r)
        d = generate(spec)
        res = macroparafac(d.x, MacroOptions(
            rank=2, seed=r, fit=FitOptions(rank=2, seed=r, n_starts=5)))
        final.append(mse_imputed(d.x_clean.values, res.x_full.values, d.w)
                     / d.scale2)
        stage1.append(mse_imputed(d.x_clean.values,
                                  res.x_full_stage1.values, d.w) / d.scale2)
    m_fin, m_st1 = float(np.median(final)), float(np.median(stage1))
    record(5, "imputation benefit", m_fin <= m_st1,
           f"median mse_imp final {m_fin:.4f} <= initial detector "
           f"imputation {m_st1:.4f}")


def test_criterion_6_gamma_sweep_shape():
    gammas = list(range(11))
    curve = []
    for g in gammas:
        rows = run_scenario("R10C10", "macro", n_rep=10, seed=0,
                            gamma=float(g))
        curve.append(float(np.mean([r["mse"] for r in rows])))
    peak = gammas[int(np.argmax(curve))]
    ok = peak in (2, 3, 4) and curve[10] < curve[4]
    detail = " ".join(f"{g}:{v:.4f}" for g, v in zip(gammas, curve))
    record(6, "gamma sweep shape", ok,
           f"peak at gamma={peak} needs in {{2,3,4}}, "
           f"mse(10) {curve[10]:.4f} < mse(4) {curve[4]:.4f}; curve {detail}")


def test_criterion_7_diagnostics_classification():
    red_frac, green_frac, poc_row, poc_other, poc_clean = [], [], [], [], []
    for r in range(20):
        spec = ContaminationSpec(*SCENARIOS["U50R10C10"], gamma=7.0, seed=r)
        d = generate(spec)
        res = macroparafac(d.x, MacroOptions(
            rank=2, seed=r, fit=FitOptions(rank=2, seed=r, n_starts=5)))
        diag = compute_diagnostics(res, d.x)
        i_dim = d.x.dims[0]
        rows = sorted(d.row_outliers)
        celly = {i for i, _, _ in d.cell_outliers}
        other = [i for i in range(i_dim) if i not in d.row_outliers]
        clean = [i for i in other if i not in celly]
        red_frac.append(np.mean([diag.color[i] == "red" for i in rows]))
        green_frac.append(np.mean([diag.color[i] == "green" for i in clean]))
        poc_row.append(np.mean(diag.poc[rows]))
        poc_other.append(np.mean(diag.poc[other]))
        poc_clean.append(np.mean(diag.poc[clean]))
    red = float(np.mean(red_frac))
    green = float(np.mean(green_frac))
    ratio = float(np.mean(poc_row) / np.mean(poc_other))
    clean_ratio = float(np.mean(poc_row) / np.mean(poc_clean))
    ok = red >= 0.9 and green >= 0.9 and ratio >= 10.0
    record(7, "diagnostics classification", ok,
           f"rowwise red {red:.2f} needs >= 0.9, clean green {green:.2f} "
           f">= 0.9, poc rowwise/other {ratio:.1f} needs >= 10 "
           f"(rowwise/clean {clean_ratio:.0f})")


def _check_als_monotonicity():
    rng = np.random.default_rng(0)
    for idx in range(100):
        dims = tuple(int(v) for v in rng.integers(3, 8, size=3))
        f = int(rng.integers(1, 3))
        vals = rng.normal(size=dims)
        opts = FitOptions(rank=f, seed=idx, n_starts=1, max_iter=50)
        if idx % 2 == 0:
            res = als_complete(Tensor3.from_array(vals), opts)
        else:
            m = rng.random(size=dims) > 0.1
            if not m.any():
                m[0, 0, 0] = True
            res, _ = als_incomplete(Tensor3(vals, m), opts)
        trace = res.loss_trace
        slack = 1e-9 * float(trace[0]) + 1e-12
        assert np.all(np.diff(trace) <= slack), f"instance {idx}"
    return "als loss monotone on 100 instances"


def _check_fold_unfold():
    rng = np.random.default_rng(1)
    for _ in range(25):
        dims = tuple(int(v) for v in rng.integers(1, 7, size=3))
        vals = rng.normal(size=dims)
        m = rng.random(size=dims) > 0.2
        t = Tensor3(np.where(m, vals, 0.0), m)
        u, um = unfold_mode1(t)
        t2 = fold_mode1(u, t.dims, um)
        assert np.array_equal(t2.values, t.values)
        assert np.array_equal(t2.mask, t.mask)
    return "fold/unfold round trips exact"


def _check_khatri_rao():
    rng = np.random.default_rng(2)
    for _ in range(25):
        j, k, f = (int(v) for v in rng.integers(1, 6, size=3))
        b = rng.normal(size=(j, f))
        c = rng.normal(size=(k, f))
        kr = khatri_rao(c, b)
        brute = np.empty((j * k, f))
        for ff in range(f):
            for kk in range(k):
                for jj in range(j):
                    brute[kk * j + jj, ff] = c[kk, ff] * b[jj, ff]
        assert np.allclose(kr, brute, rtol=0, atol=0)
    return "khatri-rao equals brute force"


def _check_mcd_oracles():
    rng = np.random.default_rng(3)
    for n in range(4, 13):
        x = rng.normal(size=n) * 3.0
        for h in range((n + 1) // 2 + 1, n + 1):
            best = min(
                (float(np.var(x[list(s)], ddof=1)) if h > 1 else 0.0)
                for s in itertools.combinations(range(n), h))
            got = unimcd(x, h)
            # undo nothing: compare achieved subset variance through the
            # ratio of scale to the estimator's own consistency factor,
            # recovered from a constant-window probe
            raw = _raw_variance_of(got, x, h)
            assert abs(raw - best) <= 1e-9 * max(best, 1.0), (n, h)
    for n in range(7, 13):
        x = rng.normal(size=(n, 2))
        x[:2] += 6.0
        h = (n + 3) // 2
        best = min(
            float(np.linalg.det(np.cov(x[list(s)].T)))
            for s in itertools.combinations(range(n), h))
        res = fastmcd(x, h=h, seed=0)
        got = float(np.linalg.det(np.cov(x[res.support].T)))
        assert got <= best * (1.0 + 1e-9), (n, h, got, best)
    return "unimcd/fastmcd match exhaustive subsets up to n=12"


def _raw_variance_of(result, x, h):
    # unimcd scales the best window's sd by a fixed h/n consistency factor;
    # calibrate that factor with a unit-variance probe over the same h/n
    probe = np.arange(float(x.size))
    ref = unimcd(probe, h)
    window = np.sort(probe)[:h]
    factor = ref.scale / float(np.std(window, ddof=1))
    return (result.scale / factor) ** 2 if factor > 0 else 0.0


def _check_chi2_value():
    v = float(np.sqrt(chi2_quantile(1, 0.998)))
    assert round(v, 2) == 3.09, v
    return f"sqrt(chi2_quantile(1, 0.998)) = {v:.4f} -> 3.09"


def _check_detector_equivariance():
    rng = np.random.default_rng(4)
    base = rng.normal(size=(45, 7))
    base[:, 1] = 0.85 * base[:, 0] + 0.15 * base[:, 1]
    base[:, 4] = -0.9 * base[:, 3] + 0.1 * base[:, 4]
    base[7, 1] += 9.0
    base[21, 4] -= 8.0
    a = np.array([1.5, -2.0, 0.25, 3.0, -1.0, 5.0, 0.5])
    b = np.array([-3.0, 7.0, 0.0, 1.0, -50.0, 2.0, 9.0])
    r1 = detect_cells(base, seed=5)
    r2 = detect_cells(base * a + b, seed=5)
    assert r1.cell_outliers == r2.cell_outliers
    assert r1.row_flags == r2.row_flags
    assert np.allclose(r1.imputed * a + b, r2.imputed, rtol=1e-8, atol=1e-8)
    return "detector flags invariant under columnwise affine maps"


def _check_seed_determinism(tmp):
    outs = []
    for run in range(2):
        spec = ContaminationSpec(*SCENARIOS["R10C10NA10"], gamma=7.0, seed=9)
        d = generate(spec, dims=(14, 9, 7))
        res = macroparafac(d.x, MacroOptions(
            rank=2, seed=9, fit=FitOptions(rank=2, seed=9, n_starts=3)))
        diag = compute_diagnostics(res, d.x)
        rows = run_scenario("C10", "macro", n_rep=2, seed=9, dims=(14, 9, 7),
                            n_starts=2)
        csv_path = tmp / f"rows{run}.csv"
        write_rows_csv(csv_path, rows,
                       fields=["replicate", "scenario", "method", "mse",
                               "b_angle", "c_angle", "mse_imp"])
        outs.append((res.model.a.tobytes(), res.model.b.tobytes(),
                     res.model.c.tobytes(), bytes(diag.rd),
                     json.dumps(diag.color).encode(),
                     csv_path.read_bytes()))
    assert outs[0] == outs[1]
    return "two identical seeded runs byte-identical end to end"


def test_criterion_8_property_suites(tmp_path):
    details = [
        _check_als_monotonicity(),
        _check_fold_unfold(),
        _check_khatri_rao(),
        _check_mcd_oracles(),
        _check_chi2_value(),
        _check_detector_equivariance(),
        _check_seed_determinism(tmp_path),
    ]
    record(8, "property suites", True, "; ".join(details))


def test_criterion_9_performance():
    script = (
        "import time, json\n"
        "from macrotensor.simulation import ContaminationSpec, SCENARIOS, "
        "generate\n"
        "from macrotensor.macro import MacroOptions, macroparafac\n"
        "from macrotensor.detect import detect_cells\n"
        "from macrotensor.tensor import unfold_mode1\n"
        "spec = ContaminationSpec(*SCENARIOS['R10C10NA10'], gamma=7.0, "
        "seed=0)\n"
        "d = generate(spec)\n"
        "t0 = time.perf_counter()\n"
        "macroparafac(d.x, MacroOptions(rank=2))\n"
        "total = time.perf_counter() - t0\n"
        "v, m = unfold_mode1(d.x)\n"
        "t0 = time.perf_counter()\n"
        "detect_cells(v, mask=m, seed=0)\n"
        "det = time.perf_counter() - t0\n"
        "print(json.dumps({'total': total, 'detect': det}))\n"
    )
    env = {"MACROTENSOR_THREADS": "1", "PATH": "/usr/bin:/bin"}
    proc = subprocess.run([sys.executable, "-c", script], env=env,
                          capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stderr
    timing = json.loads(proc.stdout.strip().splitlines()[-1])
    ok = timing["total"] <= 60.0
    record(9, "performance", ok,
           f"one full-size fit {timing['total']:.1f}s needs <= 60s single-"
           f"threaded; detector alone {timing['detect']:.1f}s "
           f"({100 * timing['detect'] / timing['total']:.0f}% share, "
           f"informational)")
