"""Acceptance suite: twelve end-to-end criteria at their stated tolerances.

Each test prints one ``PASS criterion k: ...`` or ``FAIL criterion k: ...``
line, which is also collected into the terminal summary.  Run the file on
its own with ``pytest tests/test_acceptance.py -v``; the whole suite takes
about ten minutes on one core.
"""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from nullwave.cli import main as cli_main
from nullwave.diagnostics import decay_fit, identity_residuals, l2_bound_check, scattering_convergence
from nullwave.fields import FieldState, Grid3, weighted_norm
from nullwave.identities import BATTERY_TENSOR_VECTORS, null_form_bound, run_battery
from nullwave.initdata import DataProfile, profile_state, random_interior_state, shell_state
from nullwave.mms import mms_convergence
from nullwave.propagator import energy_norm_sq, free_evolve, scattering_pullback
from nullwave.solver import RunConfig, run
from nullwave.tensors import bad_000, mc_family, validate_null_condition, zero_tensor


def verdict(k, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


# shared small-data runs (criteria 8, 9, 10) ---------------------------------------

SMALL_DATA = DataProfile("gaussian", width=1.1, amplitude=0.01)


def small_data_config(**kw):
    # dt = 1/16 keeps RK4 error well below the scattering signal; the support
    # threshold sits above the dealiasing noise floor of these data
    base = dict(
        n=64,
        L=16.0,
        t_end=8.0,
        cfl=0.125,
        tensor="mc-family",
        diagnostics_every=2,
        checkpoints=(2.0, 4.0, 6.0, 8.0),
        support_rel=1e-3,
        identities=False,
    )
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def null_run():
    cfg = small_data_config()
    t0 = time.perf_counter()
    art = run(cfg, profile_state(SMALL_DATA, None, cfg.grid))
    return art, time.perf_counter() - t0


@pytest.fixture(scope="module")
def free_reference():
    cfg = small_data_config(tensor="zero", q0=False, ks=False, truncated=False)
    return run(cfg, profile_state(SMALL_DATA, None, cfg.grid))


# 1 ------------------------------------------------------------------------------

def test_criterion_01_null_validator_corpus():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    good = [zero_tensor()] + [mc_family(rng.normal(size=4)) for _ in range(5)]
    worst = max(validate_null_condition(P).max_violation for P in good)
    passed = all(validate_null_condition(P).passed for P in good)
    bad = validate_null_condition(bad_000())
    elapsed = time.perf_counter() - t0
    ok = passed and worst <= 1e-12 and not bad.passed and abs(bad.max_violation - 1.0) <= 1e-12 and elapsed < 1.0
    verdict(
        1,
        ok,
        f"null presets max violation {worst:.2e}, bad-000 violation {bad.max_violation:.15f}, {elapsed:.2f} s",
    )


# 2 ------------------------------------------------------------------------------

def test_criterion_02_vector_field_identities():
    t0 = time.perf_counter()
    checks = run_battery(n=64, L=16.0, states=10, seed=0)
    elapsed = time.perf_counter() - t0
    ident = [c for c in checks if c.name.startswith(("weight identity", "commutator"))]
    worst = max(c.residual for c in ident)
    ok = len(ident) == 12 and all(c.passed for c in ident) and worst <= 1e-8 and elapsed < 30.0
    verdict(2, ok, f"{len(ident)} identity families on 10 states, worst residual {worst:.2e}, {elapsed:.1f} s")


# 3 ------------------------------------------------------------------------------

def test_criterion_03_null_form_bound():
    viol = 0
    res = reb = ratio = 0.0
    for c in BATTERY_TENSOR_VECTORS:
        P = mc_family(c)
        assert validate_null_condition(P).passed
        v, r, d, b = null_form_bound(P, directions=64, jets=1000, seed=0)
        viol += v
        ratio, res, reb = max(ratio, r), max(res, d), max(reb, b)
    ok = viol == 0 and res <= 1e-12
    verdict(
        3,
        ok,
        f"{viol} violations over 3 x 64 x 1000 jets, worst |Q|/bound {ratio:.3f}, "
        f"decomposition residual {res:.1e}, rebuild {reb:.1e}",
    )


# 4 ------------------------------------------------------------------------------

def test_criterion_04_exact_propagator():
    g = Grid3(32, 16.0)
    k = np.array([2, 3, 1]) * math.pi / g.L
    x1, x2, x3 = g.coords
    phase = np.broadcast_to(k[0] * x1 + k[1] * x2 + k[2] * x3, g.shape)
    om = float(np.linalg.norm(k))
    s = FieldState(g, np.cos(phase), g.zeros())
    s10 = free_evolve(s, 10.0)
    wave_err = max(
        np.max(np.abs(s10.w - np.cos(phase) * math.cos(10 * om))),
        np.max(np.abs(s10.v + om * np.cos(phase) * math.sin(10 * om))) / om,
    )
    energy_err = pull_err = 0.0
    for seed in range(5):
        st = random_interior_state(g, seed, t=1.0 + seed)
        e0 = energy_norm_sq(g, st.w, st.v)
        moved = free_evolve(st, 7.3)
        energy_err = max(energy_err, abs(energy_norm_sq(g, moved.w, moved.v) - e0) / e0)
        back = free_evolve(scattering_pullback(st).as_state(0.0), st.t)
        pull_err = max(pull_err, np.max(np.abs(back.w - st.w)) / st.scale(), np.max(np.abs(back.v - st.v)) / st.scale())
    ok = wave_err <= 1e-11 and energy_err <= 1e-12 and pull_err <= 1e-11
    verdict(
        4,
        ok,
        f"standing wave error {wave_err:.1e} at t=10, energy drift {energy_err:.1e}, pullback round trip {pull_err:.1e}",
    )


# 5 ------------------------------------------------------------------------------

def test_criterion_05_conformal_conservation():
    cfg = RunConfig(
        n=64, L=16.0, t_end=8.0, tensor="zero", q0=False, method="exact",
        diagnostics_every=1, ks=False, truncated=False, identities=False,
    )
    data = profile_state(DataProfile("gaussian", width=1.5, amplitude=1.0), None, cfg.grid)
    art = run(cfg, data)
    _, et = art.series("e_tilde")
    _, ec = art.series("e_con")
    drift = float(np.max(np.abs(et - et[0])) / et[0])
    lo, hi = float(np.min(ec) / ec[0]), float(np.max(ec) / ec[0])
    ok = np.all(np.isfinite(et)) and drift <= 1e-6 and lo >= 0.25 and hi <= 4.0
    verdict(5, ok, f"E~ drift {drift:.1e} over t in [0, 8], E_con / E_con(0) in [{lo:.3f}, {hi:.3f}]")


# 6 ------------------------------------------------------------------------------

def test_criterion_06_energy_identity_residuals():
    # outgoing shell: an exact free wave that stays clear of the origin
    out = []
    for cfl in (0.125, 0.0625):
        cfg = RunConfig(
            n=128, L=16.0, t_end=4.0, cfl=cfl, tensor="zero", q0=False,
            diagnostics_every=4, ks=False, truncated=False,
        )
        art = run(cfg, shell_state(cfg.grid, 1.0, 4.0))
        res = identity_residuals([r.identity for r in art.rows])
        out.append((art.dt, res.ghost, res.conformal))
    (dt1, g1, c1), (dt2, g2, c2) = out
    ok = max(g1, c1, g2, c2) <= 1e-6 and g1 / g2 >= 4.0 and c1 / c2 >= 4.0
    verdict(
        6,
        ok,
        f"dt={dt1:g}: ghost {g1:.2e} conformal {c1:.2e}; dt={dt2:g}: ghost {g2:.2e} conformal {c2:.2e}; "
        f"shrink {g1 / g2:.1f}x and {c1 / c2:.1f}x",
    )


# 7 ------------------------------------------------------------------------------

def test_criterion_07_manufactured_solution():
    t0 = time.perf_counter()
    res = mms_convergence(n=64)
    elapsed = time.perf_counter() - t0
    p = res.fitted_order
    ok = abs(p - 4.0) <= 0.2 and res.spatial_error < min(res.errors) and elapsed < 300.0
    pairs = ", ".join(f"{o:.2f}" for o in res.orders)
    verdict(
        7,
        ok,
        f"fitted order {p:.3f} (pairwise {pairs}), spatial error {res.spatial_error:.1e} "
        f"< smallest time error {min(res.errors):.1e}, {elapsed:.0f} s",
    )


# 8 ------------------------------------------------------------------------------

def test_criterion_08_small_data_null_run(null_run):
    art, elapsed = null_run
    r1, r8 = art.row_at(1.0), art.row_at(8.0)
    egst = r8.egst_truncated / r1.egst_truncated
    econ = r8.e_con / r1.e_con
    sup = r8.sup_dw_weighted / r1.sup_dw_weighted
    _, acc = art.series("ghost_flux_acc")
    ok = (
        math.isclose(r1.t, 1.0) and math.isclose(r8.t, 8.0)
        and art.margin_min >= 0.9
        and egst <= 1.10 and econ <= 4.0 and sup <= 3.0
        and bool(np.all(np.diff(acc) >= 0.0))
        and elapsed < 900.0
    )
    verdict(
        8,
        ok,
        f"margin {art.margin_min:.4f}, truncated E_gst ratio {egst:.4f}, E_con ratio {econ:.3f}, "
        f"weighted sup ratio {sup:.3f} (t=8 vs t=1), {elapsed:.0f} s",
    )


# 9 ------------------------------------------------------------------------------

def test_criterion_09_decay_exponent(null_run, free_reference):
    art, _ = null_run
    fit = decay_fit(*art.series("sup_dw"), window=(2.0, 8.0))
    ref = decay_fit(*free_reference.series("sup_dw"), window=(2.0, 8.0))
    ok = -1.3 <= fit.exponent <= -0.7 and abs(fit.exponent - ref.exponent) <= 0.2
    verdict(9, ok, f"nonlinear exponent {fit.exponent:.3f}, free reference {ref.exponent:.3f}, {fit.samples} samples")


# 10 -----------------------------------------------------------------------------

def test_criterion_10_scattering(null_run):
    art, _ = null_run
    rep = scattering_convergence(art.checkpoints)
    ok = rep.times == (2.0, 4.0, 6.0, 8.0) and rep.decreasing
    diffs = ", ".join(f"{d:.2e}" for d in rep.differences)
    verdict(10, ok, f"pullback differences {diffs}")


# 11 -----------------------------------------------------------------------------

def test_criterion_11_l2_bound_stability():
    # same physical data and diagnostic times on both grids
    prof = DataProfile("gaussian", width=2.0, amplitude=0.01)
    ratios = {}
    for n, cfl, every in ((32, 0.25, 1), (64, 0.125, 4)):
        cfg = RunConfig(
            n=n, L=16.0, t_end=5.0, cfl=cfl, diagnostics_every=every,
            ks=False, truncated=False, identities=False,
        )
        g = cfg.grid
        data = profile_state(prof, prof, g)
        art = run(cfg, data)
        res = l2_bound_check(art.rows, weighted_norm(data.v, g, kind="L1"), weighted_norm(data.v, g), eta=2.0 / 3.0)
        ratios[n] = res.max_ratio
    rel = abs(ratios[64] - ratios[32]) / ratios[64]
    ok = all(np.isfinite(list(ratios.values()))) and rel <= 0.2
    verdict(11, ok, f"max ratio {ratios[32]:.5f} (n=32) vs {ratios[64]:.5f} (n=64), relative change {rel:.1e}")


# 12 -----------------------------------------------------------------------------

def test_criterion_12_determinism(tmp_path):
    args = ["grid.n=64", "time.t_end=2", "diagnostics.every=1"]
    codes = [cli_main(["simulate", "-o", str(tmp_path / name), *args]) for name in ("a", "b")]
    a = (tmp_path / "a" / "energies.csv").read_bytes()
    b = (tmp_path / "b" / "energies.csv").read_bytes()
    ok = codes == [0, 0] and a == b and len(a) > 0
    verdict(12, ok, f"two simulate runs, energies.csv {len(a)} bytes each, identical={a == b}")
