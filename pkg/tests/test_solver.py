import math

import numpy as np
import pytest

from nullwave.errors import ConfigError, HyperbolicityError, NaNError
from nullwave.fields import FieldState, Grid3
from nullwave.initdata import DataProfile, profile_state, random_interior_state
from nullwave.propagator import free_evolve
from nullwave.solver import RunConfig, compute_rhs, run, step_rk4
from nullwave.tensors import NullFormTensor, mc_family, zero_tensor

G32 = Grid3(32, 16.0)


def small_gaussian(grid, amp=0.01, width=2.0, vamp=0.0):
    w1 = DataProfile("gaussian", width=width, amplitude=vamp) if vamp else None
    return profile_state(DataProfile("gaussian", width=width, amplitude=amp), w1, grid)


# config ----------------------------------------------------------------------------

def test_config_defaults():
    c = RunConfig()
    assert (c.n, c.L, c.delta, c.cfl, c.tensor) == (64, 16.0, 1 / 24, 0.5, "mc-family")
    nsteps, dt = c.steps()
    assert dt <= c.cfl * c.grid.h and nsteps * dt == pytest.approx(c.t_end)


@pytest.mark.parametrize(
    "kw",
    [
        {"delta": 0.2},
        {"delta": 0.0},
        {"delta": 1 / 12},
        {"cfl": 0.0},
        {"cfl": 1.5},
        {"n": 48},
        {"t_end": -1.0},
        {"method": "euler"},
        {"cone": "maybe"},
        {"tensor": "no-such"},
        {"method": "exact"},
    ],
)
def test_config_rejects(kw):
    with pytest.raises(ConfigError):
        RunConfig(**kw)


def test_delta_message_cites_range():
    with pytest.raises(ConfigError, match=r"\(0, 1/12\)"):
        RunConfig(delta=0.2)


# right-hand side ----------------------------------------------------------------------

def test_rhs_of_zero_state():
    r = compute_rhs(FieldState.zeros(G32), mc_family())
    assert not np.any(r.dw) and not np.any(r.dv)


@pytest.mark.parametrize("dealias", [True, False])
def test_rhs_semilinear_single_mode(dealias):
    g = G32
    m = np.array([1, 2, 0])
    k = m * math.pi / g.L
    x1, x2, x3 = g.coords
    phase = np.broadcast_to(k[0] * x1 + k[1] * x2 + k[2] * x3, g.shape)
    s = FieldState(g, np.cos(phase), g.zeros())
    k2 = float(k @ k)
    r = compute_rhs(s, zero_tensor(), dealias=dealias)
    expect = -k2 * np.cos(phase) + k2 * np.sin(phase) ** 2
    assert np.max(np.abs(r.dv - expect)) <= 1e-10
    assert np.array_equal(r.dw, s.v)


def test_rhs_invariant_under_resymmetrization():
    rng = np.random.default_rng(0)
    raw = 0.1 * rng.normal(size=(4, 4, 4))
    P1 = NullFormTensor(raw)
    P2 = NullFormTensor(raw.transpose(0, 2, 1))
    s = random_interior_state(G32, 1)
    s = s.replace(0.01 * s.w / s.scale(), 0.01 * s.v / s.scale())
    assert np.array_equal(compute_rhs(s, P1).dv, compute_rhs(s, P2).dv)


def test_rhs_margin_abort():
    s = small_gaussian(G32, amp=0.0, vamp=0.8, width=2.0)
    from nullwave.tensors import bad_000

    with pytest.raises(HyperbolicityError) as info:
        compute_rhs(s, bad_000())
    assert info.value.margin == pytest.approx(0.2, abs=1e-12)
    assert info.value.exit_code == 2


# time stepping ----------------------------------------------------------------------------

def test_zero_state_is_fixed_point():
    s, m = step_rk4(FieldState.zeros(G32), mc_family(), 0.1)
    assert not np.any(s.w) and not np.any(s.v) and m == 1.0 and s.t == pytest.approx(0.1)


def test_one_step_deviation_from_free_is_quadratic():
    dt = 0.1
    diffs = []
    for amp in (1e-3, 2e-3):
        s = small_gaussian(G32, amp=amp)
        a, _ = step_rk4(s, zero_tensor(), dt)
        b = free_evolve(s, dt)
        diffs.append(np.max(np.abs(a.w - b.w)) + np.max(np.abs(a.v - b.v)))
    # nonlinear residual dominates the RK4 error of the linear part
    assert diffs[1] / diffs[0] == pytest.approx(4.0, rel=0.05)
    assert diffs[0] <= 10 * (1e-3) ** 2 * dt


def test_free_subsystem_time_reversal():
    s = small_gaussian(G32, amp=1.0, vamp=0.5)
    dt = 0.01
    a, _ = step_rk4(s, zero_tensor(), dt, q0=False)
    b, _ = step_rk4(a, zero_tensor(), -dt, q0=False)
    assert np.max(np.abs(b.w - s.w)) <= 1e-10 * s.scale()
    assert np.max(np.abs(b.v - s.v)) <= 1e-10 * s.scale()


def test_convergence_against_fine_reference():
    P = mc_family()
    s0 = small_gaussian(G32, amp=0.05, width=2.5, vamp=0.02)
    T = 1.0

    def evolve(dt):
        s = s0
        for _ in range(int(round(T / dt))):
            s, _ = step_rk4(s, P, dt)
        return s

    dt = 0.1
    ref = evolve(dt / 8)
    e1 = np.max(np.abs(evolve(dt).w - ref.w))
    e2 = np.max(np.abs(evolve(dt / 2).w - ref.w))
    assert e1 / e2 >= 12.0


def test_translation_equivariance():
    P = mc_family()
    g = G32
    s = small_gaussian(g, amp=0.05, width=2.0, vamp=0.03)
    a, b = s, s.shifted((1, 1, 1))
    for _ in range(4):
        a, _ = step_rk4(a, P, 0.1)
        b, _ = step_rk4(b, P, 0.1)
    assert np.max(np.abs(a.shifted((1, 1, 1)).w - b.w)) <= 1e-10 * s.scale()


def test_nan_abort():
    g = Grid3(16, 8.0)
    x1, x2, x3 = g.coords
    s = FieldState(g, 1e160 * np.exp(-(x1**2 + x2**2 + x3**2) / 4.0), g.zeros())
    with np.errstate(all="ignore"), pytest.raises(NaNError) as info:
        step_rk4(s, zero_tensor(), 0.1)
    assert info.value.exit_code == 3


# driver -------------------------------------------------------------------------------

def test_run_zero_data():
    cfg = RunConfig(n=16, L=8.0, t_end=1.0, diagnostics_every=1)
    art = run(cfg, FieldState.zeros(cfg.grid))
    for r in art.rows:
        for col in ("e_nat", "ghost_flux_acc", "e_gst", "e_con", "e_tilde", "sup_w_weighted", "sup_dw_weighted", "ks_ratio"):
            assert getattr(r, col) == 0.0
    assert art.margin_min == 1.0


def test_run_small_data_margin_and_determinism():
    cfg = RunConfig(n=32, L=16.0, t_end=1.0, diagnostics_every=2, checkpoints=(0.5, 1.0))
    data = small_gaussian(cfg.grid, amp=0.01, width=2.0)
    a = run(cfg, data)
    b = run(cfg, data)
    assert a.margin_min >= 0.9
    assert a.csv_text() == b.csv_text()
    assert sorted(a.checkpoints) == [0.5, 1.0]
    assert a.checkpoints[1.0].t == pytest.approx(1.0)
    assert a.rows[0].t == 0.0 and a.rows[-1].t == pytest.approx(1.0)


def test_run_with_bad_tensor_runs_or_aborts():
    cfg = RunConfig(n=32, L=16.0, t_end=0.5, tensor="bad-000", ks=False, truncated=False)
    data = small_gaussian(cfg.grid, amp=0.01, width=1.5)
    try:
        art = run(cfg, data)
        assert art.steps > 0
    except HyperbolicityError:
        pass


def test_run_warns_past_wraparound_horizon():
    cfg = RunConfig(n=32, L=16.0, t_end=9.0, ks=False, truncated=False, identities=False, cone="off")
    art = run(cfg, small_gaussian(cfg.grid, amp=0.01, width=1.5))
    assert any("wraparound" in w for w in art.warnings)


def test_run_rejects_foreign_grid():
    with pytest.raises(ConfigError):
        run(RunConfig(n=16, L=8.0), FieldState.zeros(Grid3(32, 8.0)))


def test_exact_method_matches_propagator():
    cfg = RunConfig(n=32, L=16.0, t_end=1.0, tensor="zero", q0=False, method="exact")
    data = small_gaussian(cfg.grid, amp=1.0, width=1.5)
    art = run(cfg, data)
    ref = free_evolve(data, 1.0)
    assert np.max(np.abs(art.final_state.w - ref.w)) < 1e-12
