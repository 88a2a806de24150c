"""Residual battery for the vector-field identities and the null-form bound.

Every check compares two independent evaluations of the same quantity on
seeded random states (or random jets) and reports the worst residual
relative to a scale.  The battery backs the ``identity-suite`` command.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import (
    FieldState,
    Grid3,
    VectorFieldJets,
    _lincomb,
    field_coefficients,
    good_derivative,
    laplacian,
    spectral_derivative,
    VECTOR_FIELDS,
)
from .initdata import random_interior_state
from .propagator import free_evolve
from .tensors import DEFAULT_TOL, NullFormTensor, fibonacci_sphere, good_decomposition, mc_family

IDENTITY_TOL = 1e-8
DECOMPOSITION_TOL = 1e-12
TIME_STENCIL_STEP = 1e-3


@dataclass(frozen=True)
class IdentityCheck:
    name: str
    residual: float  # worst residual divided by scale
    threshold: float
    samples: int

    @property
    def passed(self) -> bool:
        return bool(self.residual <= self.threshold)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: residual {self.residual:.3e} (threshold {self.threshold:.1e}, samples {self.samples})"


# good-derivative identities --------------------------------------------------

def weight_identity_residuals(state: FieldState) -> dict:
    """Max residuals of the five identities expressing ``d u`` and ``G_a u`` by vector fields.

    ``(t^2 - r^2) d_t u = t L0 u - x^a La u``, the three spatial analogues,
    and ``r G_a u = La u + (r - t) d_a u`` (checked for every ``a``).
    """
    g = state.grid
    t = state.t
    X = g.coords
    r = g.r
    J = VectorFieldJets(state, "free")
    F = {name: J.first(i) for i, name in enumerate(VECTOR_FIELDS)}
    d = [state.v] + [spectral_derivative(state.w, g, a) for a in (1, 2, 3)]
    s = t * t - r * r
    out = {}
    out["dt"] = np.max(np.abs(s * d[0] - (t * F["L0"] - X[0] * F["L1"] - X[1] * F["L2"] - X[2] * F["L3"])))
    rhs1 = t * F["L1"] - X[0] * F["L0"] + X[1] * F["O12"] + X[2] * F["O13"]
    rhs2 = t * F["L2"] - X[1] * F["L0"] - X[0] * F["O12"] + X[2] * F["O23"]
    rhs3 = t * F["L3"] - X[2] * F["L0"] - X[0] * F["O13"] - X[1] * F["O23"]
    out["d1"] = np.max(np.abs(s * d[1] - rhs1))
    out["d2"] = np.max(np.abs(s * d[2] - rhs2))
    out["d3"] = np.max(np.abs(s * d[3] - rhs3))
    worst = 0.0
    for a in (1, 2, 3):
        G = good_derivative(state, a)
        worst = max(worst, float(np.max(np.abs(r * G - (F[f"L{a}"] + (r - t) * d[a])))))
    out["good"] = worst
    return {k: float(v) for k, v in out.items()}


# first-order commutators --------------------------------------------------------

def _first_order_fields(state: FieldState) -> list:
    """``Gamma_i w`` for all eleven fields from first derivatives only."""
    g = state.grid
    d1 = [state.v] + [spectral_derivative(state.w, g, a) for a in (1, 2, 3)]
    return [_lincomb(field_coefficients(i, g, state.t)[0], d1, g.shape) for i in range(11)]


def _time_derivative(state: FieldState, fn, tau: float = TIME_STENCIL_STEP) -> np.ndarray:
    """Fourth-order central difference in time of ``fn(state(t))`` along the free flow."""
    vals = {k: fn(free_evolve(state, k * tau)) for k in (-2, -1, 1, 2)}
    return (vals[-2] - 8.0 * vals[-1] + 8.0 * vals[1] - vals[2]) / (12.0 * tau)


def commutator_residuals(state: FieldState, tau: float = TIME_STENCIL_STEP) -> dict:
    """Max residual of ``d_b(Gamma u) - Gamma(d_b u) = (d_b c^a) d_a u`` for first-order fields.

    ``d_b(Gamma u)`` is computed by spectral differentiation of the gridwise
    field (``b`` spatial) or by a time stencil through the exact free flow
    (``b = 0``), independently of the jet formulas used elsewhere.  The free
    state's time derivative is ``(v, Lap w)``.
    """
    g = state.grid
    d1 = [state.v] + [spectral_derivative(state.w, g, a) for a in (1, 2, 3)]
    deriv_states = [FieldState(g, state.v, laplacian(state.w, g), state.t)]
    for a in (1, 2, 3):
        deriv_states.append(FieldState(g, d1[a], spectral_derivative(state.v, g, a), state.t))
    base = _first_order_fields(state)
    shifted = [_first_order_fields(s) for s in deriv_states]
    stencil = _time_derivative(state, lambda s: np.stack(_first_order_fields(s)), tau)
    out = {}
    for i, name in enumerate(VECTOR_FIELDS):
        if i < 4:
            continue  # translations commute trivially
        _c, dc = field_coefficients(i, g, state.t)
        gamma_u = base[i]
        worst = 0.0
        for b in range(4):
            if b == 0:
                lhs = stencil[i]
            else:
                lhs = spectral_derivative(gamma_u, g, b)
            lhs = lhs - shifted[b][i]
            rhs = sum(dc[b][a] * d1[a] for a in range(4) if dc[b][a] != 0.0)
            worst = max(worst, float(np.max(np.abs(lhs - rhs))))
        out[name] = worst
    return out


# null-form bound ------------------------------------------------------------------

def null_form_bound(P: NullFormTensor, directions: int = 64, jets: int = 1000, seed: int = 0, tol: float = DEFAULT_TOL):
    """Check ``|Q_P| <= C(omega)(|Gu||ddv| + |du||Gdv|)`` on random jets.

    Norms are largest components.  A slack of ``1e-12 |du||ddv|`` absorbs
    round-off in the comparison.

    Returns
    -------
    violations : int
    worst_ratio : float
        Largest ``|Q_P| / bound`` seen.
    worst_residual : float
        Largest ``|contract(P, (1, -omega))|``.
    worst_rebuild : float
        Largest mismatch between ``Q_P`` and its rebuilt decomposition.
    """
    rng = np.random.default_rng(seed)
    omegas = fibonacci_sphere(directions)
    viol = 0
    worst_ratio = 0.0
    worst_res = 0.0
    worst_rebuild = 0.0
    c = P.coeffs
    for om in omegas:
        rep = good_decomposition(P, om, tol)
        worst_res = max(worst_res, abs(rep.residual))
        du = rng.normal(size=(jets, 4))
        M = rng.normal(size=(jets, 4, 4))
        ddv = 0.5 * (M + M.transpose(0, 2, 1))
        q = np.einsum("gab,ng,nab->n", c, du, ddv)
        gu = om[None, :] * du[:, :1] + du[:, 1:]
        gdv = om[None, :, None] * ddv[:, :1, :] + ddv[:, 1:, :]
        n_du = np.abs(du).max(axis=1)
        n_ddv = np.abs(ddv).reshape(jets, -1).max(axis=1)
        bound = rep.constant * (np.abs(gu).max(axis=1) * n_ddv + n_du * np.abs(gdv).reshape(jets, -1).max(axis=1))
        slack = 1e-12 * n_du * n_ddv
        viol += int(np.count_nonzero(np.abs(q) > bound + slack))
        ok = bound > 0
        if np.any(ok):
            worst_ratio = max(worst_ratio, float(np.max(np.abs(q[ok]) / bound[ok])))
        rebuild = np.einsum("cab,nc,nab->n", rep.A, gu, ddv)
        rebuild += du[:, 0] * np.einsum("ab,nab->n", rep.B, gdv)
        rebuild += du[:, 0] * np.einsum("b,nb->n", rep.C, gdv[:, :, 0])
        rebuild += rep.residual * du[:, 0] * ddv[:, 0, 0]
        scale = np.maximum(1.0, n_du * n_ddv)
        worst_rebuild = max(worst_rebuild, float(np.max(np.abs(rebuild - q) / scale)))
    return viol, worst_ratio, worst_res, worst_rebuild


BATTERY_TENSOR_VECTORS = ((1.0, 0.5, -0.25, 0.125), (0.3, -1.0, 0.7, 0.2), (-0.6, 0.1, 0.9, -0.4))


def run_battery(n: int = 64, L: float = 16.0, states: int = 10, seed: int = 0, t: float = 0.75) -> list:
    """Run every identity check and return a list of :class:`IdentityCheck`."""
    grid = Grid3(n, L)
    ss = np.random.SeedSequence(seed)
    seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(states)]
    worst_w = {}
    worst_c = {}
    for sd in seeds:
        st = random_interior_state(grid, sd, t=t)
        scale = st.scale()
        for k, v in weight_identity_residuals(st).items():
            worst_w[k] = max(worst_w.get(k, 0.0), v / scale)
        for k, v in commutator_residuals(st).items():
            worst_c[k] = max(worst_c.get(k, 0.0), v / scale)
    checks = [IdentityCheck(f"weight identity {k}", v, IDENTITY_TOL, states) for k, v in worst_w.items()]
    checks += [IdentityCheck(f"commutator d_b vs {k}", v, IDENTITY_TOL, states) for k, v in worst_c.items()]
    for cvec in BATTERY_TENSOR_VECTORS:
        P = mc_family(cvec)
        viol, ratio, res, reb = null_form_bound(P, seed=seed)
        label = ",".join(f"{x:g}" for x in cvec)
        checks.append(IdentityCheck(f"null-form bound violations c=({label})", float(viol), 0.0, 64 * 1000))
        checks.append(IdentityCheck(f"decomposition residual c=({label})", res, DECOMPOSITION_TOL, 64))
        checks.append(IdentityCheck(f"decomposition rebuild c=({label})", reb, DECOMPOSITION_TOL, 64 * 1000))
    return checks
