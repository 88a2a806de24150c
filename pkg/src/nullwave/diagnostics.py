"""Energies, weighted sup norms, identity residuals, decay fits and scattering.

Two space-time identities are monitored for solutions of ``w_tt = Lap w + f``.

Ghost weight, with ``q(rho) = int_{-inf}^{rho} <s>^{-1-2 delta} ds`` and
``rho = r - t``::

    d/dt int e^q |dw|^2 + int e^q q' (v^2 + 2 v omega.grad w + |grad w|^2)
        = 2 int f e^q v

Conformal, with ``E~ = int (L0 w + 2w)^2 + sum |Omega_ab w|^2 + sum |L_a w|^2``::

    d/dt E~ = 2 int f (t (L0 w + 2w) + x^a L_a w)

The flux density ``v^2 + 2 v omega.grad w + |grad w|^2`` equals
``sum_a |G_a w|^2`` wherever ``|omega| = 1``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields as dc_fields

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import beta as beta_fn
from scipy.special import hyp2f1

from .errors import DiagnosticError, SupportMarginError
from .fields import (
    BracketWeight,
    FieldState,
    GridJet,
    VectorFieldJets,
    bracket,
    check_support,
    grid_sum,
    grid_jet,
    integrate,
    second_order_pairs,
    support_limit,
    support_radius,
    weighted_norm,
)
from .propagator import energy_distance, energy_norm_sq, scattering_pullback

log = logging.getLogger(__name__)

TABLE_POINTS = 2**14
TABLE_SPAN = 8.0  # table covers asinh(rho) in [-8, 8], i.e. |rho| < ~1490


# ghost weight ---------------------------------------------------------------

def ghost_q_exact(rho, delta: float):
    """Closed form ``q(rho) = B(1/2, delta)/2 + rho 2F1(1/2, 1/2+delta; 3/2; -rho^2)``."""
    rho = np.asarray(rho, dtype=float)
    return 0.5 * beta_fn(0.5, delta) + rho * hyp2f1(0.5, 0.5 + delta, 1.5, -rho * rho)


class GhostWeight:
    """Tabulated ``q(rho)`` with cubic interpolation in ``s = asinh(rho)``.

    In the variable ``s`` the derivative ``dq/ds = cosh(s)^{-2 delta}`` is
    smooth and bounded, so a uniform table in ``s`` is accurate far beyond
    what the diagnostics need.  Arguments outside the table use the closed
    form directly.
    """

    def __init__(self, delta: float, points: int = TABLE_POINTS, span: float = TABLE_SPAN):
        if not 0.0 < delta:
            raise ValueError("delta must be positive")
        self.delta = float(delta)
        self.q_max = float(beta_fn(0.5, self.delta))
        self.span = float(span)
        s = np.linspace(-span, span, points)
        q = ghost_q_exact(np.sinh(s), self.delta)
        dq = np.cosh(s) ** (-2.0 * self.delta)
        self._spline = CubicSpline(s, q, bc_type=((1, dq[0]), (1, dq[-1])))

    def q(self, rho):
        rho = np.asarray(rho, dtype=float)
        s = np.arcsinh(rho)
        inside = np.abs(s) <= self.span
        out = self._spline(np.clip(s, -self.span, self.span))
        if not np.all(inside):
            out = np.where(inside, out, ghost_q_exact(rho, self.delta))
        return out

    def dq(self, rho):
        """``q'(rho) = <rho>^{-1-2 delta}``."""
        return bracket(rho) ** (-1.0 - 2.0 * self.delta)

    def eq(self, rho):
        return np.exp(self.q(rho))


# energies -------------------------------------------------------------------

def natural_energy(state: FieldState) -> float:
    """``int v^2 + |grad w|^2`` (Parseval, matching the free propagator)."""
    return energy_norm_sq(state.grid, state.w, state.v)


def _jet_or(state, jet, closure="free"):
    return jet if jet is not None else grid_jet(state, closure)


def ghost_flux_density(state: FieldState, delta: float, jet: GridJet | None = None) -> float:
    """``sum_a int |G_a w|^2 / <r - t>^{1+2 delta}`` at the state's time."""
    g = state.grid
    j = _jet_or(state, jet)
    om = g.omega
    G2 = sum(np.square(om[a] * j.d1[0] + j.d1[a + 1]) for a in range(3))
    wt = bracket(g.r - state.t) ** (-1.0 - 2.0 * delta)
    return integrate(G2 * wt, g)


def ghost_energy(state: FieldState, flux_acc: float) -> float:
    """``E_gst = E_nat + accumulated ghost flux``."""
    return natural_energy(state) + float(flux_acc)


def conformal_fields(state: FieldState, jet: GridJet | None = None):
    """Return ``(L0 w, [Omega_12, Omega_13, Omega_23] w, [L_1, L_2, L_3] w)``."""
    g = state.grid
    j = _jet_or(state, jet)
    x = g.coords
    t = state.t
    v = j.d1[0]
    dw = j.d1[1:]
    L0 = t * v + x[0] * dw[0] + x[1] * dw[1] + x[2] * dw[2]
    Om = [x[0] * dw[1] - x[1] * dw[0], x[0] * dw[2] - x[2] * dw[0], x[1] * dw[2] - x[2] * dw[1]]
    La = [t * dw[a] + x[a] * v for a in range(3)]
    return L0, Om, La


def conformal_energy(state: FieldState, jet: GridJet | None = None, check: bool = True, threshold=None):
    """``(E_con, E~)``.

    ``E_con = int (L0 w)^2 + w^2 + sum_{a<b} (Omega_ab w)^2 + sum_a (L_a w)^2``
    and ``E~`` replaces ``(L0 w)^2 + w^2`` with ``(L0 w + 2w)^2``.
    """
    if check:
        check_support(state, threshold, what="conformal energy")
    g = state.grid
    L0, Om, La = conformal_fields(state, jet)
    w = state.w
    common = sum(np.square(o) for o in Om) + sum(np.square(l) for l in La)
    e_con = integrate(np.square(L0) + np.square(w) + common, g)
    e_tilde = integrate(np.square(L0 + 2.0 * w) + common, g)
    return e_con, e_tilde


def conformal_cross_term(state: FieldState, jet: GridJet | None = None) -> float:
    """``int 4 w L0 w + 3 w^2``, which equals ``E~ - E_con``."""
    L0, _, _ = conformal_fields(state, jet)
    return integrate(4.0 * state.w * L0 + 3.0 * np.square(state.w), state.grid)


# identity terms -------------------------------------------------------------

@dataclass(frozen=True)
class IdentitySample:
    """Instantaneous terms of both identities at one time."""

    t: float
    ghost_energy: float  # int e^q |dw|^2
    ghost_flux: float  # int e^q q' (v^2 + 2 v omega.grad w + |grad w|^2)
    ghost_source: float  # 2 int f e^q v
    e_tilde: float
    conformal_source: float  # 2 int f (t (L0 w + 2w) + x^a L_a w)


def identity_sample(
    state: FieldState,
    weight: GhostWeight,
    forcing=None,
    jet: GridJet | None = None,
) -> IdentitySample:
    g = state.grid
    j = _jet_or(state, jet)
    v = j.d1[0]
    dw = j.d1[1:]
    om = g.omega
    rho = g.r - state.t
    eq = weight.eq(rho)
    grad2 = dw[0] ** 2 + dw[1] ** 2 + dw[2] ** 2
    radial = om[0] * dw[0] + om[1] * dw[1] + om[2] * dw[2]
    E = integrate(eq * (v * v + grad2), g)
    F = integrate(eq * weight.dq(rho) * (v * v + 2.0 * v * radial + grad2), g)
    L0, Om, La = conformal_fields(state, j)
    common = sum(np.square(o) for o in Om) + sum(np.square(l) for l in La)
    Et = integrate(np.square(L0 + 2.0 * state.w) + common, g)
    if forcing is None:
        S = C = 0.0
    else:
        f = np.asarray(forcing, dtype=float)
        x = g.coords
        S = 2.0 * integrate(f * eq * v, g)
        mult = state.t * (L0 + 2.0 * state.w) + x[0] * La[0] + x[1] * La[1] + x[2] * La[2]
        C = 2.0 * integrate(f * mult, g)
    return IdentitySample(state.t, E, F, S, Et, C)


def _time_integral(t, y, rule: str) -> float:
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(t) < 2:
        return 0.0
    if rule == "trapezoid":
        return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(t)))
    if rule == "simpson":
        from scipy.integrate import simpson

        return float(simpson(y, x=t))
    raise ValueError(f"unknown quadrature rule {rule!r}")


@dataclass(frozen=True)
class IdentityResiduals:
    ghost: float
    conformal: float
    window: tuple
    ghost_scale: float
    conformal_scale: float


def identity_residuals(samples, rule: str = "simpson") -> IdentityResiduals:
    """Residuals of both identities over the window spanned by ``samples``.

    Each residual is the absolute defect of the time-integrated identity,
    divided by the window length and by the largest value of the
    corresponding energy in the window (1 if that is zero).
    """
    samples = list(samples)
    if len(samples) < 2:
        raise DiagnosticError("identity residuals need at least two samples")
    t = [s.t for s in samples]
    span = t[-1] - t[0]
    if not span > 0:
        raise DiagnosticError("identity window must have positive length")
    g_def = (
        samples[-1].ghost_energy
        - samples[0].ghost_energy
        + _time_integral(t, [s.ghost_flux for s in samples], rule)
        - _time_integral(t, [s.ghost_source for s in samples], rule)
    )
    c_def = samples[-1].e_tilde - samples[0].e_tilde - _time_integral(t, [s.conformal_source for s in samples], rule)
    g_scale = max(abs(s.ghost_energy) for s in samples) or 1.0
    c_scale = max(abs(s.e_tilde) for s in samples) or 1.0
    return IdentityResiduals(
        abs(g_def) / (g_scale * span),
        abs(c_def) / (c_scale * span),
        (t[0], t[-1]),
        g_scale,
        c_scale,
    )


# weighted sup norms ---------------------------------------------------------

@dataclass(frozen=True)
class SupRecord:
    t: float
    sup_dw: float
    sup_w_weighted: float  # <t+r><t-r>^{1/2} |w|
    sup_dw_weighted: float  # <t+r><t-r>^{1/2} |dw|
    sup_dw_weighted32: float  # <t+r><t-r>^{3/2} |dw|


def weighted_sup_tracker(state: FieldState, jet: GridJet | None = None, check: bool = True, threshold=None) -> SupRecord:
    """Weighted sup norms with ``|dw|^2 = v^2 + |grad w|^2``."""
    if check:
        check_support(state, threshold, what="weighted sup norms")
    g = state.grid
    j = _jet_or(state, jet)
    dw = np.sqrt(j.d1[0] ** 2 + j.d1[1] ** 2 + j.d1[2] ** 2 + j.d1[3] ** 2)
    t = state.t
    w12 = BracketWeight(1.0, 0.5).array(g, t)
    w32 = BracketWeight(1.0, 1.5).array(g, t)
    return SupRecord(
        t,
        float(np.max(dw)),
        float(np.max(w12 * np.abs(state.w))),
        float(np.max(w12 * dw)),
        float(np.max(w32 * dw)),
    )


# Klainerman-Sobolev ratio ---------------------------------------------------

def gamma_norms(state: FieldState, closure="free", jets: VectorFieldJets | None = None) -> np.ndarray:
    """L2 norms of ``w``, the 11 ``Gamma_i w`` and the 66 ``Gamma_i Gamma_j w`` (i <= j)."""
    vf = jets if jets is not None else VectorFieldJets(state, closure)
    g = state.grid
    out = [weighted_norm(state.w, g)]
    out += [weighted_norm(vf.first(i), g) for i in range(11)]
    out += [weighted_norm(vf.second(i, j), g) for i, j in second_order_pairs()]
    return np.array(out)


def ks_ratio(state: FieldState, closure="free", jets: VectorFieldJets | None = None, check: bool = True, threshold=None) -> float:
    """``sup <t+r><t-r>^{1/2}|w|`` over the sum of 78 vector-field L2 norms.

    The zero state gives 0, since the inequality holds trivially there.
    Any other state with a vanishing denominator gives NaN.
    """
    if check:
        check_support(state, threshold, what="Klainerman-Sobolev ratio")
    g = state.grid
    num = float(np.max(BracketWeight(1.0, 0.5).array(g, state.t) * np.abs(state.w)))
    den = math.fsum(gamma_norms(state, closure, jets))
    if den == 0.0:
        return 0.0 if num == 0.0 else float("nan")
    return num / den


# truncated ghost energies ---------------------------------------------------

def order1_energy_terms(state: FieldState, jets: VectorFieldJets, delta: float):
    """Natural energy and ghost flux density of ``Gamma_i w`` for ``i = 0..10``.

    Returns two arrays of length 11.
    """
    g = state.grid
    om = g.omega
    wt = bracket(g.r - state.t) ** (-1.0 - 2.0 * delta)
    e = np.empty(11)
    flux = np.empty(11)
    for i in range(11):
        d = jets.dfirst(i)
        e[i] = integrate(d[0] ** 2 + d[1] ** 2 + d[2] ** 2 + d[3] ** 2, g)
        G2 = sum(np.square(om[a] * d[0] + d[a + 1]) for a in range(3))
        flux[i] = integrate(G2 * wt, g)
    return e, flux


# report ---------------------------------------------------------------------

CSV_COLUMNS = (
    "t",
    "e_nat",
    "ghost_flux_acc",
    "e_gst",
    "e_con",
    "e_tilde",
    "sup_w_weighted",
    "sup_dw_weighted",
    "ks_ratio",
    "margin",
    "r_support",
)


@dataclass
class EnergyReport:
    """One diagnostic row.  Only ``CSV_COLUMNS`` go to ``energies.csv``."""

    t: float
    e_nat: float
    ghost_flux_acc: float
    e_gst: float
    e_con: float
    e_tilde: float
    sup_w_weighted: float
    sup_dw_weighted: float
    ks_ratio: float
    margin: float
    r_support: float
    sup_dw: float = float("nan")
    sup_dw_weighted32: float = float("nan")
    ghost_flux: float = 0.0
    cone_valid: bool = True
    egst_order1: np.ndarray | None = None  # E_gst of Gamma_i w, i = 0..10
    w_l2: float = 0.0
    f_l1: float = 0.0
    f_l2: float = 0.0
    identity: IdentitySample | None = None

    def csv_values(self) -> list:
        return [getattr(self, c) for c in CSV_COLUMNS]

    @property
    def egst_truncated(self) -> float:
        """``sum_{|I| <= 1} E_gst(Gamma^I w)^{1/2}``."""
        if self.egst_order1 is None:
            return float("nan")
        return math.sqrt(max(self.e_gst, 0.0)) + float(np.sum(np.sqrt(np.maximum(self.egst_order1, 0.0))))


def format_csv(rows, columns=CSV_COLUMNS) -> str:
    """CSV text with every float written as ``%.17g``."""
    lines = [",".join(columns)]
    for r in rows:
        lines.append(",".join(_fmt(getattr(r, c)) for c in columns))
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


class EnergyTracker:
    """Accumulates diagnostic rows along a run.

    Parameters
    ----------
    delta : float
        Ghost weight exponent.
    closure : Closure-like
        Used for second-order vector fields (KS ratio, truncated energies).
    support_threshold : float
        Absolute threshold for the support radius (fixed at t = 0).
    cone : {"auto", "require", "off"}
        What to do with coordinate-weighted quantities once the support
        reaches the margin: record NaN, raise, or never compute them.
    """

    def __init__(
        self,
        delta: float,
        closure="free",
        support_threshold: float = 0.0,
        support_margin: float | None = None,
        cone: str = "auto",
        ks: bool = True,
        truncated: bool = True,
        identities: bool = True,
    ):
        if cone not in ("auto", "require", "off"):
            raise ValueError("cone policy must be auto, require or off")
        self.delta = float(delta)
        self.closure = closure
        self.threshold = float(support_threshold)
        self.support_margin = support_margin
        self.cone = cone
        self.ks = ks
        self.truncated = truncated
        self.identities = identities
        self.weight = GhostWeight(self.delta) if identities else None
        self.rows: list[EnergyReport] = []
        self.flux_acc = 0.0
        self.flux_acc1 = np.zeros(11)
        self._last = None  # (t, flux, flux1)
        self._warned = False

    def _cone_ok(self, state, rs) -> bool:
        if self.cone == "off":
            return False
        lim = support_limit(state.grid, self.support_margin)
        if rs < lim:
            return True
        if self.cone == "require":
            raise SupportMarginError(rs, lim, f"cone-weighted diagnostics at t={state.t:.6g}")
        if not self._warned:
            log.warning("support radius %.4g reached limit %.4g at t=%.4g; weighted diagnostics disabled", rs, lim, state.t)
            self._warned = True
        return False

    def record(self, state: FieldState, margin: float = 1.0, forcing=None, jet: GridJet | None = None) -> EnergyReport:
        g = state.grid
        nan = float("nan")
        j = jet if jet is not None else grid_jet(state, "free")
        e_nat = natural_energy(state)
        flux = ghost_flux_density(state, self.delta, j)
        rs = support_radius(state, self.threshold)
        cone_ok = self._cone_ok(state, rs)

        vf = None
        flux1 = np.full(11, nan)
        e1 = np.full(11, nan)
        ksr = nan
        if cone_ok and (self.ks or self.truncated):
            cj = grid_jet(state, self.closure, threshold=-np.inf)
            vf = VectorFieldJets(state, jet=cj)
            if self.truncated:
                e1, flux1 = order1_energy_terms(state, vf, self.delta)
            if self.ks:
                ksr = ks_ratio(state, jets=vf, check=False)

        if self._last is not None:
            t0, f0, f10 = self._last
            dt = state.t - t0
            self.flux_acc += 0.5 * dt * (f0 + flux)
            self.flux_acc1 = self.flux_acc1 + 0.5 * dt * (f10 + flux1)
        self._last = (state.t, flux, flux1)

        if cone_ok:
            e_con, e_tilde = conformal_energy(state, j, check=False)
            sup = weighted_sup_tracker(state, j, check=False)
        else:
            e_con = e_tilde = nan
            dwmax = np.sqrt(j.d1[0] ** 2 + j.d1[1] ** 2 + j.d1[2] ** 2 + j.d1[3] ** 2)
            sup = SupRecord(state.t, float(np.max(dwmax)), nan, nan, nan)

        ident = None
        if self.identities and cone_ok:
            ident = identity_sample(state, self.weight, forcing, j)
        f = None if forcing is None else np.asarray(forcing, dtype=float)
        row = EnergyReport(
            t=state.t,
            e_nat=e_nat,
            ghost_flux_acc=self.flux_acc,
            e_gst=e_nat + self.flux_acc,
            e_con=e_con,
            e_tilde=e_tilde,
            sup_w_weighted=sup.sup_w_weighted,
            sup_dw_weighted=sup.sup_dw_weighted,
            ks_ratio=ksr,
            margin=float(margin),
            r_support=rs,
            sup_dw=sup.sup_dw,
            sup_dw_weighted32=sup.sup_dw_weighted32,
            ghost_flux=flux,
            cone_valid=cone_ok,
            egst_order1=e1 + self.flux_acc1 if self.truncated else None,
            w_l2=weighted_norm(state.w, g),
            f_l1=0.0 if f is None else weighted_norm(f, g, kind="L1"),
            f_l2=0.0 if f is None else weighted_norm(f, g),
            identity=ident,
        )
        self.rows.append(row)
        return row

    def series(self, name: str) -> tuple:
        t = np.array([r.t for r in self.rows])
        return t, np.array([getattr(r, name) for r in self.rows], dtype=float)


def report_field_names() -> list:
    return [f.name for f in dc_fields(EnergyReport)]


# L2 bound -------------------------------------------------------------------

@dataclass(frozen=True)
class L2BoundResult:
    t: np.ndarray
    ratio: np.ndarray
    max_ratio: float
    eta: float


def l2_bound_check(rows, w1_l1: float, w1_l2: float, eta: float = 2.0 / 3.0, w0_l2: float | None = None) -> L2BoundResult:
    """Ratio ``||w(t)|| / (||w0|| + ||w1||_{L1 cap L2} + int_0^t <s>^{-eta/2}||f||_1 + <s>^eta ||f||_2 ds)``.

    The time integral is the trapezoid rule over the diagnostic rows.  A zero
    denominator is floored at machine epsilon so that zero data give ratio 0.
    """
    rows = list(rows)
    t = np.array([r.t for r in rows], dtype=float)
    wl2 = np.array([r.w_l2 for r in rows], dtype=float)
    fl1 = np.array([r.f_l1 for r in rows], dtype=float)
    fl2 = np.array([r.f_l2 for r in rows], dtype=float)
    if w0_l2 is None:
        w0_l2 = float(wl2[0])
    integrand = bracket(t) ** (-eta / 2.0) * fl1 + bracket(t) ** eta * fl2
    acc = np.concatenate([[0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(t))])
    den = w0_l2 + w1_l1 + w1_l2 + acc
    den = np.maximum(den, np.finfo(float).eps)
    ratio = wl2 / den
    return L2BoundResult(t, ratio, float(np.max(ratio)) if len(ratio) else 0.0, float(eta))


# decay fits -----------------------------------------------------------------

@dataclass(frozen=True)
class DecayFit:
    window: tuple
    exponent: float
    intercept: float
    residual: float
    samples: int

    def as_text(self, verdict: str = "") -> str:
        lines = [
            f"window = {self.window[0]:.17g} {self.window[1]:.17g}",
            f"exponent = {self.exponent:.17g}",
            f"intercept = {self.intercept:.17g}",
            f"residual = {self.residual:.17g}",
            f"samples = {self.samples}",
        ]
        if verdict:
            lines.append(f"verdict = {verdict}")
        return "\n".join(lines) + "\n"


def decay_fit(t, values, window=(2.0, 8.0), min_samples: int = 8) -> DecayFit:
    """Least-squares slope of ``log(values)`` against ``log(t)`` inside ``window``."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(values, dtype=float)
    lo, hi = window
    sel = (t >= lo - 1e-12) & (t <= hi + 1e-12) & np.isfinite(y) & (y > 0) & (t > 0)
    k = int(np.count_nonzero(sel))
    if k < min_samples:
        raise DiagnosticError(f"decay fit needs at least {min_samples} samples in {window}, got {k}")
    X = np.log(t[sel])
    Y = np.log(y[sel])
    A = np.stack([X, np.ones_like(X)], axis=1)
    (p, c), *_ = np.linalg.lstsq(A, Y, rcond=None)
    res = float(np.sqrt(np.mean((A @ np.array([p, c]) - Y) ** 2)))
    return DecayFit((float(lo), float(hi)), float(p), float(c), res, k)


# scattering -----------------------------------------------------------------

@dataclass(frozen=True)
class ScatteringReport:
    times: tuple
    differences: tuple
    decreasing: bool


def scattering_convergence(checkpoints) -> ScatteringReport:
    """Energy-norm distances between pullbacks of consecutive checkpoints.

    ``checkpoints`` is a sequence of states or a mapping whose values are states.
    """
    if isinstance(checkpoints, dict):
        checkpoints = checkpoints.values()
    states = sorted(checkpoints, key=lambda s: s.t)
    if len(states) < 3:
        raise DiagnosticError("scattering check needs at least three checkpoints")
    pulled = [scattering_pullback(s) for s in states]
    d = tuple(energy_distance(a, b) for a, b in zip(pulled[:-1], pulled[1:]))
    dec = all(b < a for a, b in zip(d[:-1], d[1:]))
    return ScatteringReport(tuple(s.t for s in states), d, bool(dec))
