"""Time integration of the quasilinear equation as a first-order system.

With ``v = w_t`` the equation becomes::

    w_t = v
    (1 - P^{g00} d_g w) v_t = Lap w + sum_{(a,b) != (0,0)} P^{gab} d_g w d_a d_b w + Q0(w, w)

The right-hand side is split as ``Lap w + correction`` where::

    correction = (N + c00 Lap w + S) / (1 - c00),   c00 = P^{g00} d_g w

so the linear part is spectrally exact and only the correction is
dealiased.  ``S`` is an optional external source, used for manufactured
solutions.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .diagnostics import EnergyTracker, EnergyReport, format_csv
from .errors import ConfigError, NaNError
from .fields import (
    HYPERBOLICITY_THRESHOLD,
    SUPPORT_REL_THRESHOLD,
    Closure,
    FieldState,
    Grid3,
    GridJet,
    check_margin,
    support_limit,
    support_radius,
)
from .propagator import free_evolve
from .tensors import DEFAULT_MC_VECTOR, NullFormTensor, resolve_tensor

log = logging.getLogger(__name__)

DELTA_MAX = 1.0 / 12.0


@dataclass(frozen=True)
class RunConfig:
    """Everything that defines a run except the initial data.

    Attributes
    ----------
    n, L : grid size and half width
    tensor : preset name, file path or NullFormTensor
    mc_c : vector ``c`` for the ``mc-family`` preset
    delta : ghost weight exponent, ``0 < delta < 1/12``
    cfl : ``dt = t_end / ceil(t_end / (cfl h))``
    t_end : final time
    dealias : filter the nonlinear correction with the 2/3 rule
    q0 : include the semilinear term ``d^a w d_a w``
    method : ``"rk4"`` or ``"exact"`` (free propagator, linear runs only)
    snapshot_every, diagnostics_every : cadences in steps (0 disables snapshots)
    checkpoints : times at which to keep the full state (nearest step)
    support_rel : support threshold relative to the initial field scale
    support_margin : distance kept from the box face, default ``2h``
    cone : policy for coordinate-weighted diagnostics (auto, require, off)
    ks, truncated, identities : optional diagnostic families
    seed : RNG seed for random data families
    """

    n: int = 64
    L: float = 16.0
    tensor: object = "mc-family"
    mc_c: tuple = DEFAULT_MC_VECTOR
    delta: float = 1.0 / 24.0
    cfl: float = 0.5
    t_end: float = 8.0
    dealias: bool = True
    q0: bool = True
    method: str = "rk4"
    snapshot_every: int = 0
    diagnostics_every: int = 10
    checkpoints: tuple = ()
    support_rel: float = SUPPORT_REL_THRESHOLD
    support_margin: float | None = None
    cone: str = "auto"
    ks: bool = True
    truncated: bool = True
    identities: bool = True
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        try:
            Grid3(self.n, self.L)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not (0.0 < self.delta < DELTA_MAX):
            raise ConfigError(f"delta={self.delta!r} outside the admissible range (0, 1/12)")
        if not (0.0 < self.cfl <= 1.0):
            raise ConfigError(f"cfl={self.cfl!r} must lie in (0, 1]")
        if not (self.t_end >= 0.0 and math.isfinite(self.t_end)):
            raise ConfigError(f"t_end={self.t_end!r} must be finite and >= 0")
        if self.method not in ("rk4", "exact"):
            raise ConfigError(f"method must be rk4 or exact, got {self.method!r}")
        if self.cone not in ("auto", "require", "off"):
            raise ConfigError(f"cone policy must be auto, require or off, got {self.cone!r}")
        if self.diagnostics_every < 1 or self.snapshot_every < 0:
            raise ConfigError("diagnostics_every must be >= 1 and snapshot_every >= 0")
        if not self.support_rel > 0:
            raise ConfigError("support_rel must be positive")
        try:
            P = self.resolved_tensor()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.method == "exact" and (not P.is_zero or self.q0):
            raise ConfigError("method=exact needs the zero tensor and q0 disabled")

    @property
    def grid(self) -> Grid3:
        return Grid3(self.n, self.L)

    def resolved_tensor(self) -> NullFormTensor:
        return resolve_tensor(self.tensor, self.mc_c)

    def steps(self) -> tuple:
        """``(nsteps, dt)`` with ``dt <= cfl h`` dividing ``t_end`` exactly."""
        if self.t_end == 0:
            return 0, 0.0
        h = self.grid.h
        nsteps = max(1, math.ceil(self.t_end / (self.cfl * h) - 1e-12))
        return nsteps, self.t_end / nsteps

    def with_(self, **kw) -> "RunConfig":
        return replace(self, **kw)


# right-hand side -------------------------------------------------------------

@dataclass
class RHSResult:
    dw: np.ndarray
    dv: np.ndarray
    margin: float
    forcing: np.ndarray | None  # dv - Lap w, the effective nonlinearity
    jet: GridJet | None = None


def compute_rhs(
    state: FieldState,
    P: NullFormTensor,
    dealias: bool = True,
    q0: bool = True,
    source=None,
    threshold: float = HYPERBOLICITY_THRESHOLD,
    want_jet: bool = False,
) -> RHSResult:
    """Time derivatives ``(w_t, v_t)`` of the first-order system.

    Parameters
    ----------
    P : NullFormTensor
    dealias : bool
        Apply the 2/3 rule to the nonlinear correction.
    q0 : bool
        Include the semilinear null form.
    source : ndarray, optional
        External source added to the right-hand side before the division.
    want_jet : bool
        Also return the first and spatial second derivatives as a GridJet
        with ``d2[0][0]`` set to the computed ``v_t``.

    Raises
    ------
    HyperbolicityError
        If ``1 - P^{g00} d_g w < threshold`` somewhere.
    """
    g = state.grid
    sp = g.spectral
    W = sp.fwd(state.w)
    k2W = sp.k2 * W
    lap = sp.inv(-k2W)
    linear_only = P.is_zero and not q0 and source is None
    if linear_only and not want_jet:
        return RHSResult(state.v, lap, 1.0, None)

    c = P.coeffs
    V = sp.fwd(state.v)
    d1 = [state.v] + [sp.inv(sp.deriv_mult(a) * W) for a in (1, 2, 3)]
    d2 = [[None] * 4 for _ in range(4)]
    need = np.zeros((4, 4), dtype=bool)
    for a in range(4):
        for b in range(4):
            need[a, b] = bool(np.any(c[:, a, b] != 0.0)) or want_jet
    for a in (1, 2, 3):
        if need[0, a] or need[a, 0]:
            d2[0][a] = d2[a][0] = sp.inv(sp.deriv_mult(a) * V)
        for b in range(a, 4):
            if a == b:
                continue
            if need[a, b] or need[b, a]:
                d2[a][b] = d2[b][a] = sp.inv(sp.second_mult(a, b) * W)
        if need[a, a]:
            d2[a][a] = sp.inv(sp.second_mult(a, a) * W)

    N = 0.0
    for gi in range(4):
        for a in range(4):
            for b in range(4):
                if (a, b) == (0, 0) or c[gi, a, b] == 0.0:
                    continue
                N = N + c[gi, a, b] * d1[gi] * d2[a][b]
    if q0:
        N = N - d1[0] * d1[0] + d1[1] * d1[1] + d1[2] * d1[2] + d1[3] * d1[3]
    c00 = c[0, 0, 0] * d1[0] + c[1, 0, 0] * d1[1] + c[2, 0, 0] * d1[2] + c[3, 0, 0] * d1[3]
    denom = 1.0 - c00
    if not np.all(np.isfinite(denom)):
        raise NaNError(f"non-finite first derivatives at t={state.t:.6g}")
    margin = check_margin(np.broadcast_to(denom, g.shape), threshold, state.t)
    num = N + c00 * lap
    if source is not None:
        num = num + np.asarray(source, dtype=float)
    corr = np.broadcast_to(num / denom, g.shape)
    if dealias and not (np.isscalar(num) and num == 0.0):
        corr = sp.inv(sp.dealias * sp.fwd(corr))
    dv = lap + corr
    jet = None
    if want_jet:
        d2[0][0] = dv
        jet = GridJet(d1, d2, np.broadcast_to(denom, g.shape))
    return RHSResult(state.v, dv, margin, np.asarray(corr), jet)


def step_rk4(
    state: FieldState,
    P: NullFormTensor,
    dt: float,
    dealias: bool = True,
    q0: bool = True,
    source: Callable | None = None,
    k1: RHSResult | None = None,
) -> tuple:
    """One classical RK4 step.

    Parameters
    ----------
    source : callable ``S(t) -> ndarray``, optional
    k1 : RHSResult, optional
        Right-hand side already evaluated at ``state`` (reused, not recomputed).

    Returns
    -------
    new_state, min_margin

    Raises
    ------
    NaNError
        If the update contains non-finite values.
    """
    t = state.t
    g = state.grid

    def rhs(s: FieldState):
        src = None if source is None else source(s.t)
        return compute_rhs(s, P, dealias=dealias, q0=q0, source=src)

    def shifted(base: FieldState, k: RHSResult, a: float):
        return _raw_state(g, base.w + a * k.dw, base.v + a * k.dv, t + a)

    r1 = k1 if k1 is not None else rhs(state)
    r2 = rhs(shifted(state, r1, 0.5 * dt))
    r3 = rhs(shifted(state, r2, 0.5 * dt))
    r4 = rhs(shifted(state, r3, dt))
    w = state.w + (dt / 6.0) * (r1.dw + 2.0 * r2.dw + 2.0 * r3.dw + r4.dw)
    v = state.v + (dt / 6.0) * (r1.dv + 2.0 * r2.dv + 2.0 * r3.dv + r4.dv)
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(v))):
        raise NaNError(f"non-finite values after RK4 step to t={t + dt:.6g}")
    margin = min(r1.margin, r2.margin, r3.margin, r4.margin)
    return FieldState(g, w, v, t + dt), margin


def _raw_state(grid, w, v, t):
    """Intermediate stage state; skips the finiteness scan of the public constructor."""
    s = object.__new__(FieldState)
    object.__setattr__(s, "grid", grid)
    object.__setattr__(s, "w", w)
    object.__setattr__(s, "v", v)
    object.__setattr__(s, "t", float(t))
    return s


# driver ---------------------------------------------------------------------

@dataclass
class RunArtifacts:
    config: RunConfig
    rows: list
    final_state: FieldState
    snapshots: list = field(default_factory=list)  # (step, state)
    checkpoints: dict = field(default_factory=dict)  # nominal time -> state
    margin_min: float = 1.0
    steps: int = 0
    dt: float = 0.0
    initial_state: FieldState | None = None
    warnings: list = field(default_factory=list)

    def series(self, name: str) -> tuple:
        t = np.array([r.t for r in self.rows])
        return t, np.array([getattr(r, name) for r in self.rows], dtype=float)

    def row_at(self, t: float) -> EnergyReport:
        k = int(np.argmin([abs(r.t - t) for r in self.rows]))
        return self.rows[k]

    def csv_text(self) -> str:
        return format_csv(self.rows)


def run(
    config: RunConfig,
    data: FieldState,
    source: Callable | None = None,
    on_snapshot: Callable | None = None,
    progress: Callable | None = None,
) -> RunArtifacts:
    """Integrate from ``data`` to ``config.t_end`` with diagnostics.

    Raises
    ------
    HyperbolicityError, NaNError, SupportMarginError
    """
    grid = config.grid
    if data.grid != grid:
        raise ConfigError(f"data grid {data.grid} differs from configured grid {grid}")
    P = config.resolved_tensor()
    nsteps, dt = config.steps()
    scale0 = data.scale()
    threshold = config.support_rel * scale0
    warns = []
    rs0 = support_radius(data, threshold)
    lim = support_limit(grid, config.support_margin)
    if config.t_end > lim - rs0 and scale0 > 0:
        msg = f"t_end={config.t_end:g} exceeds wraparound horizon {lim - rs0:.4g} (support {rs0:.4g})"
        log.warning(msg)
        warns.append(msg)

    closure = Closure(None) if (P.is_zero and not config.q0) else Closure(P, q0=config.q0)
    tracker = EnergyTracker(
        config.delta,
        closure=closure,
        support_threshold=threshold,
        support_margin=config.support_margin,
        cone=config.cone,
        ks=config.ks,
        truncated=config.truncated,
        identities=config.identities,
    )
    ck_steps = {}
    for tc in config.checkpoints:
        k = int(round(tc / dt)) if dt > 0 else 0
        ck_steps.setdefault(min(max(k, 0), nsteps), []).append(float(tc))

    state = data
    margin_min = math.inf
    snaps = []
    checkpoints = {}

    def diag(step, s):
        nonlocal margin_min
        src = None if source is None else source(s.t)
        r = compute_rhs(s, P, config.dealias, config.q0, src, threshold=HYPERBOLICITY_THRESHOLD, want_jet=True)
        margin_min = min(margin_min, r.margin)
        forcing = None if closure.is_free and source is None else r.forcing
        tracker.record(s, margin=r.margin, forcing=forcing, jet=r.jet)
        if progress is not None:
            progress(step, nsteps, s.t)
        return r

    def keep(step, s):
        if config.snapshot_every and step % config.snapshot_every == 0:
            snaps.append((step, s))
            if on_snapshot is not None:
                on_snapshot(step, s)
        for tc in ck_steps.get(step, ()):
            checkpoints[tc] = s

    k1 = diag(0, state)
    keep(0, state)
    for step in range(1, nsteps + 1):
        if config.method == "exact":
            state = free_evolve(state, dt)
            m = 1.0
        else:
            state, m = step_rk4(state, P, dt, config.dealias, config.q0, source, k1=k1)
        k1 = None
        margin_min = min(margin_min, m)
        if step % config.diagnostics_every == 0 or step == nsteps:
            # the diagnostic right-hand side doubles as the next first stage
            k1 = diag(step, state)
        keep(step, state)

    return RunArtifacts(
        config=config,
        rows=tracker.rows,
        final_state=state,
        snapshots=snaps,
        checkpoints=checkpoints,
        margin_min=float(margin_min if math.isfinite(margin_min) else 1.0),
        steps=nsteps,
        dt=dt,
        initial_state=data,
        warnings=warns,
    )
