"""Initial data: profiles, the rescaled large-data family, and weighted norms."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SupportMarginError
from .fields import (
    SUPPORT_REL_THRESHOLD,
    FieldState,
    Grid3,
    bracket,
    check_support,
    gradient,
    weighted_norm,
)

KINDS = ("zero", "gaussian", "bump", "shell")


@dataclass(frozen=True)
class DataProfile:
    """A scalar profile on R^3.

    Kinds
    -----
    ``gaussian``: ``A exp(-|x - c|^2 / width^2)``.
    ``bump``: ``A exp(1 - 1/(1 - s^2))`` for ``s = |x - c| / radius < 1``, else 0.
    ``shell``: outgoing radial pulse; see :func:`shell_state`.
    ``zero``: identically zero.
    """

    kind: str = "gaussian"
    width: float = 1.0
    amplitude: float = 1.0
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 4.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown profile kind {self.kind!r}; known: {', '.join(KINDS)}")
        c = tuple(float(x) for x in np.asarray(self.center, dtype=float).ravel())
        if len(c) != 3:
            raise ValueError("center needs three coordinates")
        object.__setattr__(self, "center", c)
        if self.kind in ("gaussian", "shell") and not self.width > 0:
            raise ValueError("width must be positive")
        if self.kind == "bump" and not self.radius > 0:
            raise ValueError("radius must be positive")

    def evaluate(self, x1, x2, x3) -> np.ndarray:
        """Evaluate on arbitrary (broadcastable) coordinates."""
        c = self.center
        s2 = (x1 - c[0]) ** 2 + (x2 - c[1]) ** 2 + (x3 - c[2]) ** 2
        if self.kind == "zero":
            return np.zeros(np.broadcast(x1, x2, x3).shape)
        if self.kind == "gaussian":
            return self.amplitude * np.exp(-s2 / self.width**2)
        if self.kind == "bump":
            q = s2 / self.radius**2
            inside = q < 1.0
            out = np.zeros(np.broadcast(x1, x2, x3).shape)
            qi = np.broadcast_to(q, out.shape)[inside]
            out[inside] = self.amplitude * np.exp(1.0 - 1.0 / (1.0 - qi))
            return out
        raise ValueError("shell profiles define a state, not a single field; use shell_state")


def realize(profile: DataProfile, grid: Grid3, scale: float = 1.0, check: bool = True) -> np.ndarray:
    """Sample ``profile(scale * x)`` on the grid.

    Raises
    ------
    SupportMarginError
        If the sampled field is not small (``1e-8`` relative) outside
        ``r < L - 4h``.
    """
    x1, x2, x3 = grid.coords
    f = np.broadcast_to(profile.evaluate(scale * x1, scale * x2, scale * x3), grid.shape).copy()
    if check:
        _check_profile_support(f, grid)
    return f


def _check_profile_support(f, grid: Grid3):
    s = FieldState(grid, f, np.zeros(grid.shape))
    check_support(s, SUPPORT_REL_THRESHOLD * s.scale(), 4.0 * grid.h, "initial profile")


def profile_state(w0: DataProfile, w1: DataProfile | None, grid: Grid3) -> FieldState:
    """State with ``w = w0`` and ``v = w1`` (zero when ``w1`` is None)."""
    if w0.kind == "shell":
        return shell_state(grid, w0.width, w0.radius, w0.amplitude)
    w = realize(w0, grid)
    v = np.zeros(grid.shape) if w1 is None else realize(w1, grid)
    return FieldState(grid, w, v, 0.0)


def shell_solution(grid: Grid3, t: float, width: float, r0: float, amplitude: float = 1.0) -> FieldState:
    """Exact radial free wave ``w = (psi(r - t) - psi(-r - t)) / r``.

    ``psi(s) = A exp(-(s - r0)^2 / width^2)``.  For ``r0`` several widths
    from the origin this is an outgoing shell that never revisits ``r = 0``.
    The value at the origin uses the limit ``-2 psi'(-t)``.
    """
    r = grid.r

    def psi(s):
        return amplitude * np.exp(-((s - r0) ** 2) / width**2)

    def dpsi(s):
        return -2.0 * (s - r0) / width**2 * psi(s)

    def d2psi(s):
        return (4.0 * (s - r0) ** 2 / width**4 - 2.0 / width**2) * psi(s)

    small = r < 1e-8
    rs = np.where(small, 1.0, r)
    w = np.where(small, 2.0 * dpsi(-t), (psi(r - t) - psi(-r - t)) / rs)
    # v = d/dt w = (-psi'(r - t) + psi'(-r - t)) / r
    v = np.where(small, -2.0 * d2psi(-t), (-dpsi(r - t) + dpsi(-r - t)) / rs)
    return FieldState(grid, w, v, t)


def shell_state(grid: Grid3, width: float, r0: float, amplitude: float = 1.0, check: bool = True) -> FieldState:
    s = shell_solution(grid, 0.0, width, r0, amplitude)
    if check:
        check_support(s, SUPPORT_REL_THRESHOLD * s.scale(), 4.0 * grid.h, "initial profile")
    return s


def make_large_data(F: DataProfile, G: DataProfile, eps: float, grid: Grid3) -> FieldState:
    """Rescaled large-data family at ``t = 0``.

    With ``f_eps(x) = eps^{3/2} f(eps x)``::

        w1 = (g_eps + eps g) / ||g_eps + eps g||
        w0 = (F_eps + eps F) / ||grad(F_eps + eps F)||

    so that ``||w1|| = 1`` and ``||grad w0|| = 1``.  The potential ``w0`` is
    prescribed directly rather than reconstructed from a gradient profile.

    Raises
    ------
    ValueError
        If ``eps`` is outside ``(0, 1]`` or a rescaled width exceeds ``L/4``.
    SupportMarginError
        If a rescaled profile is not contained in ``r < L - 4h``.
    """
    eps = float(eps)
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    for prof in (F, G):
        size = prof.width if prof.kind == "gaussian" else prof.radius
        if prof.kind != "zero" and size / eps > grid.L / 4.0:
            raise ValueError(
                f"rescaled width {size / eps:.4g} exceeds L/4 = {grid.L / 4:.4g}; not resolvable on this box"
            )
    Fs = eps**1.5 * realize(F, grid, scale=eps) + eps * realize(F, grid)
    Gs = eps**1.5 * realize(G, grid, scale=eps) + eps * realize(G, grid)
    nG = weighted_norm(Gs, grid)
    gF = gradient(Fs, grid)
    nF = math.sqrt(sum(weighted_norm(d, grid) ** 2 for d in gF))
    w0 = Fs / nF if nF > 0 else Fs
    w1 = Gs / nG if nG > 0 else Gs
    return FieldState(grid, w0, w1, 0.0)


# weighted norms of the data ---------------------------------------------------

def multi_indices(order: int) -> list:
    """Spatial multi-indices of the given order as sorted axis tuples."""
    return list(itertools.combinations_with_replacement((1, 2, 3), order))


class _Derivs:
    """Cached iterated spectral derivatives of one field."""

    def __init__(self, f, grid: Grid3):
        self.grid = grid
        self.F = grid.spectral.fwd(f)
        self.cache = {}

    def get(self, idx: tuple) -> np.ndarray:
        idx = tuple(sorted(idx))
        if idx not in self.cache:
            sp = self.grid.spectral
            mult = 1.0
            for a in idx:
                mult = mult * sp.deriv_mult(a)
            self.cache[idx] = sp.inv(mult * self.F)
        return self.cache[idx]


@dataclass(frozen=True)
class InitialNorms:
    """Weighted norms of ``(w0, w1)`` up to derivative order ``N_ord``.

    ``K_value``: sum over ``|I| <= N`` of ``||<x>^|I| grad D^I w0|| + ||<x>^|I| D^I w1||``.
    ``eps_value``: sum over ``|I| <= max(N-1, 0)`` of
    ``||<x>^|I| grad grad D^I w0|| + ||<x>^|I| grad D^I w1||``.
    ``conf_norms``: the four sums of the conformal data condition.
    """

    K_value: float
    eps_value: float
    conf_norms: dict = field(default_factory=dict)
    N_ord: int = 2
    eps_over_K: float = 0.0

    def as_text(self) -> str:
        lines = [
            f"N_ord = {self.N_ord}",
            f"K_value = {self.K_value:.17g}",
            f"eps_value = {self.eps_value:.17g}",
            f"eps_over_K = {self.eps_over_K:.17g}",
        ]
        for k, v in self.conf_norms.items():
            lines.append(f"conf.{k} = {v:.17g}")
        return "\n".join(lines) + "\n"


def weighted_initial_norms(state: FieldState, N_ord: int = 2, check: bool = True) -> InitialNorms:
    """Evaluate the weighted data norms with iterated spectral derivatives."""
    if not 0 <= N_ord <= 2:
        raise ValueError("N_ord is capped at 2")
    g = state.grid
    if check:
        check_support(state, what="weighted initial norms")
    x = bracket(g.r)
    D0 = _Derivs(state.w, g)
    D1 = _Derivs(state.v, g)

    def wn(f, p, kind="L2"):
        return weighted_norm(f if p == 0 else f * x**p, g, kind=kind)

    def grad_norm(D, idx, p, kind="L2"):
        # norm of the vector (d_1 D^I f, d_2 D^I f, d_3 D^I f)
        arrs = [D.get(idx + (a,)) for a in (1, 2, 3)]
        if kind == "L2":
            return math.sqrt(sum(wn(a, p) ** 2 for a in arrs))
        mag = np.sqrt(sum(np.square(a) for a in arrs))
        return wn(mag, p, "L1")

    def hess_norm(D, idx, p):
        arrs = [D.get(idx + (a, b)) for a in (1, 2, 3) for b in (1, 2, 3)]
        return math.sqrt(sum(wn(a, p) ** 2 for a in arrs))

    K = 0.0
    for k in range(N_ord + 1):
        for I in multi_indices(k):
            K += grad_norm(D0, I, k) + wn(D1.get(I), k)
    eps = 0.0
    for k in range(max(N_ord - 1, 0) + 1):
        for I in multi_indices(k):
            eps += hess_norm(D0, I, k) + grad_norm(D1, I, k)
    conf = {"w0_L2": 0.0, "w1_L2_weighted": 0.0, "grad_w0_L1": 0.0, "w1_L1": 0.0}
    for k in range(N_ord + 1):
        for I in multi_indices(k):
            conf["w0_L2"] += wn(D0.get(I), k)
    for k in range(max(N_ord - 1, 0) + 1):
        for I in multi_indices(k):
            conf["w1_L2_weighted"] += wn(D1.get(I), k + 1)
            conf["w1_L1"] += wn(D1.get(I), k, "L1")
            if k >= 1:
                conf["grad_w0_L1"] += grad_norm(D0, I, k, "L1")
    return InitialNorms(K, eps, conf, N_ord, eps / K if K > 0 else 0.0)


# random interior states -------------------------------------------------------

def random_interior_state(grid: Grid3, seed: int, bumps: int = 4, width: float = 1.6, reach: float = 3.0, t: float = 0.0) -> FieldState:
    """Sum of a few random Gaussians well inside the box, for identity checks.

    Widths are at least ``3h`` so the fields are resolved to round-off.
    """
    rng = np.random.default_rng(seed)
    width = max(width, 3.0 * grid.h)
    x1, x2, x3 = grid.coords
    w = np.zeros(grid.shape)
    v = np.zeros(grid.shape)
    for _ in range(bumps):
        c = rng.uniform(-reach, reach, 3)
        s = width * rng.uniform(1.0, 1.3)
        env = np.exp(-((x1 - c[0]) ** 2 + (x2 - c[1]) ** 2 + (x3 - c[2]) ** 2) / s**2)
        w += rng.normal() * env
        v += rng.normal() * env
    return FieldState(grid, w, v, t)
