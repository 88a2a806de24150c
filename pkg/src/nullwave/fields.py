"""Periodic grids, spectral derivatives, jets and the commuting vector fields.

Fields are plain ``float64`` arrays of shape ``(n, n, n)`` indexed
``[i1, i2, i3]``, so ``x_1`` varies slowest in memory.  The on-disk
snapshot layout is x-fastest; :func:`write_snapshot` handles the reorder.

Spatial axes are numbered 1, 2, 3 and time is 0, matching the index
convention of the coefficient tensor.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from ._io import atomic_write_bytes
from .errors import HyperbolicityError, SupportMarginError
from .tensors import NullFormTensor, closure_dtt

THREADS_ENV = "NULLWAVE_THREADS"
SUPPORT_REL_THRESHOLD = 1e-8
HYPERBOLICITY_THRESHOLD = 0.5
SNAPSHOT_MAGIC = b"NWV1"
_HEADER = struct.Struct("<4sQdd")


def fft_workers() -> int:
    """Thread count for transforms: ``$NULLWAVE_THREADS`` or all cores."""
    val = os.environ.get(THREADS_ENV, "").strip()
    if val:
        try:
            n = int(val)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {val!r}") from None
        if n < 1:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {val!r}")
        return n
    return os.cpu_count() or 1


def grid_sum(a) -> float:
    """Deterministic sum: pairwise along the last axis, then ``math.fsum`` of the row sums.

    The result depends only on the array values and shape, never on the
    thread count.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 0:
        return float(a)
    return math.fsum(np.sum(a, axis=-1).ravel().tolist())


def bracket(x):
    """Japanese bracket ``(1 + x^2)^(1/2)``."""
    return np.sqrt(1.0 + np.square(x))


@dataclass(frozen=True)
class Grid3:
    """Cubic periodic box ``[-L, L)^3`` with ``n`` points per axis."""

    n: int
    L: float

    def __post_init__(self):
        n = int(self.n)
        if n != self.n or n < 8 or n & (n - 1):
            raise ValueError(f"grid size n must be a power of two >= 8, got {self.n!r}")
        L = float(self.L)
        if not (L > 0 and math.isfinite(L)):
            raise ValueError(f"half width L must be positive, got {self.L!r}")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "L", L)

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def shape(self) -> tuple:
        return (self.n, self.n, self.n)

    @property
    def cell_volume(self) -> float:
        return self.h**3

    @cached_property
    def x(self) -> np.ndarray:
        """1D coordinates ``-L + h*i``."""
        return -self.L + self.h * np.arange(self.n)

    @cached_property
    def coords(self) -> tuple:
        """Broadcastable coordinate arrays ``(x1, x2, x3)``."""
        x = self.x
        return (x[:, None, None], x[None, :, None], x[None, None, :])

    @cached_property
    def r(self) -> np.ndarray:
        x1, x2, x3 = self.coords
        return np.sqrt(x1 * x1 + x2 * x2 + x3 * x3)

    @cached_property
    def omega(self) -> tuple:
        """Unit radial direction ``x / max(r, h/2)``; zero at the origin."""
        rr = np.maximum(self.r, 0.5 * self.h)
        return tuple(c / rr for c in self.coords)

    @cached_property
    def spectral(self) -> "_Spectral":
        return _Spectral(self)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def mesh(self) -> tuple:
        """Full coordinate arrays, for building data."""
        return tuple(np.broadcast_to(c, self.shape) for c in self.coords)

    def origin_index(self) -> tuple:
        return (self.n // 2,) * 3


class _Spectral:
    """Wavenumbers for the real FFT layout ``(n, n, n//2 + 1)``."""

    def __init__(self, grid: Grid3):
        n, L = grid.n, grid.L
        self.n = n
        k = (np.pi / L) * np.fft.fftfreq(n, 1.0 / n)
        kr = (np.pi / L) * np.arange(n // 2 + 1)
        self.k = (k[:, None, None], k[None, :, None], kr[None, None, :])
        # first-derivative multipliers with the Nyquist mode zeroed
        kd = [k.copy(), k.copy(), kr.copy()]
        kd[0][n // 2] = 0.0
        kd[1][n // 2] = 0.0
        kd[2][n // 2] = 0.0
        self.kd = (kd[0][:, None, None], kd[1][None, :, None], kd[2][None, None, :])
        self.k2 = self.k[0] ** 2 + self.k[1] ** 2 + self.k[2] ** 2
        self.kabs = np.sqrt(self.k2)
        m = np.abs(np.fft.fftfreq(n, 1.0 / n))
        mr = np.arange(n // 2 + 1)
        keep = (m[:, None, None] < n / 3) & (m[None, :, None] < n / 3) & (mr[None, None, :] < n / 3)
        self.dealias = keep

    def fwd(self, f):
        return sfft.rfftn(f, workers=fft_workers())

    def inv(self, F):
        return sfft.irfftn(F, s=(self.n,) * 3, workers=fft_workers())

    def deriv_mult(self, a: int):
        return 1j * self.kd[a - 1]

    def second_mult(self, a: int, b: int):
        # pure second derivatives keep the Nyquist mode so that their trace is
        # the Laplacian used by the propagator
        if a == b:
            return -(self.k[a - 1] ** 2)
        return -(self.kd[a - 1] * self.kd[b - 1])


# spectral operators ---------------------------------------------------------

def spectral_derivative(f, grid: Grid3, axis: int) -> np.ndarray:
    """``d_a f`` for spatial axis ``a`` in {1, 2, 3}.

    Differentiates the trigonometric interpolant; the Nyquist mode is dropped.
    """
    if axis not in (1, 2, 3):
        raise ValueError("spatial axis must be 1, 2 or 3")
    sp = grid.spectral
    return sp.inv(sp.deriv_mult(axis) * sp.fwd(f))


def gradient(f, grid: Grid3) -> list:
    sp = grid.spectral
    F = sp.fwd(f)
    return [sp.inv(sp.deriv_mult(a) * F) for a in (1, 2, 3)]


def laplacian(f, grid: Grid3) -> np.ndarray:
    sp = grid.spectral
    return sp.inv(-sp.k2 * sp.fwd(f))


def hessian(f, grid: Grid3) -> list:
    """Symmetric nested list ``H[a][b]`` of spatial second derivatives (0-based)."""
    sp = grid.spectral
    F = sp.fwd(f)
    H = [[None] * 3 for _ in range(3)]
    for a in range(3):
        for b in range(a, 3):
            H[a][b] = H[b][a] = sp.inv(sp.second_mult(a + 1, b + 1) * F)
    return H


def dealias(f, grid: Grid3) -> np.ndarray:
    """Zero every mode with some ``|m_a| >= n/3``."""
    sp = grid.spectral
    return sp.inv(sp.dealias * sp.fwd(f))


# states and jets ------------------------------------------------------------

def _frozen(a, grid: Grid3, name: str) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if arr.shape != grid.shape:
        raise ValueError(f"{name} has shape {arr.shape}, grid needs {grid.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FieldState:
    """Solution ``w`` and its time derivative ``v`` at time ``t``.

    Arrays are copied and made read-only.  Negative ``t`` is accepted so
    that the free group can be run backwards.
    """

    grid: Grid3
    w: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "w", _frozen(self.w, self.grid, "w"))
        object.__setattr__(self, "v", _frozen(self.v, self.grid, "v"))
        t = float(self.t)
        if not math.isfinite(t):
            raise ValueError("time must be finite")
        object.__setattr__(self, "t", t)

    @classmethod
    def zeros(cls, grid: Grid3, t: float = 0.0) -> "FieldState":
        return cls(grid, grid.zeros(), grid.zeros(), t)

    def replace(self, w=None, v=None, t=None) -> "FieldState":
        return FieldState(
            self.grid,
            self.w if w is None else w,
            self.v if v is None else v,
            self.t if t is None else t,
        )

    def scale(self) -> float:
        return float(max(np.max(np.abs(self.w)), np.max(np.abs(self.v))))

    def shifted(self, shift) -> "FieldState":
        """Periodic shift by whole cells along each axis."""
        return self.replace(np.roll(self.w, shift, axis=(0, 1, 2)), np.roll(self.v, shift, axis=(0, 1, 2)))


@dataclass(frozen=True)
class Jet:
    """First and second derivatives of a field at one point.

    ``d1 = (w_t, w_1, w_2, w_3)``; ``d2`` is the symmetric 4x4 Hessian in
    space-time.  Ten independent entries are stored, in the order
    ``00, 01, 02, 03, 11, 12, 13, 22, 23, 33``.
    """

    d1: np.ndarray
    d2: np.ndarray

    def __post_init__(self):
        d1 = np.array(self.d1, dtype=float).reshape(4)
        d2 = np.array(self.d2, dtype=float)
        if d2.shape == (10,):
            d2 = unpack_symmetric(d2)
        d2 = d2.reshape(4, 4)
        d2 = 0.5 * (d2 + d2.T)
        d1.setflags(write=False)
        d2.setflags(write=False)
        object.__setattr__(self, "d1", d1)
        object.__setattr__(self, "d2", d2)

    @property
    def packed(self) -> np.ndarray:
        iu = np.triu_indices(4)
        return self.d2[iu]


def unpack_symmetric(vals) -> np.ndarray:
    m = np.zeros((4, 4))
    iu = np.triu_indices(4)
    m[iu] = vals
    return m + np.triu(m, 1).T


class Closure:
    """How ``d_t^2 w`` is obtained: the free wave equation or the full equation."""

    def __init__(self, tensor: NullFormTensor | None = None, q0: bool = True):
        self.tensor = tensor
        self.q0 = bool(q0) and tensor is not None

    @classmethod
    def coerce(cls, closure) -> "Closure":
        if isinstance(closure, Closure):
            return closure
        if closure is None or closure == "free":
            return cls(None)
        if isinstance(closure, NullFormTensor):
            return cls(closure, q0=True)
        raise ValueError(f"closure must be 'free', a tensor or a Closure, got {closure!r}")

    @property
    def is_free(self) -> bool:
        return self.tensor is None


@dataclass
class GridJet:
    """Gridwise jet: ``d1[g]`` arrays and symmetric nested ``d2[a][b]``."""

    d1: list
    d2: list
    margin: np.ndarray | float

    def at(self, idx) -> Jet:
        d1 = [float(self.d1[g][idx]) for g in range(4)]
        d2 = [[float(self.d2[a][b][idx]) for b in range(4)] for a in range(4)]
        return Jet(d1, d2)


def grid_jet(state: FieldState, closure="free", threshold: float = HYPERBOLICITY_THRESHOLD) -> GridJet:
    """Derivatives up to order two on the whole grid.

    ``d_t d_a w = d_a v``; ``d_t^2 w`` comes from the closure.

    Raises
    ------
    HyperbolicityError
        If ``1 - P^{g00} d_g w`` drops below ``threshold`` anywhere.
    """
    cl = Closure.coerce(closure)
    g = state.grid
    sp = g.spectral
    W = sp.fwd(state.w)
    V = sp.fwd(state.v)
    d1 = [state.v] + [sp.inv(sp.deriv_mult(a) * W) for a in (1, 2, 3)]
    d2 = [[None] * 4 for _ in range(4)]
    for a in (1, 2, 3):
        d2[0][a] = d2[a][0] = sp.inv(sp.deriv_mult(a) * V)
        for b in range(a, 4):
            d2[a][b] = d2[b][a] = sp.inv(sp.second_mult(a, b) * W)
    if cl.is_free:
        d2[0][0] = d2[1][1] + d2[2][2] + d2[3][3]
        margin = 1.0
    else:
        d2[0][0] = d2[1][1]  # placeholder, ignored by the closure
        dtt, margin = closure_dtt(cl.tensor, d1, d2, q0=cl.q0)
        margin = np.broadcast_to(margin, g.shape)
        check_margin(margin, threshold, state.t)
        d2[0][0] = np.broadcast_to(dtt, g.shape)
    return GridJet(d1, d2, margin)


def check_margin(margin, threshold: float = HYPERBOLICITY_THRESHOLD, t=None) -> float:
    m = np.asarray(margin)
    k = int(np.argmin(m))
    low = float(m.ravel()[k])
    if not low >= threshold:
        idx = np.unravel_index(k, m.shape) if m.ndim else ()
        raise HyperbolicityError(low, idx, threshold, t)
    return low


def jet_at(state: FieldState, index, closure="free", threshold: float = HYPERBOLICITY_THRESHOLD) -> Jet:
    """Jet of ``w`` at the grid point ``index = (i1, i2, i3)``."""
    cl = Closure.coerce(closure)
    idx = tuple(int(i) for i in index)
    gj = grid_jet(state, cl, threshold=-np.inf)
    if not cl.is_free:
        m = float(gj.margin[idx])
        if not m >= threshold:
            raise HyperbolicityError(m, idx, threshold, state.t)
    return gj.at(idx)


# support --------------------------------------------------------------------

def support_radius(state: FieldState, threshold: float | None = None) -> float:
    """Largest ``r`` where ``|w|`` or ``|v|`` reaches ``threshold``.

    The default threshold is ``1e-8`` times the state's own scale.
    Returns 0 for an identically small state.
    """
    if threshold is None:
        threshold = SUPPORT_REL_THRESHOLD * state.scale()
    big = (np.abs(state.w) >= threshold) | (np.abs(state.v) >= threshold)
    if threshold <= 0:
        big = big & ((state.w != 0) | (state.v != 0))
    if not np.any(big):
        return 0.0
    return float(np.max(state.grid.r[big]))


def support_limit(grid: Grid3, margin: float | None = None) -> float:
    return grid.L - (2.0 * grid.h if margin is None else margin)


def check_support(state: FieldState, threshold=None, margin=None, what: str = "") -> float:
    """Raise :class:`SupportMarginError` unless the support clears the margin."""
    rs = support_radius(state, threshold)
    lim = support_limit(state.grid, margin)
    if not rs < lim:
        raise SupportMarginError(rs, lim, what)
    return rs


# vector fields --------------------------------------------------------------

VECTOR_FIELDS = ("d0", "d1", "d2", "d3", "O12", "O13", "O23", "L1", "L2", "L3", "L0")


def second_order_pairs() -> list:
    """Index pairs ``(i, j)``, ``i <= j``, for ``Gamma_i Gamma_j``; 66 in total."""
    return [(i, j) for i in range(11) for j in range(i, 11)]


def _field_index(name) -> tuple:
    """Return ``(index, sign)``; reversed rotation labels carry sign -1."""
    if isinstance(name, (int, np.integer)):
        if not 0 <= name < 11:
            raise ValueError(f"vector field index out of range: {name}")
        return int(name), 1.0
    if name == "dt":
        name = "d0"
    if name in VECTOR_FIELDS:
        return VECTOR_FIELDS.index(name), 1.0
    if name.startswith("O") and len(name) == 3 and name[1] > name[2]:
        return VECTOR_FIELDS.index("O" + name[2] + name[1]), -1.0
    raise ValueError(f"unknown vector field {name!r}; known: {', '.join(VECTOR_FIELDS)}")


def field_coefficients(i: int, grid: Grid3, t: float):
    """Coefficients ``c^a`` of ``Gamma_i = c^a d_a`` and the constants ``dc[b][a] = d_b c^a``."""
    X = grid.coords
    c = [0.0, 0.0, 0.0, 0.0]
    dc = np.zeros((4, 4))
    name = VECTOR_FIELDS[i]
    if name[0] == "d":
        c[int(name[1])] = 1.0
    elif name[0] == "O":
        a, b = int(name[1]), int(name[2])
        c[b] = X[a - 1]
        c[a] = -X[b - 1]
        dc[a][b] = 1.0
        dc[b][a] = -1.0
    elif name == "L0":
        c[0] = t
        for a in (1, 2, 3):
            c[a] = X[a - 1]
        dc[:] = np.eye(4)
    else:
        a = int(name[1])
        c[a] = t
        c[0] = X[a - 1]
        dc[0][a] = 1.0
        dc[a][0] = 1.0
    return c, dc


def _lincomb(coefs, arrays, shape):
    out = None
    for c, arr in zip(coefs, arrays):
        if isinstance(c, float) and c == 0.0:
            continue
        term = c * arr
        out = term if out is None else out + term
    if out is None:
        return np.zeros(shape)
    return np.broadcast_to(out, shape)


class VectorFieldJets:
    """Evaluate ``Gamma^I w`` for ``|I| <= 2`` from a grid jet.

    Uses ``Gamma u = c^a d_a u``, ``d_b(Gamma u) = dc[b][a] d_a u + c^a d_a d_b u``
    and ``Gamma_i Gamma_j u = c_i^b d_b(Gamma_j u)``; no third derivatives
    are needed.
    """

    def __init__(self, state: FieldState, closure="free", jet: GridJet | None = None):
        self.state = state
        self.grid = state.grid
        self.jet = jet if jet is not None else grid_jet(state, closure)
        self._coef = [field_coefficients(i, self.grid, state.t) for i in range(11)]
        self._first = {}
        self._dfirst = {}

    def coefficients(self, i):
        return self._coef[i]

    def first(self, i: int) -> np.ndarray:
        if i not in self._first:
            c, _ = self._coef[i]
            self._first[i] = _lincomb(c, self.jet.d1, self.grid.shape)
        return self._first[i]

    def dfirst(self, j: int) -> list:
        """``[d_b (Gamma_j w) for b in 0..3]``."""
        if j not in self._dfirst:
            c, dc = self._coef[j]
            out = []
            for b in range(4):
                coefs = [float(dc[b][a]) for a in range(4)] + list(c)
                arrays = list(self.jet.d1) + [self.jet.d2[a][b] for a in range(4)]
                out.append(_lincomb(coefs, arrays, self.grid.shape))
            self._dfirst[j] = out
        return self._dfirst[j]

    def second(self, i: int, j: int) -> np.ndarray:
        """``Gamma_i (Gamma_j w)``."""
        c, _ = self._coef[i]
        return _lincomb(list(c), self.dfirst(j), self.grid.shape)

    def apply(self, which) -> np.ndarray:
        if isinstance(which, (str, int, np.integer)):
            which = (which,)
        which = tuple(which)
        if len(which) == 0:
            return np.asarray(self.state.w)
        if len(which) > 2:
            raise ValueError("vector field products are capped at order 2")
        idx = [_field_index(x) for x in which]
        if len(idx) == 1:
            (i, s), = idx
            return s * self.first(i)
        (i, si), (j, sj) = idx
        return (si * sj) * self.second(i, j)


def _needs_weights(which) -> bool:
    if isinstance(which, (str, int, np.integer)):
        which = (which,)
    return any(_field_index(x)[0] >= 4 for x in which)


def apply_gamma(
    state: FieldState,
    which,
    closure="free",
    support_threshold: float | None = None,
    margin: float | None = None,
) -> np.ndarray:
    """Apply one or two commuting vector fields to ``w``.

    Parameters
    ----------
    which : str or sequence of str
        Field labels from ``VECTOR_FIELDS`` (``"O21"`` style labels give the
        negated rotation).  A pair ``(A, B)`` means ``A(B w)``.
    closure : "free", NullFormTensor or Closure
        Source of ``d_t^2 w`` for second order products.

    Raises
    ------
    SupportMarginError
        For rotations, boosts or scaling when the support nears the boundary.
    """
    if _needs_weights(which):
        check_support(state, support_threshold, margin, "coordinate weighted vector field")
    return VectorFieldJets(state, closure).apply(which)


def good_derivative(state: FieldState, a: int) -> np.ndarray:
    """``G_a w = omega_a w_t + d_a w``."""
    if a not in (1, 2, 3):
        raise ValueError("good derivative index must be 1, 2 or 3")
    g = state.grid
    return g.omega[a - 1] * state.v + spectral_derivative(state.w, g, a)


# weighted norms -------------------------------------------------------------

@dataclass(frozen=True)
class BracketWeight:
    """Multiplier ``<t+r>^p <t-r>^q``."""

    p: float = 0.0
    q: float = 0.0

    def array(self, grid: Grid3, t: float):
        r = grid.r
        out = np.ones(grid.shape)
        if self.p:
            out = out * bracket(t + r) ** self.p
        if self.q:
            out = out * bracket(t - r) ** self.q
        return out


@dataclass(frozen=True)
class GhostFluxWeight:
    """Multiplier ``<r-t>^{-(1+2 delta)/2}`` so that squared L2 norms carry
    the flux weight ``<r-t>^{-1-2 delta}``."""

    delta: float

    def array(self, grid: Grid3, t: float):
        return bracket(grid.r - t) ** (-(0.5 + self.delta))


def _weight_array(weight, grid, t):
    if weight is None or weight == "none":
        return None
    if isinstance(weight, tuple):
        kind, *args = weight
        if kind == "bracket":
            weight = BracketWeight(*args)
        elif kind == "ghost":
            weight = GhostFluxWeight(*args)
        else:
            raise ValueError(f"unknown weight {kind!r}")
    if not hasattr(weight, "array"):
        raise ValueError(f"unknown weight {weight!r}")
    if t is None:
        raise ValueError("weighted norms need the time t")
    return weight.array(grid, t)


def weighted_norm(f, grid: Grid3, weight=None, kind: str = "L2", t: float | None = None) -> float:
    """Discrete norm ``|| W f ||`` with cell volume ``h^3``.

    Parameters
    ----------
    f : ndarray
    weight : None, BracketWeight, GhostFluxWeight, or a tuple
        ``("bracket", p, q)`` or ``("ghost", delta)``.  The weight multiplies
        the field before the norm is taken.
    kind : {"L1", "L2", "Linf"}
    t : float
        Time entering bracket and ghost weights.
    """
    f = np.asarray(f, dtype=float)
    W = _weight_array(weight, grid, t)
    g = np.abs(f) if W is None else np.abs(f * W)
    if kind == "Linf":
        return float(np.max(g))
    if kind == "L1":
        return grid_sum(g) * grid.cell_volume
    if kind == "L2":
        return math.sqrt(grid_sum(g * g) * grid.cell_volume)
    raise ValueError(f"norm kind must be L1, L2 or Linf, got {kind!r}")


def integrate(f, grid: Grid3) -> float:
    """Riemann sum ``h^3 sum f`` with the deterministic grid sum."""
    return grid_sum(f) * grid.cell_volume


# snapshots ------------------------------------------------------------------

def snapshot_bytes(state: FieldState) -> bytes:
    g = state.grid
    head = _HEADER.pack(SNAPSHOT_MAGIC, g.n, g.L, state.t)
    w = np.asarray(state.w, dtype="<f8").ravel(order="F").tobytes()
    v = np.asarray(state.v, dtype="<f8").ravel(order="F").tobytes()
    return head + w + v


def write_snapshot(path, state: FieldState) -> Path:
    """Write the ``NWV1`` binary snapshot atomically."""
    return atomic_write_bytes(path, snapshot_bytes(state))


def parse_snapshot(data: bytes) -> FieldState:
    if len(data) < _HEADER.size:
        raise ValueError("snapshot truncated")
    magic, n, L, t = _HEADER.unpack_from(data)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"bad snapshot magic {magic!r}")
    grid = Grid3(int(n), L)
    count = grid.n**3
    if len(data) != _HEADER.size + 16 * count:
        raise ValueError("snapshot size does not match its header")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    w = body[:count].reshape(grid.shape, order="F")
    v = body[count:].reshape(grid.shape, order="F")
    return FieldState(grid, w, v, t)


def read_snapshot(path) -> FieldState:
    return parse_snapshot(Path(path).read_bytes())
