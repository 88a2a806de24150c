"""Quasilinear coefficient tensors and null forms.

The tensor ``P[g, a, b]`` multiplies ``d_g w * d_a d_b w`` in the equation

    -box w = P^{gab} d_g w d_a d_b w + d^a w d_a w,

with the Minkowski metric ``m = diag(-1, 1, 1, 1)``.  Index 0 is time.
The null condition asks that ``P^{gab} xi_g xi_a xi_b`` vanish on every
null covector, which reduces to ``xi = (1, -omega)`` with ``|omega| = 1``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NullConditionError

log = logging.getLogger(__name__)

MINKOWSKI = np.diag([-1.0, 1.0, 1.0, 1.0])
DEFAULT_TOL = 1e-10
DEFAULT_MC_VECTOR = (1.0, 0.5, -0.25, 0.125)
SPHERE_FIB_COUNT = 4096
SPHERE_RANDOM_COUNT = 1024
SPHERE_SEED = 12345
ASYMMETRY_WARN = 1e-12


@dataclass(frozen=True, eq=False)
class NullFormTensor:
    """Constant coefficients ``P[g][a][b]``, symmetric in the last two slots.

    Parameters
    ----------
    coeffs : array_like, shape (4, 4, 4) or (64,)
        Raw coefficients in row-major ``(g, a, b)`` order.  They are
        symmetrized as ``(P + P^T_{ab}) / 2`` on construction.
    name : str, optional
        Label used in reports.
    """

    coeffs: np.ndarray
    name: str = "custom"
    asymmetry: float = field(default=0.0, init=False)

    def __post_init__(self):
        raw = np.array(self.coeffs, dtype=np.float64).reshape(4, 4, 4)
        if not np.all(np.isfinite(raw)):
            raise ValueError("tensor coefficients must be finite")
        sym = 0.5 * (raw + raw.transpose(0, 2, 1))
        sym.setflags(write=False)
        object.__setattr__(self, "coeffs", sym)
        object.__setattr__(self, "asymmetry", float(np.max(np.abs(raw - sym))))

    def __getitem__(self, idx):
        return self.coeffs[idx]

    @property
    def is_zero(self) -> bool:
        return not np.any(self.coeffs)

    def margin_coefficients(self) -> np.ndarray:
        """Return ``P^{g00}``, the vector multiplying ``d_g w`` in the margin."""
        return self.coeffs[:, 0, 0].copy()

    def to_text(self) -> str:
        return "\n".join(" ".join(f"{x:.17g}" for x in self.coeffs[g].ravel()) for g in range(4)) + "\n"

    def __eq__(self, other):
        if not isinstance(other, NullFormTensor):
            return NotImplemented
        return np.array_equal(self.coeffs, other.coeffs)

    def __hash__(self):
        return hash(self.coeffs.tobytes())


@dataclass(frozen=True)
class NullVector:
    """Covector ``xi = (xi_0, xi_1, xi_2, xi_3)`` with lower indices."""

    xi: tuple

    def __post_init__(self):
        xi = tuple(float(c) for c in np.asarray(self.xi, dtype=float).ravel())
        if len(xi) != 4:
            raise ValueError("a covector has 4 components")
        object.__setattr__(self, "xi", xi)

    @classmethod
    def from_direction(cls, omega) -> "NullVector":
        """The null covector ``(1, -omega)`` for a unit 3-vector ``omega``."""
        om = np.asarray(omega, dtype=float)
        return cls((1.0, -om[0], -om[1], -om[2]))

    def null_defect(self) -> float:
        x = self.xi
        return abs(x[0] ** 2 - (x[1] ** 2 + x[2] ** 2 + x[3] ** 2))

    def is_null(self, tol: float = 1e-12) -> bool:
        return self.null_defect() <= tol * sum(c * c for c in self.xi)

    def __array__(self, dtype=None, copy=None):
        return np.array(self.xi, dtype=dtype)


@dataclass(frozen=True)
class NullCertificate:
    """Outcome of :func:`validate_null_condition`."""

    max_violation: float
    sample_count: int
    passed: bool
    tolerance: float
    worst_direction: tuple = (0.0, 0.0, 1.0)

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (
            f"{verdict} max_violation={self.max_violation:.3e} "
            f"tol={self.tolerance:.1e} samples={self.sample_count}"
        )


def contract(P: NullFormTensor, xi) -> float:
    """Plain triple sum ``sum P[g][a][b] xi_g xi_a xi_b``.

    The components of ``xi`` are used as stored; no index raising.
    """
    c = P.coeffs if isinstance(P, NullFormTensor) else np.asarray(P, dtype=float)
    x = [float(v) for v in np.asarray(xi, dtype=float)]
    s = 0.0
    for g in range(4):
        for a in range(4):
            for b in range(4):
                s += c[g, a, b] * x[g] * x[a] * x[b]
    return s


def fibonacci_sphere(count: int) -> np.ndarray:
    """Deterministic, nearly uniform unit vectors on the Fibonacci lattice."""
    i = np.arange(count, dtype=float) + 0.5
    z = 1.0 - 2.0 * i / count
    rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)


def random_sphere(count: int, seed: int = SPHERE_SEED) -> np.ndarray:
    g = np.random.default_rng(seed).standard_normal((count, 3))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def sphere_sample() -> np.ndarray:
    """The fixed validation sample: Fibonacci lattice plus seeded random points."""
    return np.concatenate([fibonacci_sphere(SPHERE_FIB_COUNT), random_sphere(SPHERE_RANDOM_COUNT)])


def null_covectors(omegas) -> np.ndarray:
    om = np.atleast_2d(np.asarray(omegas, dtype=float))
    return np.concatenate([np.ones((om.shape[0], 1)), -om], axis=1)


def contract_many(P: NullFormTensor, xis) -> np.ndarray:
    """Vectorized :func:`contract` over rows of ``xis``."""
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    return np.einsum("gab,ng,na,nb->n", P.coeffs, xis, xis, xis)


def validate_null_condition(P: NullFormTensor, tol: float = DEFAULT_TOL) -> NullCertificate:
    """Sample the null condition over the fixed sphere set.

    Parameters
    ----------
    P : NullFormTensor
    tol : float
        Absolute tolerance on ``|P xi xi xi|``.

    Returns
    -------
    NullCertificate
    """
    if not tol > 0:
        raise ValueError("tolerance must be positive")
    omegas = sphere_sample()
    vals = np.abs(contract_many(P, null_covectors(omegas)))
    k = int(np.argmax(vals))
    worst = float(vals[k])
    return NullCertificate(
        max_violation=worst,
        sample_count=len(omegas),
        passed=bool(worst <= tol),
        tolerance=float(tol),
        worst_direction=tuple(float(c) for c in omegas[k]),
    )


def evaluate_qp(P: NullFormTensor, du, ddv) -> float:
    """Quasilinear null form ``P^{gab} d_g u d_a d_b v`` at one point.

    Parameters
    ----------
    du : array_like, shape (4,)
        First derivatives of ``u``.
    ddv : array_like, shape (4, 4)
        Symmetric second derivatives of ``v``.
    """
    c = P.coeffs
    du = np.asarray(du, dtype=float)
    ddv = np.asarray(ddv, dtype=float)
    s = 0.0
    for g in range(4):
        for a in range(4):
            for b in range(4):
                s += c[g, a, b] * du[g] * ddv[a, b]
    return s


def evaluate_q0(du, dv) -> float:
    """Semilinear null form ``d^a u d_a v = -u_t v_t + grad u . grad v``."""
    du = np.asarray(du, dtype=float)
    dv = np.asarray(dv, dtype=float)
    return -du[0] * dv[0] + du[1] * dv[1] + du[2] * dv[2] + du[3] * dv[3]


def closure_dtt(P: NullFormTensor, d1, d2, q0: bool = True):
    """Solve the equation for ``d_t^2 w`` given all other derivatives.

    Works pointwise or gridwise: ``d1[g]`` and ``d2[a][b]`` may be floats
    or arrays (nested lists are fine); the entry ``d2[0][0]`` is ignored.

    Returns
    -------
    dtt, margin : ndarray or float
        The closed second time derivative and ``1 - P^{g00} d_g w``.
    """
    c = P.coeffs
    rhs = d2[1][1] + d2[2][2] + d2[3][3]
    for g in range(4):
        if not np.any(c[g]):
            continue
        for a in range(4):
            for b in range(4):
                if (a, b) == (0, 0) or c[g, a, b] == 0.0:
                    continue
                rhs = rhs + c[g, a, b] * d1[g] * d2[a][b]
    if q0:
        rhs = rhs - d1[0] * d1[0] + d1[1] * d1[1] + d1[2] * d1[2] + d1[3] * d1[3]
    margin = 1.0 - (c[0, 0, 0] * d1[0] + c[1, 0, 0] * d1[1] + c[2, 0, 0] * d1[2] + c[3, 0, 0] * d1[3])
    return rhs / margin, margin


@dataclass(frozen=True)
class DecompositionReport:
    """Coefficients of ``Q_P`` rewritten with good derivatives along ``omega``.

    With ``xi = (1, -omega)`` and ``d_a = G_a - omega_a d_t``::

        Q_P(u, v) = A[c,a,b] G_c u d_a d_b v
                  + B[a,b]   u_t G_a d_b v
                  + C[b]     u_t G_b d_t v
                  + residual u_t d_t d_t v

    ``residual`` equals ``contract(P, xi)``.  ``constant`` is the sum of
    absolute values of A, B and C, which bounds ``|Q_P|`` by
    ``constant * (|Gu| |ddv| + |du| |Gdv|)`` when every ``|.|`` is the
    largest component in absolute value.
    """

    omega: tuple
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    residual: float
    constant: float

    def evaluate(self, du, ddv) -> float:
        """Rebuild ``Q_P`` from the decomposition (includes the residual term)."""
        du = np.asarray(du, dtype=float)
        ddv = np.asarray(ddv, dtype=float)
        om = np.asarray(self.omega)
        gu = om * du[0] + du[1:]
        gdv = om[:, None] * ddv[0][None, :] + ddv[1:, :]
        return float(
            np.einsum("cab,c,ab->", self.A, gu, ddv)
            + du[0] * np.einsum("ab,ab->", self.B, gdv)
            + du[0] * np.dot(self.C, gdv[:, 0])
            + self.residual * du[0] * ddv[0, 0]
        )


def good_decomposition(P: NullFormTensor, omega, tol: float = DEFAULT_TOL) -> DecompositionReport:
    """Rewrite ``Q_P`` in good-derivative form along the unit direction ``omega``.

    Raises
    ------
    NullConditionError
        If ``|contract(P, (1, -omega))| > tol``; the leftover ``u_t v_tt``
        term would not be controlled by good derivatives.
    """
    om = np.asarray(omega, dtype=float).ravel()
    if om.shape != (3,) or abs(float(np.linalg.norm(om)) - 1.0) > 1e-12:
        raise ValueError("omega must be a unit 3-vector")
    xi = np.concatenate([[1.0], -om])
    c = P.coeffs
    A = c[1:, :, :].copy()
    B = np.einsum("g,gab->ab", xi, c)[1:, :]
    C = np.einsum("g,a,gab->b", xi, xi, c)[1:]
    residual = contract(P, xi)
    if abs(residual) > tol:
        raise NullConditionError(
            f"null condition fails along omega={tuple(om)}: |P xi xi xi| = {abs(residual):.3e} > {tol:g}"
        )
    const = float(np.abs(A).sum() + np.abs(B).sum() + np.abs(C).sum())
    return DecompositionReport(tuple(float(v) for v in om), A, B, C, float(residual), const)


# presets --------------------------------------------------------------------

def mc_family(c=DEFAULT_MC_VECTOR) -> NullFormTensor:
    """``P^{gab} = m^{ga} c^b + m^{gb} c^a``; null for every constant ``c``."""
    c = np.asarray(c, dtype=float).ravel()
    if c.shape != (4,):
        raise ValueError("mc-family needs a 4-vector c")
    P = np.einsum("ga,b->gab", MINKOWSKI, c) + np.einsum("gb,a->gab", MINKOWSKI, c)
    return NullFormTensor(P, name="mc-family")


def zero_tensor() -> NullFormTensor:
    return NullFormTensor(np.zeros((4, 4, 4)), name="zero")


def bad_000() -> NullFormTensor:
    P = np.zeros((4, 4, 4))
    P[0, 0, 0] = 1.0
    return NullFormTensor(P, name="bad-000")


PRESETS = {"zero": zero_tensor, "mc-family": mc_family, "bad-000": bad_000}


def preset(name: str, c=None) -> NullFormTensor:
    """Look up a named tensor; ``c`` applies to ``mc-family`` only."""
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown tensor preset {name!r}; known: {', '.join(PRESETS)}") from None
    if name == "mc-family" and c is not None:
        return factory(c)
    return factory()


def parse_tensor_text(text: str, name: str = "file") -> NullFormTensor:
    """Parse 64 whitespace separated reals in ``(g, a, b)`` row-major order."""
    vals = np.array([float(tok) for tok in text.split()], dtype=float)
    if vals.size != 64:
        raise ValueError(f"tensor text must hold 64 numbers, got {vals.size}")
    P = NullFormTensor(vals, name=name)
    if P.asymmetry > ASYMMETRY_WARN:
        warnings.warn(f"tensor {name!r} symmetrized; asymmetry {P.asymmetry:.3e}", stacklevel=2)
        log.warning("tensor %s symmetrized; asymmetry %.3e", name, P.asymmetry)
    return P


def load_tensor(path) -> NullFormTensor:
    path = Path(path)
    return parse_tensor_text(path.read_text(), name=path.name)


def resolve_tensor(spec, c=None) -> NullFormTensor:
    """Accept a tensor, a preset name, or a path to a tensor file."""
    if isinstance(spec, NullFormTensor):
        return spec
    if spec in PRESETS:
        return preset(spec, c)
    p = Path(spec)
    if p.exists():
        return load_tensor(p)
    raise ValueError(f"unknown tensor {spec!r}: neither a preset nor a file")
