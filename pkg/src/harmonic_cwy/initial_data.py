"""Harmonic-asymptotics initial data: g = u^4 delta, k = u^2 (Y_ij + Y_ji - Y_kk delta / 2).

The truncated expansions

    u   = 1 + A/r + u2(x~)/r^2
    Y_i = B_i/r + Y2_i(x~)/r^2

are taken as the data set itself.  Everything here is evaluated analytically
(value, gradient and Hessian) so the constraint audit involves no finite
differencing.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sphere import SphereGrid, SphereScalar, solve_shifted_laplacian

__all__ = [
    "HarmonicAsymptotics",
    "ExpansionCompletion",
    "PointData",
    "DataValidationError",
    "complete_expansion",
    "evaluate",
    "evaluate_many",
    "constraint_residual",
    "decay_exponent",
    "constraint_decay",
]


class DataValidationError(ValueError):
    pass


@dataclass(frozen=True)
class HarmonicAsymptotics:
    """Coefficients (A, B_i, c_i, d_ij) of one harmonic-asymptotics end.

    ``A = 0`` is accepted only together with ``B = c = d = 0``: that is the flat
    data set u = 1, Y = 0.
    """

    A: float
    B: np.ndarray = field(default_factory=lambda: np.zeros(3))
    c: np.ndarray = field(default_factory=lambda: np.zeros(3))
    d: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))

    def __post_init__(self):
        for name, shape in (("B", (3,)), ("c", (3,)), ("d", (3, 3))):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise DataValidationError(f"{name} must have shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise DataValidationError(f"{name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        A = float(self.A)
        object.__setattr__(self, "A", A)
        if not np.isfinite(A):
            raise DataValidationError("A must be finite")
        if self.is_flat:
            return
        if A <= 0:
            raise DataValidationError(f"A must be positive (got {A}); use flat() for Minkowski data")
        ratio = np.linalg.norm(self.B) / (4 * A)
        if ratio >= 1:
            raise DataValidationError(
                f"|B|/(4A) = {ratio:.6g} >= 1: no future timelike observer exists"
            )

    @classmethod
    def flat(cls) -> "HarmonicAsymptotics":
        return cls(0.0)

    @classmethod
    def random(cls, rng: np.random.Generator, *, a_range=(0.25, 1.0), b_ratio=2.0):
        """Draw A in ``a_range``, |B| <= b_ratio*A, |c| <= 1, ||d||_F <= 1."""
        A = rng.uniform(*a_range)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        B = direction * rng.uniform(0.0, b_ratio * A)
        c = rng.uniform(-1, 1, size=3) / np.sqrt(3)
        d = rng.uniform(-1, 1, size=(3, 3)) / 3
        return cls(A, B, c, d)

    @property
    def is_flat(self) -> bool:
        return self.A == 0 and not self.B.any() and not self.c.any() and not self.d.any()

    @property
    def energy(self) -> float:
        return 2 * self.A

    @property
    def momentum(self) -> np.ndarray:
        return self.B / 2

    def with_changes(self, **kw) -> "HarmonicAsymptotics":
        args = dict(A=self.A, B=self.B, c=self.c, d=self.d)
        args.update(kw)
        return HarmonicAsymptotics(**args)


# -- closed-form angular profiles --------------------------------------------


def u2_profile(data: HarmonicAsymptotics, X: np.ndarray) -> np.ndarray:
    """u^(-2) at unit vectors ``X`` (shape (3, n))."""
    Bx = data.B @ X
    return data.c @ X - 9 / 64 * data.B @ data.B + Bx**2 / 64


def Y2_profile(data: HarmonicAsymptotics, X: np.ndarray) -> np.ndarray:
    """Y_i^(-2) at unit vectors ``X``; returns shape (3, n).

    The B-dependent part carries a factor A: it is what the momentum
    constraint forces at order r^-4 (the source term there is u_j ~ A).
    """
    Bx = data.B @ X
    return data.d @ X + data.A * (-2.5 * data.B[:, None] + 0.5 * Bx * X)


@dataclass(frozen=True)
class ExpansionCompletion:
    """Second-order profiles u^(-2) and Y_i^(-2) on a grid."""

    u_m2: SphereScalar
    Y_m2: tuple[SphereScalar, SphereScalar, SphereScalar]
    kernel_u: SphereScalar | None = None
    kernel_Y: tuple[SphereScalar, ...] | None = None
    resolve_error: float = 0.0
    resolve_error_u: float = 0.0
    resolve_error_Y: float = 0.0


def complete_expansion(data: HarmonicAsymptotics, grid: SphereGrid, *, check_tol=1e-9):
    """Closed-form u^(-2), Y^(-2), cross-checked by re-solving the order r^-4 system.

    ``(Lap+2) u2 = -(B.X)^2/16 - |B|^2/4`` and ``(Lap+2) Y2_i = -A(2 X^i (B.X) + 4 B_i)``
    are solved with the l=1 kernel left free; the kernel part of the closed form must
    then be exactly c.X and d_ij X^j.
    """
    X = grid.unit_vectors
    coords = grid.coordinates()
    g = coords.dot(data.B)
    u2 = grid.scalar(u2_profile(data, X))
    Y2 = tuple(grid.scalar(row) for row in Y2_profile(data, X))

    rhs_u = g * g * (-1 / 16) - data.B @ data.B / 4
    sol_u, obs_u = solve_shifted_laplacian(2.0, rhs_u)
    kernel_u = coords.dot(data.c)
    err_u = (sol_u + kernel_u - u2).sup() + obs_u.sup()
    err_Y = 0.0
    kernel_Y = []
    for i in range(3):
        rhs = (coords[i] * g * 2 + 4 * data.B[i]) * (-data.A)
        sol, obs = solve_shifted_laplacian(2.0, rhs)
        ker = coords.dot(data.d[i])
        kernel_Y.append(ker)
        err_Y = max(err_Y, (sol + ker - Y2[i]).sup() + obs.sup())
    err = max(err_u, err_Y)
    scale = 1.0 + float(np.abs(data.B).max()) ** 2 + float(np.abs(data.c).max()) + float(np.abs(data.d).max())
    if err > check_tol * scale:
        raise ArithmeticError(f"closed-form expansion disagrees with elliptic solve by {err:.3e}")
    return ExpansionCompletion(u2, Y2, kernel_u, tuple(kernel_Y), err, err_u, err_Y)


# -- jets: value, gradient, Hessian over a batch of points --------------------


class _Jet:
    __slots__ = ("v", "g", "h")

    def __init__(self, v, g, h):
        self.v, self.g, self.h = v, g, h

    @classmethod
    def const(cls, value, n):
        return cls(np.full(n, float(value)), np.zeros((n, 3)), np.zeros((n, 3, 3)))

    def __add__(self, o):
        return _Jet(self.v + o.v, self.g + o.g, self.h + o.h)

    def scale(self, s):
        return _Jet(s * self.v, s * self.g, s * self.h)

    def __mul__(self, o):
        v = self.v * o.v
        g = self.g * o.v[:, None] + o.g * self.v[:, None]
        h = (
            self.h * o.v[:, None, None]
            + o.h * self.v[:, None, None]
            + self.g[:, :, None] * o.g[:, None, :]
            + o.g[:, :, None] * self.g[:, None, :]
        )
        return _Jet(v, g, h)


def _rpow(x, n):
    """Jet of r^-n."""
    r2 = np.einsum("ki,ki->k", x, x)
    r = np.sqrt(r2)
    v = r**-n
    g = -n * x * (r ** (-n - 2))[:, None]
    eye = np.eye(3)[None]
    h = -n * (r ** (-n - 2))[:, None, None] * eye + n * (n + 2) * (r ** (-n - 4))[:, None, None] * (
        x[:, :, None] * x[:, None, :]
    )
    return _Jet(v, g, h)


def _linear(x, vec):
    n = x.shape[0]
    vec = np.asarray(vec, dtype=float)
    return _Jet(x @ vec, np.broadcast_to(vec, (n, 3)).copy(), np.zeros((n, 3, 3)))


def _u_jet(data, x):
    n = x.shape[0]
    B = data.B
    u = _Jet.const(1.0, n) + _rpow(x, 1).scale(data.A)
    if data.is_flat:
        return u
    Bx = _linear(x, B)
    u = u + (_linear(x, data.c) * _rpow(x, 3))
    u = u + _rpow(x, 2).scale(-9 / 64 * (B @ B))
    u = u + (Bx * Bx * _rpow(x, 4)).scale(1 / 64)
    return u


def _Y_jets(data, x):
    n = x.shape[0]
    if data.is_flat:
        return [_Jet.const(0.0, n) for _ in range(3)]
    B, A = data.B, data.A
    Bx = _linear(x, B)
    r1, r2, r3, r4 = (_rpow(x, k) for k in (1, 2, 3, 4))
    out = []
    for i in range(3):
        y = r1.scale(B[i])
        y = y + _linear(x, data.d[i]) * r3
        y = y + r2.scale(-2.5 * A * B[i])
        y = y + (Bx * _linear(x, np.eye(3)[i]) * r4).scale(0.5 * A)
        out.append(y)
    return out


@dataclass(frozen=True)
class PointData:
    u: float
    du: np.ndarray
    Y: np.ndarray
    dY: np.ndarray  # dY[i, j] = d_j Y_i
    g: np.ndarray
    k: np.ndarray


@dataclass(frozen=True)
class FieldBatch:
    """Vectorised ``PointData`` plus second derivatives, leading axis = point."""

    x: np.ndarray
    u: np.ndarray
    du: np.ndarray
    ddu: np.ndarray
    Y: np.ndarray
    dY: np.ndarray
    ddY: np.ndarray  # ddY[n, i, j, l] = d_j d_l Y_i
    g: np.ndarray
    k: np.ndarray


def evaluate_many(data: HarmonicAsymptotics, x) -> FieldBatch:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if np.any(np.einsum("ki,ki->k", x, x) == 0):
        raise ValueError("the data set is not defined at the origin")
    uj = _u_jet(data, x)
    Yj = _Y_jets(data, x)
    Y = np.stack([y.v for y in Yj], axis=1)
    dY = np.stack([y.g for y in Yj], axis=1)
    ddY = np.stack([y.h for y in Yj], axis=1)
    u = uj.v
    eye = np.eye(3)[None]
    g = (u**4)[:, None, None] * eye
    div = np.einsum("kii->k", dY)
    sym = dY + np.transpose(dY, (0, 2, 1))
    k = (u**2)[:, None, None] * (sym - 0.5 * div[:, None, None] * eye)
    return FieldBatch(x, u, uj.g, uj.h, Y, dY, ddY, g, k)


def evaluate(data: HarmonicAsymptotics, completion: ExpansionCompletion | None, x) -> PointData:
    """Fields of the truncated data set at one point ``x`` of R^3.

    ``completion`` is accepted for interface symmetry; the second-order profiles are
    evaluated from their closed forms directly.
    """
    x = np.asarray(x, dtype=float)
    if not np.any(x):
        raise ValueError("the data set is not defined at the origin")
    b = evaluate_many(data, x[None])
    return PointData(float(b.u[0]), b.du[0], b.Y[0], b.dY[0], b.g[0], b.k[0])


def constraint_residual(data, completion, r: float, grid: SphereGrid):
    """LHS - RHS of the reduced vacuum constraint system on the sphere of radius r.

    Hamiltonian: ``8 Lap u - u(-|LY|^2 + (tr LY)^2/2)``;
    momentum:    ``Lap Y_i - 2 u_i tr LY / u + 4 u_j (LY)_ij / u``,
    with ``(LY)_ij = Y_i,j + Y_j,i - Y_k,k delta_ij``.
    """
    if r <= 0:
        raise ValueError("radius must be positive")
    pts = r * grid.unit_vectors.T
    b = evaluate_many(data, pts)
    eye = np.eye(3)[None]
    div = np.einsum("kii->k", b.dY)
    LY = b.dY + np.transpose(b.dY, (0, 2, 1)) - div[:, None, None] * eye
    trLY = np.einsum("kii->k", LY)
    lap_u = np.einsum("kii->k", b.ddu)
    ham = 8 * lap_u - b.u * (-np.einsum("kij,kij->k", LY, LY) + 0.5 * trLY**2)
    lap_Y = np.einsum("kijj->ki", b.ddY)
    mom = lap_Y - 2 * b.du * (trLY / b.u)[:, None] + 4 * np.einsum("kj,kij->ki", b.du, LY) / b.u[:, None]
    return grid.scalar(ham), tuple(grid.scalar(mom[:, i]) for i in range(3))


def decay_exponent(sup_r: float, sup_2r: float) -> float:
    """log2 of the sup-norm ratio over one doubling of the radius."""
    if sup_2r == 0.0:
        return float("inf")
    return float(np.log2(sup_r / sup_2r))


def constraint_decay(data, completion, r0: float, grid: SphereGrid, rel_floor: float = 1e-11):
    """Decay exponents (hamiltonian, momentum) of the residuals over r0 -> 2 r0.

    Residuals below ``rel_floor`` times the size of the second derivatives entering
    them are roundoff; a constraint satisfied to roundoff at both radii reports inf.
    """
    out = []
    sups = {}
    for r in (r0, 2 * r0):
        ham, mom = constraint_residual(data, completion, r, grid)
        b = evaluate_many(data, r * grid.unit_vectors.T)
        floor_h = rel_floor * 8 * float(np.abs(b.ddu).max(initial=0.0))
        floor_m = rel_floor * float(np.abs(b.ddY).max(initial=0.0))
        sups[r] = (ham.sup(), floor_h, max(m.sup() for m in mom), floor_m)
    for k in (0, 2):
        s1, f1 = sups[r0][k], sups[r0][k + 1]
        s2, f2 = sups[2 * r0][k], sups[2 * r0][k + 1]
        if s1 <= f1 and s2 <= f2:
            out.append(float("inf"))
        else:
            out.append(decay_exponent(s1, s2))
    return tuple(out)
