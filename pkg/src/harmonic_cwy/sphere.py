"""Spectral calculus on the unit round sphere.

Gauss-Legendre nodes in cos(theta) times equispaced azimuth, real orthonormal
spherical harmonics, direct (matrix) transforms.  Nodes never touch the poles,
so one-forms are stored as plain coordinate components (w_theta, w_phi).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "SphereGrid",
    "SphereScalar",
    "SphereOneForm",
    "CoordinateFunctions",
    "GridMismatchError",
    "integrate",
    "laplacian",
    "gradient",
    "divergence",
    "solve_shifted_laplacian",
    "solve_laplacian_polynomial",
    "degree_projection",
    "second_partials",
]


class GridMismatchError(ValueError):
    """Fields defined on different grids were combined."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _legendre_table(l_max: int, x: np.ndarray):
    """Orthonormal associated Legendre values and theta-derivatives.

    Returns ``p[l, m, k]`` and ``dp[l, m, k]`` (d/dtheta) for nodes ``x = cos(theta)``,
    normalised so that ``2*pi * int p_lm^2 dx = 1``.  No Condon-Shortley phase.
    """
    n = x.size
    s = np.sqrt(1.0 - x * x)
    p = np.zeros((l_max + 1, l_max + 1, n))
    p[0, 0] = np.sqrt(1.0 / (4.0 * np.pi))
    for m in range(1, l_max + 1):
        p[m, m] = np.sqrt((2 * m + 1) / (2.0 * m)) * s * p[m - 1, m - 1]
    for m in range(0, l_max):
        p[m + 1, m] = np.sqrt(2 * m + 3.0) * x * p[m, m]
    for m in range(0, l_max + 1):
        for l in range(m + 2, l_max + 1):
            a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            p[l, m] = a * (x * p[l - 1, m] - b * p[l - 2, m])
    dp = np.zeros_like(p)
    for m in range(0, l_max + 1):
        for l in range(m, l_max + 1):
            acc = l * x * p[l, m]
            if l > m:
                acc = acc - np.sqrt((2 * l + 1.0) / (2 * l - 1.0) * (l * l - m * m)) * p[l - 1, m]
            dp[l, m] = acc / s
    return p, dp


@dataclass(frozen=True, eq=False)
class SphereGrid:
    """Gauss-Legendre x uniform-phi product grid with a real SH basis up to ``l_max``.

    Node arrays are flattened with theta varying slowest.  ``weights`` already
    contain the ``sin(theta)`` area factor, so they sum to 4*pi.
    """

    l_max: int
    n_theta: int = 0
    n_phi: int = 0

    def __post_init__(self):
        if self.l_max < 1:
            raise ValueError("l_max must be at least 1")
        if self.n_theta == 0:
            object.__setattr__(self, "n_theta", self.l_max + 1)
        if self.n_phi == 0:
            object.__setattr__(self, "n_phi", 2 * self.l_max + 1)
        if self.n_theta < self.l_max + 1 or self.n_phi < 2 * self.l_max + 1:
            raise ValueError(
                f"grid too coarse for l_max={self.l_max}: need n_theta >= {self.l_max + 1}"
                f" and n_phi >= {2 * self.l_max + 1}"
            )

    @cached_property
    def _nodes(self):
        x, w = np.polynomial.legendre.leggauss(self.n_theta)
        # north to south
        x, w = x[::-1], w[::-1]
        phi = 2.0 * np.pi * np.arange(self.n_phi) / self.n_phi
        theta = np.arccos(x)
        tt, pp = np.meshgrid(theta, phi, indexing="ij")
        ww = np.outer(w, np.full(self.n_phi, 2.0 * np.pi / self.n_phi))
        return x, _frozen(tt.ravel()), _frozen(pp.ravel()), _frozen(ww.ravel())

    @property
    def theta(self) -> np.ndarray:
        return self._nodes[1]

    @property
    def phi(self) -> np.ndarray:
        return self._nodes[2]

    @property
    def weights(self) -> np.ndarray:
        return self._nodes[3]

    @property
    def size(self) -> int:
        return self.n_theta * self.n_phi

    @property
    def nodes(self) -> list[tuple[float, float, float]]:
        return list(zip(self.theta.tolist(), self.phi.tolist(), self.weights.tolist()))

    @property
    def n_coeffs(self) -> int:
        return (self.l_max + 1) ** 2

    @cached_property
    def degrees(self) -> np.ndarray:
        """Degree ``l`` of every coefficient slot (slot index ``l*l + l + m``)."""
        return _frozen([l for l in range(self.l_max + 1) for _ in range(2 * l + 1)]).astype(int)

    @cached_property
    def orders(self) -> np.ndarray:
        return _frozen([m for l in range(self.l_max + 1) for m in range(-l, l + 1)]).astype(int)

    @cached_property
    def _basis(self):
        x = self._nodes[0]
        p, dp = _legendre_table(self.l_max, x)
        nt, nphi = self.n_theta, self.n_phi
        phi = 2.0 * np.pi * np.arange(nphi) / nphi
        Y = np.zeros((nt, nphi, self.n_coeffs))
        Yt = np.zeros_like(Y)
        Yp = np.zeros_like(Y)
        for l in range(self.l_max + 1):
            for m in range(-l, l + 1):
                k = l * l + l + m
                am = abs(m)
                if m == 0:
                    ang, dang = np.ones(nphi), np.zeros(nphi)
                elif m > 0:
                    ang, dang = np.sqrt(2) * np.cos(m * phi), -np.sqrt(2) * m * np.sin(m * phi)
                else:
                    ang, dang = np.sqrt(2) * np.sin(am * phi), np.sqrt(2) * am * np.cos(am * phi)
                Y[:, :, k] = np.outer(p[l, am], ang)
                Yt[:, :, k] = np.outer(dp[l, am], ang)
                Yp[:, :, k] = np.outer(p[l, am], dang)
        n = self.size
        return (
            _frozen(Y.reshape(n, -1)),
            _frozen(Yt.reshape(n, -1)),
            _frozen(Yp.reshape(n, -1)),
        )

    @property
    def basis(self) -> np.ndarray:
        return self._basis[0]

    @property
    def basis_dtheta(self) -> np.ndarray:
        return self._basis[1]

    @property
    def basis_dphi(self) -> np.ndarray:
        return self._basis[2]

    @cached_property
    def _basis2(self):
        # theta-second derivative from the associated Legendre equation
        Y, Yt, Yp = self._basis
        ct = np.cos(self.theta)[:, None]
        st = self.sin_theta[:, None]
        ell = self.degrees[None, :]
        m2 = (self.orders**2)[None, :]
        Ytt = -ct / st * Yt - (ell * (ell + 1.0) - m2 / st**2) * Y
        Ypp = -m2 * Y
        return _frozen(Ytt), _frozen(Ypp)

    @property
    def basis_dtheta2(self) -> np.ndarray:
        return self._basis2[0]

    @property
    def basis_dphi2(self) -> np.ndarray:
        return self._basis2[1]

    @cached_property
    def basis_dtheta_dphi(self) -> np.ndarray:
        x = self._nodes[0]
        _, dp = _legendre_table(self.l_max, x)
        nphi = self.n_phi
        phi = 2.0 * np.pi * np.arange(nphi) / nphi
        out = np.zeros((self.n_theta, nphi, self.n_coeffs))
        for l in range(self.l_max + 1):
            for m in range(-l, l + 1):
                am = abs(m)
                if m > 0:
                    dang = -np.sqrt(2) * m * np.sin(m * phi)
                elif m < 0:
                    dang = np.sqrt(2) * am * np.cos(am * phi)
                else:
                    continue
                out[:, :, l * l + l + m] = np.outer(dp[l, am], dang)
        return _frozen(out.reshape(self.size, -1))

    @cached_property
    def sin_theta(self) -> np.ndarray:
        return _frozen(np.sin(self.theta))

    @cached_property
    def unit_vectors(self) -> np.ndarray:
        """Node positions on the unit sphere, shape (3, n)."""
        st = np.sin(self.theta)
        return _frozen(
            [st * np.cos(self.phi), st * np.sin(self.phi), np.cos(self.theta)]
        )

    @cached_property
    def unit_vector_derivatives(self) -> np.ndarray:
        """``d X~^i / d u^a`` at every node, shape (2, 3, n) with a = (theta, phi)."""
        t, p = self.theta, self.phi
        ct, st = np.cos(t), np.sin(t)
        d_theta = [ct * np.cos(p), ct * np.sin(p), -st]
        d_phi = [-st * np.sin(p), st * np.cos(p), np.zeros_like(t)]
        return _frozen([d_theta, d_phi])

    @cached_property
    def inverse_metric(self) -> np.ndarray:
        """Diagonal of the round inverse metric: (1, 1/sin^2 theta), shape (2, n)."""
        return _frozen([np.ones(self.size), 1.0 / self.sin_theta**2])

    # -- transforms ---------------------------------------------------------

    def analysis(self, values) -> np.ndarray:
        return self.basis.T @ (self.weights * np.asarray(values, dtype=float))

    def synthesis(self, coeffs) -> np.ndarray:
        return self.basis @ np.asarray(coeffs, dtype=float)

    def scalar(self, values) -> "SphereScalar":
        values = np.broadcast_to(np.asarray(values, dtype=float), (self.size,))
        return SphereScalar(self, values)

    def from_coeffs(self, coeffs) -> "SphereScalar":
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (self.n_coeffs,):
            raise ValueError(f"expected {self.n_coeffs} coefficients, got {coeffs.shape}")
        return SphereScalar(self, self.synthesis(coeffs), coeffs)

    def constant(self, value: float) -> "SphereScalar":
        return self.scalar(np.full(self.size, float(value)))

    def coordinates(self) -> "CoordinateFunctions":
        X = self.unit_vectors
        return CoordinateFunctions(self.scalar(X[0]), self.scalar(X[1]), self.scalar(X[2]))


def _check_same(a, b):
    if a.grid is not b.grid:
        raise GridMismatchError("fields live on different SphereGrid instances")


@dataclass(frozen=True, eq=False)
class SphereScalar:
    """A real function on S^2: node values plus lazily computed SH coefficients."""

    grid: SphereGrid
    values: np.ndarray
    _coeffs: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        if self.values.shape != (self.grid.size,):
            raise ValueError("value array does not match grid size")

    @cached_property
    def coeffs(self) -> np.ndarray:
        if self._coeffs is not None:
            return _frozen(self._coeffs)
        return _frozen(self.grid.analysis(self.values))

    def _lift(self, other):
        if isinstance(other, SphereScalar):
            _check_same(self, other)
            return other.values
        return other

    def __add__(self, other):
        return SphereScalar(self.grid, self.values + self._lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return SphereScalar(self.grid, self.values - self._lift(other))

    def __rsub__(self, other):
        return SphereScalar(self.grid, self._lift(other) - self.values)

    def __mul__(self, other):
        if isinstance(other, SphereOneForm):
            return other * self
        return SphereScalar(self.grid, self.values * self._lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return SphereScalar(self.grid, self.values / self._lift(other))

    def __neg__(self):
        return SphereScalar(self.grid, -self.values)

    def __pow__(self, k):
        return SphereScalar(self.grid, self.values**k)

    def apply(self, fn) -> "SphereScalar":
        return SphereScalar(self.grid, fn(self.values))

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def band_limited(self) -> "SphereScalar":
        """Projection onto degrees <= l_max, resynthesised at the nodes."""
        return self.grid.from_coeffs(self.coeffs)


@dataclass(frozen=True, eq=False)
class SphereOneForm:
    """One-form on S^2 in the coordinate basis: components (w_theta, w_phi)."""

    grid: SphereGrid
    theta: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta", _frozen(self.theta))
        object.__setattr__(self, "phi", _frozen(self.phi))

    @property
    def components(self) -> tuple[np.ndarray, np.ndarray]:
        return self.theta, self.phi

    @classmethod
    def zeros(cls, grid: SphereGrid) -> "SphereOneForm":
        return cls(grid, np.zeros(grid.size), np.zeros(grid.size))

    def _pair(self, other):
        _check_same(self, other)
        return other.theta, other.phi

    def __add__(self, other):
        t, p = self._pair(other)
        return SphereOneForm(self.grid, self.theta + t, self.phi + p)

    def __sub__(self, other):
        t, p = self._pair(other)
        return SphereOneForm(self.grid, self.theta - t, self.phi - p)

    def __neg__(self):
        return SphereOneForm(self.grid, -self.theta, -self.phi)

    def __mul__(self, other):
        if isinstance(other, SphereScalar):
            _check_same(self, other)
            other = other.values
        return SphereOneForm(self.grid, self.theta * other, self.phi * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, SphereScalar):
            _check_same(self, other)
            other = other.values
        return SphereOneForm(self.grid, self.theta / other, self.phi / other)

    def dot(self, other: "SphereOneForm") -> SphereScalar:
        """Round-metric pairing sigma~^{ab} w_a v_b."""
        t, p = self._pair(other)
        ginv = self.grid.inverse_metric
        return SphereScalar(self.grid, ginv[0] * self.theta * t + ginv[1] * self.phi * p)

    def contract(self, vector_components) -> SphereScalar:
        """Pair with a one-form given as raw (theta, phi) arrays, using sigma~^{ab}."""
        ginv = self.grid.inverse_metric
        vt, vp = vector_components
        return SphereScalar(self.grid, ginv[0] * self.theta * vt + ginv[1] * self.phi * vp)

    def rotated(self) -> "SphereOneForm":
        """Hodge star on the round sphere: (*w)_a = eps_a^b w_b."""
        s = self.grid.sin_theta
        return SphereOneForm(self.grid, -self.phi / s, s * self.theta)

    def sup(self) -> float:
        """Sup of the pointwise round-metric norm."""
        return float(np.sqrt(np.max(self.dot(self).values)))


@dataclass(frozen=True)
class CoordinateFunctions:
    """The three l=1 functions X~^i restricted from Cartesian coordinates."""

    X1: SphereScalar
    X2: SphereScalar
    X3: SphereScalar

    def __iter__(self):
        return iter((self.X1, self.X2, self.X3))

    def __getitem__(self, i: int) -> SphereScalar:
        return (self.X1, self.X2, self.X3)[i]

    def dot(self, v) -> SphereScalar:
        """sum_i v_i X~^i for a constant 3-vector v."""
        v = np.asarray(v, dtype=float)
        return self.X1 * v[0] + self.X2 * v[1] + self.X3 * v[2]


# -- operations ---------------------------------------------------------------


def integrate(f: SphereScalar, grid: SphereGrid | None = None) -> float:
    """Quadrature of ``f`` over S^2 (fixed summation order)."""
    if grid is not None and f.grid is not grid:
        raise GridMismatchError("field does not live on the requested grid")
    return float(np.dot(f.grid.weights, f.values))


def laplacian(f: SphereScalar) -> SphereScalar:
    g = f.grid
    ell = g.degrees
    return g.from_coeffs(-ell * (ell + 1.0) * f.coeffs)


def gradient(f: SphereScalar) -> SphereOneForm:
    g = f.grid
    a = f.coeffs
    return SphereOneForm(g, g.basis_dtheta @ a, g.basis_dphi @ a)


def divergence(w: SphereOneForm) -> SphereScalar:
    """Round-metric divergence, computed in weak form.

    Coefficient (l, m) is ``-int sigma~^{ab} d_a Y_lm w_b``, which makes the
    discrete divergence the exact negative adjoint of ``gradient``.
    """
    g = w.grid
    ginv = g.inverse_metric
    wt = g.weights
    c = -(g.basis_dtheta.T @ (wt * w.theta) + g.basis_dphi.T @ (wt * ginv[1] * w.phi))
    return g.from_coeffs(c)


def second_partials(f: SphereScalar):
    """Coordinate second derivatives (f_tt, f_tp, f_pp) of the band-limited part of ``f``."""
    g = f.grid
    a = f.coeffs
    return g.basis_dtheta2 @ a, g.basis_dtheta_dphi @ a, g.basis_dphi2 @ a


def degree_projection(f: SphereScalar, degrees) -> SphereScalar:
    """Keep only the SH components of ``f`` whose degree is in ``degrees``."""
    g = f.grid
    mask = np.isin(g.degrees, np.atleast_1d(degrees))
    return g.from_coeffs(np.where(mask, f.coeffs, 0.0))


def solve_laplacian_polynomial(poly, rhs: SphereScalar, *, kernel_tol: float = 1e-9):
    """Solve ``p(Lap) f = rhs`` for a polynomial ``p`` (coefficients lowest first).

    Degrees where ``p(-l(l+1))`` vanishes form the kernel: the solution has no
    component there and the part of ``rhs`` living there is returned as the
    obstruction instead of raising.
    """
    g = rhs.grid
    ev = -g.degrees * (g.degrees + 1.0)
    symbol = np.polynomial.polynomial.polyval(ev, np.asarray(poly, dtype=float))
    scale = max(1.0, float(np.max(np.abs(symbol))))
    kernel = np.abs(symbol) <= kernel_tol * scale
    c = rhs.coeffs
    sol = np.where(kernel, 0.0, c / np.where(kernel, 1.0, symbol))
    obstruction = np.where(kernel, c, 0.0)
    return g.from_coeffs(sol), g.from_coeffs(obstruction)


def solve_shifted_laplacian(shift: float, rhs: SphereScalar, grid: SphereGrid | None = None):
    """Minimal-norm solution of ``(Lap + shift) f = rhs`` and the kernel part of ``rhs``."""
    if grid is not None and rhs.grid is not grid:
        raise GridMismatchError("rhs does not live on the requested grid")
    return solve_laplacian_polynomial([shift, 1.0], rhs)
