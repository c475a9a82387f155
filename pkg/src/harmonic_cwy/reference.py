"""Reference side: optimal-embedding expansion into R^{3,1}, observer, rho and j.

Conventions: eta = diag(-1, 1, 1, 1), 4-vectors are arrays whose first axis is
(x^0, x^1, x^2, x^3), tau = -<X, T0>.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .initial_data import ExpansionCompletion, HarmonicAsymptotics, evaluate_many, u2_profile
from .series import ExpansionSeries, fit_power_series
from .sphere import (
    CoordinateFunctions,
    SphereGrid,
    SphereOneForm,
    SphereScalar,
    degree_projection,
    divergence,
    gradient,
    integrate,
    laplacian,
    second_partials,
    solve_laplacian_polynomial,
)
from .surface import SurfaceData, surface_data

__all__ = [
    "NoTimelikeObserver",
    "ConsistencyError",
    "GeometryError",
    "Observer",
    "EmbeddingExpansion",
    "ReferenceGeometry",
    "RhoJ",
    "minkowski",
    "solve_leading_embedding",
    "linearized_optimal_source",
    "reference_geometry",
    "rho_j_at",
    "rho_j",
    "rho_m3_closed_form",
    "j_m2_closed_form",
    "alpha_H_m2_closed_form",
    "solve_second_order",
    "quasi_local_energy",
    "optimal_residual",
]


class NoTimelikeObserver(ValueError):
    pass


class ConsistencyError(ArithmeticError):
    pass


class GeometryError(ArithmeticError):
    pass


def minkowski(a, b):
    """eta(a, b) along the first axis."""
    a, b = np.asarray(a), np.asarray(b)
    return -a[0] * b[0] + np.sum(a[1:] * b[1:], axis=0)


@dataclass(frozen=True)
class Observer:
    """T0(r) = (a0, a) + (a0_m1, a_m1)/r; only the limit is a unit vector exactly."""

    a0: float
    a: np.ndarray
    a0_m1: float = 0.0
    a_m1: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))
        object.__setattr__(self, "a_m1", np.asarray(self.a_m1, dtype=float))

    @classmethod
    def from_velocity(cls, v) -> "Observer":
        v = np.asarray(v, dtype=float)
        speed2 = float(v @ v)
        if speed2 >= 1:
            raise NoTimelikeObserver(f"|a|/a0 = {np.sqrt(speed2):.6g} >= 1")
        a0 = 1 / np.sqrt(1 - speed2)
        return cls(a0, a0 * v)

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([[self.a0], self.a])

    @property
    def norm_defect(self) -> float:
        return abs(self.a0**2 - self.a @ self.a - 1)

    def at(self, r: float) -> np.ndarray:
        """Unit future timelike T0(r); the spatial part carries the 1/r correction."""
        s = self.a + self.a_m1 / r
        return np.concatenate([[np.sqrt(1 + s @ s)], s])


@dataclass(frozen=True)
class EmbeddingExpansion:
    """X^0 = X0_0 + X0_m1/r,  X^i = r X~^i + Xi_0 + Xi_m1/r,  plus the observer."""

    data: HarmonicAsymptotics
    Xi_1: CoordinateFunctions
    Xi_0: tuple[SphereScalar, SphereScalar, SphereScalar]
    Xi_m1: tuple[SphereScalar, SphereScalar, SphereScalar]
    X0_0: SphereScalar
    X0_m1: SphereScalar
    observer: Observer
    obstruction_before: SphereScalar | None = None

    @property
    def grid(self) -> SphereGrid:
        return self.X0_0.grid

    def with_second_order(self, X0_m1=None, a_m1=None) -> "EmbeddingExpansion":
        obs = self.observer
        if a_m1 is not None:
            a_m1 = np.asarray(a_m1, dtype=float)
            obs = replace(obs, a_m1=a_m1, a0_m1=float(obs.a @ a_m1) / obs.a0)
        return replace(self, X0_m1=self.X0_m1 if X0_m1 is None else X0_m1, observer=obs)

    def position(self, r: float) -> np.ndarray:
        """X(r) at the nodes, shape (4, n)."""
        X = self.grid.unit_vectors
        out = np.empty((4, self.grid.size))
        out[0] = (self.X0_0 + self.X0_m1 / r).values
        for i in range(3):
            out[i + 1] = r * X[i] + (self.Xi_0[i] + self.Xi_m1[i] / r).values
        return out

    def round_laplacian(self, r: float) -> np.ndarray:
        """Lap~ X(r); the r X~^i part is applied exactly (eigenvalue -2)."""
        X = self.grid.unit_vectors
        out = np.empty((4, self.grid.size))
        out[0] = laplacian(self.X0_0 + self.X0_m1 / r).values
        for i in range(3):
            out[i + 1] = -2 * r * X[i] + laplacian(self.Xi_0[i] + self.Xi_m1[i] / r).values
        return out

    def tangents(self, r: float) -> np.ndarray:
        """dX/du^a, shape (2, 4, n)."""
        dX = self.grid.unit_vector_derivatives
        out = np.empty((2, 4, self.grid.size))
        g0 = gradient(self.X0_0 + self.X0_m1 / r)
        out[0, 0], out[1, 0] = g0.theta, g0.phi
        for i in range(3):
            gi = gradient(self.Xi_0[i] + self.Xi_m1[i] / r)
            out[0, i + 1] = r * dX[0, i] + gi.theta
            out[1, i + 1] = r * dX[1, i] + gi.phi
        return out


# -- leading-order solve ------------------------------------------------------


def _radial_solution(psi: SphereScalar, coords: CoordinateFunctions):
    return tuple(psi * coords[i] for i in range(3))


def _symmetric_pair(grid, Z):
    """(d_a X~ . d_b Z + d_a Z . d_b X~) as components (tt, tp, pp)."""
    dX = grid.unit_vector_derivatives
    gZ = [gradient(z) for z in Z]
    tt = sum(2 * dX[0, i] * gZ[i].theta for i in range(3))
    pp = sum(2 * dX[1, i] * gZ[i].phi for i in range(3))
    tp = sum(dX[0, i] * gZ[i].phi + dX[1, i] * gZ[i].theta for i in range(3))
    return np.stack([tt, tp, pp])


def _conformal_tensor(grid, s: SphereScalar):
    st2 = grid.sin_theta**2
    return np.stack([s.values, np.zeros(grid.size), s.values * st2])


def _tensor_norm(grid, T):
    # round-metric norm |T|^2 = T_tt^2 + 2 T_tp^2 / sin^2 + T_pp^2 / sin^4
    st2 = grid.sin_theta**2
    return float(np.sqrt(np.max(T[0] ** 2 + 2 * T[1] ** 2 / st2 + T[2] ** 2 / st2**2)))


def linearized_optimal_source(
    rho_m2: float, a, alpha_H_m1: SphereOneForm, coords: CoordinateFunctions
) -> SphereScalar:
    """div(rho tau1) - Lap(rho Lap tau1)/4 + div(alpha_H^(-1)) with tau1 = -a.X~."""
    tau1 = -coords.dot(a)
    src = divergence(gradient(tau1) * rho_m2) - laplacian(laplacian(tau1) * rho_m2) * 0.25
    return src + divergence(alpha_H_m1)


def _l1_coefficients(f: SphereScalar, coords: CoordinateFunctions) -> np.ndarray:
    """Components k of f's l=1 part written as sum_k v_k X~^k."""
    return np.array([integrate(f * coords[k]) for k in range(3)]) * 3 / (4 * np.pi)


def solve_leading_embedding(
    data: HarmonicAsymptotics,
    completion: ExpansionCompletion | None,
    grid: SphereGrid,
    *,
    alpha_H_m1: SphereOneForm | None = None,
    h_m2: float | None = None,
    tol: float = 1e-8,
) -> EmbeddingExpansion:
    """Leading orders of the optimal isometric embedding and the limiting observer.

    The observer velocity is obtained by imposing solvability (vanishing l=1
    obstruction) on the linearised optimal embedding equation, not inserted by hand.
    """
    coords = grid.coordinates()
    if data.is_flat:
        zero = grid.constant(0.0)
        Xi = (zero, zero, zero)
        return EmbeddingExpansion(data, coords, Xi, Xi, zero, zero, Observer(1.0, np.zeros(3)))
    A = data.A
    X = grid.unit_vectors
    u2 = grid.scalar(u2_profile(data, X)) if completion is None else completion.u_m2

    # sigma = u^4 r^2 sigma~ = r^2 sigma~ + r sigma1 + sigma0 + ...
    s1 = grid.constant(4 * A)
    s0 = u2 * 4 + 6 * A**2

    Xi_0 = _radial_solution(s1 * 0.5, coords)
    res1 = _symmetric_pair(grid, Xi_0) - _conformal_tensor(grid, s1)
    if _tensor_norm(grid, res1) > tol:
        raise ConsistencyError("first-order isometric embedding equation not satisfied")

    h0_m2 = -sum(coords[i] * laplacian(Xi_0[i]) for i in range(3)) - s1 * 2
    if h_m2 is None:
        h_m2 = -8 * A
    if alpha_H_m1 is None:
        alpha_H_m1 = gradient(coords.dot(data.B)) * 1.5
    rho_a0 = h0_m2 - h_m2  # = a0 * rho^(-2)
    if np.ptp(rho_a0.values) > tol:
        raise ConsistencyError("h0^(-2) - h^(-2) is not constant")
    rho_a0 = float(np.mean(rho_a0.values))

    # rho^(-2) tau^(1) = -(rho_a0) v.X~ with v = a/a0: the obstruction is affine in v
    def obstruction(v):
        return _l1_coefficients(linearized_optimal_source(rho_a0, v, alpha_H_m1, coords), coords)

    o0 = obstruction(np.zeros(3))
    M = np.stack([obstruction(e) - o0 for e in np.eye(3)], axis=1)
    v = np.linalg.solve(M, -o0)
    observer = Observer.from_velocity(v)

    src = linearized_optimal_source(rho_a0 / observer.a0, observer.a, alpha_H_m1, coords)
    X0_0, kernel = solve_laplacian_polynomial([0.0, 2.0, 1.0], src * 2)
    if kernel.sup() > tol:
        raise ConsistencyError(f"linearised optimal equation unsolvable: obstruction {kernel.sup():.3e}")

    # second-order isometric equation with conformal right-hand side
    g0 = gradient(X0_0)
    dZ = [gradient(z) for z in Xi_0]
    quad = np.stack(
        [
            sum(dZ[i].theta ** 2 for i in range(3)),
            sum(dZ[i].theta * dZ[i].phi for i in range(3)),
            sum(dZ[i].phi ** 2 for i in range(3)),
        ]
    )
    rhs = _conformal_tensor(grid, s0) + np.stack([g0.theta**2, g0.theta * g0.phi, g0.phi**2]) - quad
    st2 = grid.sin_theta**2
    half_trace = grid.scalar(0.5 * (rhs[0] + rhs[2] / st2))
    if _tensor_norm(grid, rhs - _conformal_tensor(grid, half_trace)) > tol:
        raise GeometryError("second-order isometric equation has a non-conformal source")
    Xi_m1 = _radial_solution(half_trace * 0.5, coords)
    res2 = _symmetric_pair(grid, Xi_m1) - _conformal_tensor(grid, half_trace)
    if _tensor_norm(grid, res2) > tol * (1 + half_trace.sup()):
        raise ConsistencyError("second-order isometric embedding equation not satisfied")

    obstruction_before = grid.scalar(np.zeros(grid.size)) + coords.dot(o0)
    return EmbeddingExpansion(
        data, coords, Xi_0, Xi_m1, X0_0, grid.constant(0.0), observer, obstruction_before
    )


def linearized_optimal_obstruction(data, velocity, grid, alpha_H_m1=None) -> SphereScalar:
    """l=1 part of the linearised optimal equation for observer velocity a/a0."""
    coords = grid.coordinates()
    if alpha_H_m1 is None:
        alpha_H_m1 = gradient(coords.dot(data.B)) * 1.5
    src = linearized_optimal_source(4 * data.A, np.asarray(velocity, float), alpha_H_m1, coords)
    return degree_projection(src, 1)


# -- finite-r reference geometry --------------------------------------------------


@dataclass(frozen=True)
class ReferenceGeometry:
    r: float
    H0_norm: SphereScalar
    alpha_H0: SphereOneForm
    position: np.ndarray
    tangents: np.ndarray
    round_laplacian: np.ndarray
    e3: np.ndarray
    e4: np.ndarray


def _u_on_sphere(data, r, grid):
    if data.is_flat:
        return np.ones(grid.size)
    return evaluate_many(data, r * grid.unit_vectors.T).u


def reference_geometry(emb: EmbeddingExpansion, r: float, grid: SphereGrid | None = None) -> ReferenceGeometry:
    """|H0| and alpha_H0 of X(r) in R^{3,1}, with the Laplacian of sigma = u^4 r^2 sigma~."""
    grid = emb.grid if grid is None else grid
    u = _u_on_sphere(emb.data, r, grid)
    Xr = emb.position(r)
    lapX = emb.round_laplacian(r)
    T = emb.tangents(r)
    H = lapX / (u**4 * r**2)

    gam = np.stack(
        [[minkowski(T[a], T[b]) for b in range(2)] for a in range(2)]
    )  # (2, 2, n)
    det = gam[0, 0] * gam[1, 1] - gam[0, 1] ** 2
    if np.any(det <= 0):
        raise GeometryError(f"degenerate induced metric at r={r}")
    ginv = np.stack([[gam[1, 1], -gam[0, 1]], [-gam[1, 0], gam[0, 0]]]) / det

    def normal_part(V):
        proj = np.array([minkowski(V, T[a]) for a in range(2)])
        coef = np.einsum("abn,bn->an", ginv, proj)
        return V - np.einsum("an,aJn->Jn", coef, T)

    HN = normal_part(H)
    H2 = minkowski(HN, HN)
    if np.any(H2 <= 0):
        raise GeometryError(f"reference mean curvature not spacelike at r={r}")
    Hn = np.sqrt(H2)
    e3 = -HN / Hn
    E0 = np.zeros_like(HN)
    E0[0] = 1.0
    n = normal_part(E0)
    n = n - minkowski(n, e3) * e3
    nn = minkowski(n, n)
    if np.any(nn >= 0):
        raise GeometryError("no timelike normal")
    e4 = n / np.sqrt(-nn)
    e4 = e4 * np.sign(e4[0])

    de3 = [gradient(grid.scalar(e3[k])) for k in range(4)]
    d_theta = np.stack([d.theta for d in de3])
    d_phi = np.stack([d.phi for d in de3])
    alpha = SphereOneForm(grid, minkowski(d_theta, e4), minkowski(d_phi, e4))
    return ReferenceGeometry(float(r), grid.scalar(Hn), alpha, Xr, T, lapX, e3, e4)


# -- rho and j ---------------------------------------------------------------


@dataclass(frozen=True)
class TauData:
    tau: SphereScalar
    dtau: SphereOneForm
    lap_tau: SphereScalar  # Laplacian of sigma
    grad2: SphereScalar  # |grad tau|^2_sigma
    conformal: SphereScalar  # u^4 r^2


def tau_data(emb: EmbeddingExpansion, ref: ReferenceGeometry, surface: SurfaceData, T0) -> TauData:
    grid = emb.grid
    r = ref.r
    T0 = np.asarray(T0, dtype=float)
    Tc = T0.copy()
    Tc[0] = -T0[0]
    # tau = -<X, T0> = X^0 T^0 - X.T
    tau = -np.einsum("k,kn->n", Tc, ref.position)
    lap_t = -np.einsum("k,kn->n", Tc, ref.round_laplacian)
    dt = -np.einsum("k,akn->an", Tc, ref.tangents)
    phi = surface.sigma.values * r**2
    dtau = SphereOneForm(grid, dt[0], dt[1])
    grad2 = dtau.dot(dtau).values / phi
    return TauData(grid.scalar(tau), dtau, grid.scalar(lap_t / phi), grid.scalar(grad2), grid.scalar(phi))


def rho_j_at(surface: SurfaceData, ref: ReferenceGeometry, emb: EmbeddingExpansion, T0=None):
    """rho and j on Sigma_r for the pair (X(r), T0(r)); returns (rho, j, TauData)."""
    r = ref.r
    if T0 is None:
        T0 = emb.observer.at(r)
    td = tau_data(emb, ref, surface, T0)
    H0 = ref.H0_norm.values
    H = surface.H_norm.values
    s = 1 + td.grad2.values
    Q = td.lap_tau.values**2 / s
    a0 = np.sqrt(H0**2 + Q)
    a1 = np.sqrt(H**2 + Q)
    rho = (H0 - H) * (H0 + H) / ((a0 + a1) * np.sqrt(s))
    grid = emb.grid
    rho_f = grid.scalar(rho)
    twist = grid.scalar(np.arcsinh(rho * td.lap_tau.values / (H0 * H)))
    j = td.dtau * rho_f - gradient(twist) - ref.alpha_H0 + surface.alpha_H
    return rho_f, j, td


@dataclass(frozen=True)
class RhoJ:
    rho_m2: SphereScalar
    rho_m3: SphereScalar
    j_m1: SphereOneForm
    j_m2: SphereOneForm
    fit_residual: float = 0.0


def _fit_fields(radii, samples, orders):
    if isinstance(samples[0], SphereOneForm):
        stack = np.stack([np.stack([s.theta, s.phi]) for s in samples])
        coefs, res = fit_power_series(radii, stack, orders)
        g = samples[0].grid
        return [SphereOneForm(g, c[0], c[1]) for c in coefs], res
    stack = np.stack([s.values for s in samples])
    coefs, res = fit_power_series(radii, stack, orders)
    g = samples[0].grid
    return [g.scalar(c) for c in coefs], res


def rho_j(data, completion, emb, radii, n_orders: int | None = None) -> RhoJ:
    """Expansion coefficients of rho and j fitted from finite-radius evaluations."""
    grid = emb.grid
    radii = np.asarray(radii, dtype=float)
    if n_orders is None:
        n_orders = len(radii)
    rhos, js = [], []
    for r in radii:
        surf = surface_data(data, completion, r, grid) if not data.is_flat else _flat_surface(r, grid)
        ref = reference_geometry(emb, r)
        rho, j, _ = rho_j_at(surf, ref, emb)
        rhos.append(rho)
        js.append(j)
    rc, res1 = _fit_fields(radii, rhos, list(range(-2, -2 - n_orders, -1)))
    jc, res2 = _fit_fields(radii, js, list(range(-1, -1 - n_orders, -1)))
    return RhoJ(rc[0], rc[1], jc[0], jc[1], max(res1, res2))


def _flat_surface(r, grid):
    one = grid.constant(1.0)
    return SurfaceData(
        float(r), one, grid.constant(2.0 / r), SphereOneForm.zeros(grid), grid.constant(2.0 / r),
        grid.constant(0.0), one,
    )


# -- closed forms -----------------------------------------------------------


def rho_m3_closed_form(data: HarmonicAsymptotics, observer: Observer, grid: SphereGrid) -> SphereScalar:
    coords = grid.coordinates()
    a0, a = observer.a0, observer.a
    B, A = data.B, data.A
    g = coords.dot(B)
    ax = coords.dot(a)
    inner = (g * g) * (9 / 16) + coords.dot(data.c) * 12 - (19 / 16 * (B @ B) + 12 * A**2)
    return (inner * a0**2 - ax * ax * 4 * A**2 - 4 * A * float(a @ observer.a_m1)) / a0**3


def alpha_H_m2_closed_form(data: HarmonicAsymptotics, grid: SphereGrid) -> SphereOneForm:
    """A d(B.X~) + 3 Y2_i dX~^i + (1/2) d(grad Y2_i . grad X~^i), with this package's Y2."""
    from .initial_data import Y2_profile

    coords = grid.coordinates()
    Y2 = [grid.scalar(row) for row in Y2_profile(data, grid.unit_vectors)]
    out = gradient(coords.dot(data.B)) * data.A
    dot = grid.constant(0.0)
    for i in range(3):
        out = out + gradient(coords[i]) * Y2[i] * 3
        dot = dot + gradient(Y2[i]).dot(gradient(coords[i]))
    return out + gradient(dot) * 0.5


def alpha_H0_m2(X0_m1: SphereScalar) -> SphereOneForm:
    return gradient(X0_m1 + laplacian(X0_m1) * 0.5)


def j_m2_closed_form(data: HarmonicAsymptotics, emb: EmbeddingExpansion, alpha_H_m2=None) -> SphereOneForm:
    grid = emb.grid
    coords = grid.coordinates()
    A, B = data.A, data.B
    a0 = emb.observer.a0
    am1 = emb.observer.a_m1
    g = coords.dot(B)
    dg = gradient(g)
    cx = coords.dot(data.c)
    coef = 0.5 * A + 57 / (128 * A) * (B @ B) + 3 / (8 * A * a0) * float(B @ am1)
    j = dg * coef
    j = j - dg * (g * g) * (25 / (128 * A))
    j = j - dg * cx * (9 / (2 * A))
    j = j - gradient(coords.dot(am1)) * (6 * A / a0)
    j = j - gradient(cx) * g * (3 / (2 * A))
    if alpha_H_m2 is None:
        alpha_H_m2 = alpha_H_m2_closed_form(data, grid)
    return j - alpha_H0_m2(emb.X0_m1) + alpha_H_m2


def solve_second_order(emb: EmbeddingExpansion, j_m2_base: SphereOneForm, a_response, *, tol=1e-8):
    """Choose a^(-1) and (X^0)^(-1) so that j^(-2) becomes divergence free.

    ``j_m2_base`` is j^(-2) with both unknowns zero; ``a_response[k]`` is the change of
    j^(-2) per unit a_k^(-1).  (X^0)^(-1) enters as -d(X0 + Lap X0 / 2).
    Returns (updated expansion, divergence-free j^(-2)).
    """
    grid = emb.grid
    coords = grid.coordinates()
    div0 = divergence(j_m2_base)
    resp = [divergence(w) for w in a_response]
    M = np.stack([_l1_coefficients(d, coords) for d in resp], axis=1)
    a_m1 = np.linalg.solve(M, -_l1_coefficients(div0, coords))
    j = j_m2_base
    for k in range(3):
        j = j + a_response[k] * a_m1[k]
    X0_m1, kernel = solve_laplacian_polynomial([0.0, 1.0, 0.5], divergence(j))
    if kernel.sup() > tol:
        raise ConsistencyError(f"second-order optimal equation unsolvable: {kernel.sup():.3e}")
    j = j - alpha_H0_m2(X0_m1)
    return emb.with_second_order(X0_m1=X0_m1, a_m1=a_m1), j


def second_order_closed(data, emb):
    """Second-order solve driven by the closed-form j^(-2)."""
    base = j_m2_closed_form(data, emb.with_second_order(X0_m1=emb.grid.constant(0.0), a_m1=np.zeros(3)))
    resp = []
    for e in np.eye(3):
        shifted = j_m2_closed_form(data, emb.with_second_order(X0_m1=emb.grid.constant(0.0), a_m1=e))
        resp.append(shifted - base)
    return solve_second_order(emb, base, resp)


def second_order_numeric(data, completion, emb, radii):
    """Second-order solve driven by j^(-2) fitted from finite-radius evaluations."""
    zero = emb.grid.constant(0.0)
    base_emb = emb.with_second_order(X0_m1=zero, a_m1=np.zeros(3))
    base = rho_j(data, completion, base_emb, radii).j_m2
    resp = []
    for e in np.eye(3):
        jk = rho_j(data, completion, base_emb.with_second_order(a_m1=e), radii).j_m2
        resp.append(jk - base)
    return solve_second_order(base_emb, base, resp)


# -- quasi-local energy and the optimal-embedding residual -----------------------


def _projected_surface(ref: ReferenceGeometry, T0):
    """Coordinates of the projection of X(Sigma) onto T0-perp in an orthonormal frame."""
    from .conserved import boost_matrix

    L = boost_matrix(T0)
    Linv = np.linalg.inv(L)
    y = Linv @ ref.position
    return y[1:]


def _surface_second_forms(grid, y):
    """Induced metric, unit normal, second fundamental form of a surface y(u) in R^3."""
    ys = [grid.scalar(y[i]) for i in range(3)]
    grads = [gradient(s) for s in ys]
    yt = np.stack([gr.theta for gr in grads])
    yp = np.stack([gr.phi for gr in grads])
    sec = [second_partials(s) for s in ys]
    ytt = np.stack([s[0] for s in sec])
    ytp = np.stack([s[1] for s in sec])
    ypp = np.stack([s[2] for s in sec])
    E = np.sum(yt * yt, 0)
    F = np.sum(yt * yp, 0)
    G = np.sum(yp * yp, 0)
    nrm = np.cross(yt.T, yp.T).T
    area = np.sqrt(np.sum(nrm * nrm, 0))
    if np.any(area <= 0):
        raise GeometryError("projected surface is not immersed")
    nrm = nrm / area
    # outward: along the position for a near-round surface
    nrm = nrm * np.sign(np.sum(nrm * y, 0))
    L_ = np.sum(ytt * nrm, 0)
    M_ = np.sum(ytp * nrm, 0)
    N_ = np.sum(ypp * nrm, 0)
    return (E, F, G), (L_, M_, N_), area


def quasi_local_energy(surface: SurfaceData, emb: EmbeddingExpansion, T0=None, ref=None) -> float:
    """E(Sigma, X, T0) without the 1/(8 pi) factor."""
    grid = emb.grid
    r = surface.r
    if ref is None:
        ref = reference_geometry(emb, r)
    if T0 is None:
        T0 = emb.observer.at(r)
    y = _projected_surface(ref, T0)
    (E, F, G), (L_, M_, N_), area = _surface_second_forms(grid, y)
    det = E * G - F * F
    Hhat = -(G * L_ - 2 * F * M_ + E * N_) / det
    st = grid.sin_theta
    ref_term = integrate(grid.scalar(Hhat * area / st))

    td = tau_data(emb, ref, surface, T0)
    s = 1 + td.grad2.values
    H = surface.H_norm.values
    theta = np.arcsinh(-td.lap_tau.values / (H * np.sqrt(s)))
    dtheta = gradient(grid.scalar(theta))
    phi = td.conformal.values
    grad_dot = td.dtau.dot(dtheta).values / phi
    alpha_dtau = surface.alpha_H.dot(td.dtau).values / phi
    integrand = np.sqrt(s) * np.cosh(theta) * H - grad_dot - alpha_dtau
    phys_term = integrate(grid.scalar(integrand * phi))
    return ref_term - phys_term


def optimal_residual(surface: SurfaceData, emb: EmbeddingExpansion, T0=None, ref=None) -> SphereScalar:
    """Left side of the optimal isometric embedding equation on Sigma_r."""
    grid = emb.grid
    r = surface.r
    if ref is None:
        ref = reference_geometry(emb, r)
    if T0 is None:
        T0 = emb.observer.at(r)
    y = _projected_surface(ref, T0)
    (E, F, G), (L_, M_, N_), _ = _surface_second_forms(grid, y)
    det = E * G - F * F
    gi = np.stack([G, -F, E]) / det  # (tt, tp, pp) of sigma-hat inverse
    Hhat = -(gi[0] * L_ + 2 * gi[1] * M_ + gi[2] * N_)
    # h-hat with the sign convention making H-hat = tr h-hat
    h = -np.stack([L_, M_, N_])

    td = tau_data(emb, ref, surface, T0)
    phi = td.conformal.values
    # Hessian of tau for sigma = phi sigma~ (conformal to the round metric)
    tau_f = td.tau
    tt, tp, pp = second_partials(tau_f)
    dth, dph = td.dtau.theta, td.dtau.phi
    st, ct = grid.sin_theta, np.cos(grid.theta)
    w = grid.scalar(0.5 * np.log(phi))
    dw = gradient(w)
    # round Christoffels: G^t_pp = -s c, G^p_tp = c/s
    hess_tt = tt
    hess_tp = tp - ct / st * dph
    hess_pp = pp + st * ct * dth
    wdt = dw.theta * dth + dw.phi * dph / st**2
    hess_tt = hess_tt - (2 * dw.theta * dth - wdt)
    hess_tp = hess_tp - (dw.theta * dph + dw.phi * dth)
    hess_pp = hess_pp - (2 * dw.phi * dph - wdt * st**2)

    # (H-hat sigma-hat^{ab} - sigma-hat^{ac} sigma-hat^{bd} h_cd) Hess_ab
    def raise2(T):
        # returns sigma-hat^{ac} sigma-hat^{bd} T_cd as (tt, tp, pp)
        Gm = np.array([[gi[0], gi[1]], [gi[1], gi[2]]])
        Tm = np.array([[T[0], T[1]], [T[1], T[2]]])
        R = np.einsum("acn,cdn,bdn->abn", Gm, Tm, Gm)
        return np.stack([R[0, 0], R[0, 1], R[1, 1]])

    hup = raise2(h)
    Mtt = Hhat * gi[0] - hup[0]
    Mtp = Hhat * gi[1] - hup[1]
    Mpp = Hhat * gi[2] - hup[2]
    s = 1 + td.grad2.values
    first = -(Mtt * hess_tt + 2 * Mtp * hess_tp + Mpp * hess_pp) / np.sqrt(s)

    H = surface.H_norm.values
    theta = np.arcsinh(-td.lap_tau.values / (H * np.sqrt(s)))
    coef = grid.scalar(np.cosh(theta) * H / np.sqrt(s))
    V = td.dtau * coef - gradient(grid.scalar(theta)) - surface.alpha_H
    second = divergence(V).values / phi
    return grid.scalar(first + second)
