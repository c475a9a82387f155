"""ADM, BORT and CWY total conserved quantities: closed forms and numerical limits."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .initial_data import ExpansionCompletion, HarmonicAsymptotics, evaluate_many
from .reference import (
    EmbeddingExpansion,
    Observer,
    minkowski,
    reference_geometry,
    rho_j,
    rho_j_at,
    second_order_numeric,
    solve_leading_embedding,
)
from .series import Extrapolation, extrapolate
from .sphere import SphereGrid, SphereOneForm, SphereScalar, gradient, integrate
from .surface import surface_data

__all__ = [
    "ObserverValidationError",
    "ConservedReport",
    "LEVI_CIVITA",
    "boost_matrix",
    "boost_from_observer",
    "adm_closed_form",
    "adm_integrals_at",
    "adm_quantities",
    "energy_momentum_from_quasi_local",
    "cwy_closed_form",
    "killing_field",
    "killing_tangential",
    "cwy_integrals_at",
    "reduced_integrals",
    "reduced_closed_form",
    "cwy_from_reduced",
    "cwy_numeric",
    "conserved_report",
]

LEVI_CIVITA = np.zeros((3, 3, 3))
for _i, _j, _k in [(0, 1, 2), (1, 2, 0), (2, 0, 1)]:
    LEVI_CIVITA[_i, _j, _k] = 1.0
    LEVI_CIVITA[_i, _k, _j] = -1.0

# generators of J_i: (j, k) with j < k and their epsilon weight
_ROTATION_PAIRS = {0: (1, 2, 1.0), 1: (0, 2, -1.0), 2: (0, 1, 1.0)}


class ObserverValidationError(ValueError):
    pass


def boost_matrix(T0) -> np.ndarray:
    """Canonical boost taking (1,0,0,0) to the unit timelike vector ``T0``."""
    T0 = np.asarray(T0, dtype=float)
    a0, a = T0[0], T0[1:]
    L = np.empty((4, 4))
    L[0, 0] = a0
    L[0, 1:] = a
    L[1:, 0] = a
    L[1:, 1:] = np.eye(3) + np.outer(a, a) / (1 + a0)
    return L


def boost_from_observer(obs: Observer, tol: float = 1e-12) -> np.ndarray:
    if obs.a0 <= 0 or obs.norm_defect > tol:
        raise ObserverValidationError(
            f"observer is not a future unit timelike vector (a0^2 - |a|^2 - 1 = {obs.a0**2 - obs.a @ obs.a - 1:.3e})"
        )
    return boost_matrix(obs.vector)


# -- ADM / BORT ------------------------------------------------------------


def adm_closed_form(data: HarmonicAsymptotics):
    """(E, P, C_BORT, J_ADM) = (2A, B/2, 2c, eps d / 2)."""
    J = 0.5 * np.einsum("ijk,jk->i", LEVI_CIVITA, data.d)
    return 2 * data.A, data.B / 2, 2 * data.c, J


def adm_integrals_at(data: HarmonicAsymptotics, r: float, grid: SphereGrid) -> np.ndarray:
    """The four flux integrals on Sigma_r, packed as [E, P1..3, C1..3, J1..3].

    nu = u^-2 X~ and dSigma = u^4 r^2 dS~.  The BORT boundary term uses g - delta.
    The momentum flux carries the sign that makes the quasi-local energy limit
    equal a0 E - a.P for every observer (see ``energy_momentum_from_quasi_local``).
    """
    X = grid.unit_vectors
    if data.is_flat:
        return np.zeros(10)
    b = evaluate_many(data, r * X.T)
    u = b.u
    ur = np.einsum("ni,in->n", b.du, X)
    area = u**4 * r**2
    out = np.empty(10)
    # (d_j g_ij - d_i g_jj) nu^i = -8 u u_r
    flux = -8 * u * ur
    out[0] = integrate(grid.scalar(flux * area)) / (16 * np.pi)
    k = b.k
    kX = np.einsum("nij,jn->in", k, X)
    trk_g = np.einsum("nii->n", k) / u**4
    for i in range(3):
        pi_nu = (kX[i] - u**4 * trk_g * X[i]) / u**2
        out[1 + i] = -integrate(grid.scalar(pi_nu * area)) / (8 * np.pi)
        bort = r * X[i] * flux + 2 * (u**4 - 1) * X[i] / u**2
        out[4 + i] = integrate(grid.scalar(bort * area)) / (16 * np.pi)
    for i in range(3):
        # Y_(i) = e_i x x: Y^j = eps_{jib} x^b; the trace part drops since Y.nu = 0
        Y = r * np.einsum("jb,bn->jn", LEVI_CIVITA[:, i, :], X)
        integrand = np.sum(Y * kX, axis=0) / u**2
        out[7 + i] = integrate(grid.scalar(integrand * area)) / (8 * np.pi)
    return out


def _unpack(v):
    return v[0], v[1:4], v[4:7], v[7:10]


def adm_quantities(data, completion, radii, grid, degree=None):
    """Extrapolated (E, P, C_BORT, J_ADM), their error estimates and the per-radius table."""
    table = np.stack([adm_integrals_at(data, r, grid) for r in radii])
    ex = extrapolate(radii, table, degree)
    return _unpack(ex.value), _unpack(ex.error), table


def energy_momentum_from_quasi_local(data, completion, emb, radii, velocities):
    """(E, P) from the limits of E(Sigma_r, X, T0)/(8 pi) over several observers.

    The limit is a0 E - a.P for every fixed unit timelike T0 = (a0, a), so a
    least-squares fit over at least four observers recovers the ADM vector.
    """
    from .reference import quasi_local_energy

    grid = emb.grid
    rows, limits = [], []
    for v in velocities:
        obs = Observer.from_velocity(v)
        vals = [
            quasi_local_energy(surface_data(data, completion, r, grid), emb, T0=obs.vector) / (8 * np.pi)
            for r in radii
        ]
        limits.append(float(extrapolate(radii, np.array(vals)).value))
        rows.append(np.concatenate([[obs.a0], -obs.a]))
    sol, *_ = np.linalg.lstsq(np.array(rows), np.array(limits), rcond=None)
    return sol[0], sol[1:]


# -- CWY closed form ----------------------------------------------------------


def cwy_closed_form(data: HarmonicAsymptotics, obs: Observer, boost=None, tol: float = 1e-9):
    """C_CWY and J_CWY from (A, B, c, d) and the limiting observer."""
    if data.is_flat:
        return np.zeros(3), np.zeros(3)
    if boost is None:
        boost = boost_from_observer(obs)
    A, B, c, d = data.A, data.B, data.c, data.d
    if np.max(np.abs(obs.a / obs.a0 - B / (4 * A))) > tol:
        raise ObserverValidationError("observer inconsistent with the data: a/a0 must equal B/(4A)")
    cB = np.outer(c, B) - np.outer(B, c)  # c_i B_j - c_j B_i
    asym = d - d.T
    A0 = boost[0, 1:]
    C = 2 * c / obs.a0 + cB @ A0 / (4 * A) + asym @ A0 / 4
    Akl = boost[1:, 1:]
    # (c_j B_l - c_l B_j)/A + (d_jl - d_lj), contracted with A_kl and eps_ijk / 4
    F = cB / A + asym
    J = 0.25 * np.einsum("ijk,kl,jl->i", LEVI_CIVITA, Akl, F)
    return C, J


# -- Killing fields --------------------------------------------------------------


def killing_field(kind: str, index, boost: np.ndarray, x: np.ndarray, conjugate: bool = False) -> np.ndarray:
    """Boosted boost/rotation generator evaluated at points ``x`` (shape (4, n)).

    kind "boost", index i:        x^i (L e_0) + x^0 (L e_i)
    kind "rotation", index (j,k): x^j (L e_k) - x^k (L e_j)
    By default the coefficients are the standard coordinates of the point; with
    ``conjugate`` they are the coordinates of L^-1 x, which is the exact pushforward.
    """
    x = np.asarray(x, dtype=float)
    if conjugate:
        x = np.linalg.solve(boost, x)
    L = boost
    if kind == "boost":
        i = int(index) + 1
        return np.outer(L[:, 0], x[i]) + np.outer(L[:, i], x[0])
    if kind == "rotation":
        j, k = (int(index[0]) + 1, int(index[1]) + 1)
        return np.outer(L[:, k], x[j]) - np.outer(L[:, j], x[k])
    raise ValueError(f"unknown Killing field kind {kind!r}")


def killing_tangential(K: np.ndarray, tangents: np.ndarray, T0, grid: SphereGrid):
    """(<K, T0>, pullback one-form <K, dX/du^a>)."""
    T0 = np.asarray(T0, dtype=float)
    KT = minkowski(K, T0[:, None])
    pull = SphereOneForm(grid, minkowski(K, tangents[0]), minkowski(K, tangents[1]))
    return grid.scalar(KT), pull


def _conserved_integral(rho, j, KT, pull, phi):
    """-(1/8pi) int [<K,T0> rho + j(K^T)] dSigma with sigma = phi sigma~."""
    integrand = KT * rho * phi + j.dot(pull)
    return -integrate(integrand) / (8 * np.pi)


def cwy_integrals_at(data, completion, emb: EmbeddingExpansion, r: float, boost=None, conjugate=False):
    """Quasi-local center and angular momentum integrals on Sigma_r, packed [C1..3, J1..3]."""
    grid = emb.grid
    if boost is None:
        boost = boost_from_observer(emb.observer)
    if data.is_flat:
        from .reference import _flat_surface

        surf = _flat_surface(r, grid)
    else:
        surf = surface_data(data, completion, r, grid)
    ref = reference_geometry(emb, r)
    T0 = emb.observer.at(r)
    rho, j, td = rho_j_at(surf, ref, emb, T0)
    phi = td.conformal
    out = np.empty(6)
    for i in range(3):
        K = killing_field("boost", i, boost, ref.position, conjugate)
        KT, pull = killing_tangential(K, ref.tangents, T0, grid)
        out[i] = _conserved_integral(rho, j, KT, pull, phi)
    for i, (a, b, eps) in _ROTATION_PAIRS.items():
        K = killing_field("rotation", (a, b), boost, ref.position, conjugate)
        KT, pull = killing_tangential(K, ref.tangents, T0, grid)
        out[3 + i] = eps * _conserved_integral(rho, j, KT, pull, phi)
    return out


# -- reduced integrals --------------------------------------------------------


def reduced_integrals(rho_m3: SphereScalar, j_m2: SphereOneForm):
    """(1/8pi) int X~^k rho^(-3) and I_kl = (1/8pi) int X~^k grad X~^l . j^(-2)."""
    grid = rho_m3.grid
    coords = grid.coordinates()
    R = np.array([integrate(coords[k] * rho_m3) for k in range(3)]) / (8 * np.pi)
    I = np.array(
        [[integrate(coords[k] * j_m2.dot(gradient(coords[l]))) for l in range(3)] for k in range(3)]
    ) / (8 * np.pi)
    return R, I


def reduced_closed_form(data: HarmonicAsymptotics, obs: Observer):
    """2c/a0 and (c_l B_k - c_k B_l)/(4A) + (d_lk - d_kl)/4."""
    c, B, d = data.c, data.B, data.d
    I = (np.outer(B, c) - np.outer(c, B)) / (4 * data.A) + (d.T - d) / 4
    return 2 * c / obs.a0, I


def cwy_from_reduced(R, I, boost):
    """Assemble C_CWY and J_CWY from the two reduced integrals."""
    a = boost[0, 1:]
    C = R - I @ a
    J = -np.einsum("ijk,kl,jl->i", LEVI_CIVITA, boost[1:, 1:], I)
    return C, J


@dataclass(frozen=True)
class CWYNumeric:
    C: np.ndarray
    J: np.ndarray
    C_error: np.ndarray
    J_error: np.ndarray
    per_radius: np.ndarray
    reduced_rho: np.ndarray
    reduced_j: np.ndarray
    embedding: EmbeddingExpansion


def prepare_embedding(data, completion, grid, radii) -> EmbeddingExpansion:
    """Leading optimal embedding plus the second-order terms fitted from finite radii."""
    emb = solve_leading_embedding(data, completion, grid)
    if data.is_flat:
        return emb
    emb, _ = second_order_numeric(data, completion, emb, radii)
    return emb


def cwy_numeric(data, completion, radii, grid, *, emb=None, degree=None, conjugate=False) -> CWYNumeric:
    """CWY center and angular momentum as extrapolated limits of the quasi-local integrals."""
    radii = np.asarray(radii, dtype=float)
    if emb is None:
        emb = prepare_embedding(data, completion, grid, radii)
    boost = boost_from_observer(emb.observer)
    table = np.stack([cwy_integrals_at(data, completion, emb, r, boost, conjugate) for r in radii])
    ex = extrapolate(radii, table, degree)
    rj = rho_j(data, completion, emb, radii)
    R, I = reduced_integrals(rj.rho_m3, rj.j_m2)
    return CWYNumeric(ex.value[:3], ex.value[3:], ex.error[:3], ex.error[3:], table, R, I, emb)


# -- report ---------------------------------------------------------------------


QUANTITIES = ("E", "P", "C_BORT", "J_ADM", "C_CWY", "J_CWY")


@dataclass(frozen=True)
class ConservedReport:
    E: float
    P: np.ndarray
    C_BORT: np.ndarray
    J_ADM: np.ndarray
    C_CWY: np.ndarray
    J_CWY: np.ndarray
    radii: np.ndarray
    per_radius: dict = field(default_factory=dict)
    extrapolated: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    closed_form: dict = field(default_factory=dict)

    def discrepancy(self, name: str) -> float:
        return float(np.max(np.abs(np.atleast_1d(self.extrapolated[name]) - np.atleast_1d(self.closed_form[name]))))

    def consistent(self, name: str, floor: float = 1e-6) -> bool:
        """Closed form within the error estimate (or an absolute floor for exact limits)."""
        err = float(np.max(np.atleast_1d(self.errors[name])))
        return self.discrepancy(name) <= max(err, floor)


def conserved_report(data, completion, radii, grid, *, emb=None) -> ConservedReport:
    radii = np.asarray(radii, dtype=float)
    (E, P, C, J), errs, adm_table = adm_quantities(data, completion, radii, grid)
    cwy = cwy_numeric(data, completion, radii, grid, emb=emb)
    closed_adm = adm_closed_form(data)
    closed_cwy = cwy_closed_form(data, cwy.embedding.observer)
    per = {
        "E": adm_table[:, 0],
        "P": adm_table[:, 1:4],
        "C_BORT": adm_table[:, 4:7],
        "J_ADM": adm_table[:, 7:10],
        "C_CWY": cwy.per_radius[:, :3],
        "J_CWY": cwy.per_radius[:, 3:],
    }
    ext = dict(zip(QUANTITIES, (E, P, C, J, cwy.C, cwy.J)))
    err = dict(zip(QUANTITIES, (*errs, cwy.C_error, cwy.J_error)))
    closed = dict(zip(QUANTITIES, (*closed_adm, *closed_cwy)))
    return ConservedReport(float(E), P, C, J, cwy.C, cwy.J, radii, per, ext, err, closed)
