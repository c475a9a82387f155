"""Geometric data (sigma, |H|, alpha_H) of coordinate spheres in conformally flat data."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .initial_data import ExpansionCompletion, HarmonicAsymptotics, evaluate_many
from .series import ExpansionSeries, extract_series
from .sphere import SphereGrid, SphereOneForm, SphereScalar

__all__ = ["SurfaceData", "NonSpacelikeMeanCurvature", "surface_data", "surface_series"]


class NonSpacelikeMeanCurvature(ArithmeticError):
    pass


@dataclass(frozen=True)
class SurfaceData:
    """Data of Sigma_r.  ``sigma`` is the conformal factor: sigma_ab = sigma * r^2 sigma~_ab."""

    r: float
    sigma: SphereScalar
    H_norm: SphereScalar
    alpha_H: SphereOneForm
    hbar: SphereScalar
    p: SphereScalar
    u: SphereScalar

    @property
    def grid(self) -> SphereGrid:
        return self.sigma.grid

    @property
    def area_density(self) -> SphereScalar:
        """sqrt(det sigma) / sqrt(det sigma~)."""
        return self.sigma * self.r**2


def _tangential(grid, r, vec):
    """r * dX~^j/du^a * vec_j for a 3D gradient ``vec`` of shape (n, 3)."""
    dX = grid.unit_vector_derivatives
    return r * np.einsum("ajn,nj->an", dX, vec)


def surface_data(
    data: HarmonicAsymptotics,
    completion: ExpansionCompletion | None,
    r: float,
    grid: SphereGrid,
) -> SurfaceData:
    X = grid.unit_vectors
    Xn = X.T
    b = evaluate_many(data, r * Xn)
    u, du, ddu = b.u, b.du, b.ddu
    if np.any(u <= 0):
        raise ValueError(f"u <= 0 on the sphere of radius {r}")
    ur = np.einsum("ni,ni->n", du, Xn)
    hbar = 2 / (r * u**2) + 4 * ur / u**3

    # tangential part of grad(hbar); terms along x drop out after projection
    x_ddu = np.einsum("nl,nlj->nj", Xn, ddu) * r
    grad_hbar = (
        -4 * du / (r * u**3)[:, None]
        - 12 * du * (ur / u**4)[:, None]
        + 4 * (du + x_ddu) / (r * u**3)[:, None]
    )

    eye = np.eye(3)
    div = np.einsum("nii->n", b.dY)
    S = b.dY + np.transpose(b.dY, (0, 2, 1)) - 0.5 * div[:, None, None] * eye
    k = b.k
    trk = np.einsum("nii->n", k)
    kXX = np.einsum("ni,nij,nj->n", Xn, k, Xn)
    p = (trk - kXX) / u**4

    # d_l k_ij
    ddiv = np.einsum("nmml->nl", b.ddY)
    dS = b.ddY + np.transpose(b.ddY, (0, 2, 1, 3)) - 0.5 * ddiv[:, None, None, :] * eye[None, :, :, None]
    dk = 2 * (u[:, None, None, None] * S[..., None] * du[:, None, None, :]) + (u**2)[:, None, None, None] * dS
    kX = np.einsum("nlj,nj->nl", k, Xn)
    grad_p = (
        -4 * du * ((trk - kXX) / u**5)[:, None]
        + (np.einsum("niil->nl", dk) - np.einsum("ni,nj,nijl->nl", Xn, Xn, dk) - 2 * kX / r) / (u**4)[:, None]
    )

    disc = hbar**2 - p**2
    if np.any(disc <= 0):
        i = int(np.argmin(disc))
        raise NonSpacelikeMeanCurvature(
            f"mean curvature not spacelike at r={r}, theta={grid.theta[i]:.4f}, phi={grid.phi[i]:.4f}"
        )
    H = np.sqrt(disc)
    dp = _tangential(grid, r, grad_p)
    dh = _tangential(grid, r, grad_hbar)
    k_ra = np.einsum("ni,nij,ajn->an", Xn, k, grid.unit_vector_derivatives) * r
    alpha = (hbar * dp - p * dh) / disc - k_ra / u**2
    return SurfaceData(
        float(r),
        grid.scalar(u**4),
        grid.scalar(H),
        SphereOneForm(grid, alpha[0], alpha[1]),
        grid.scalar(hbar),
        grid.scalar(p),
        grid.scalar(u),
    )


def surface_series(data, completion, radii, grid, *, field: str, orders) -> ExpansionSeries:
    """Sample ``field`` of SurfaceData on every radius and fit it in powers of r."""
    samples = [surface_data(data, completion, r, grid) for r in radii]
    return extract_series(samples, radii, orders, field=field)
