"""Fitting power series in 1/r and extrapolating r -> infinity."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sphere import SphereOneForm, SphereScalar

__all__ = [
    "FitError",
    "ExpansionSeries",
    "Extrapolation",
    "geometric_radii",
    "fit_power_series",
    "extract_series",
    "extrapolate",
]

MAX_CONDITION = 1e12


class FitError(ArithmeticError):
    pass


def geometric_radii(r0: float, count: int = 5, ratio: float = 2.0) -> np.ndarray:
    return r0 * ratio ** np.arange(count)


def _design(radii, orders):
    radii = np.asarray(radii, dtype=float)
    M = radii[:, None] ** np.asarray(orders, dtype=float)[None, :]
    # column scaling keeps the condition number about the spacing, not the units
    scale = np.max(np.abs(M), axis=0)
    Ms = M / scale
    cond = np.linalg.cond(Ms)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise FitError(
            f"ill-conditioned power fit (cond={cond:.3g}); spread the radii further apart"
            " or request fewer orders"
        )
    return Ms, scale


def fit_power_series(radii, samples, orders):
    """Least-squares coefficients of ``samples[k] ~ sum_n coef_n * radii[k]**n``.

    ``samples`` has shape (m, ...); the fit is independent for every trailing index.
    Returns ``(coefs, max_residual)`` with ``coefs`` of shape (len(orders), ...).
    """
    samples = np.asarray(samples, dtype=float)
    m = samples.shape[0]
    if m < len(orders):
        raise FitError("fewer radii than requested orders")
    Ms, scale = _design(radii, orders)
    flat = samples.reshape(m, -1)
    coefs, *_ = np.linalg.lstsq(Ms, flat, rcond=None)
    resid = flat - Ms @ coefs
    coefs = coefs / scale[:, None]
    return coefs.reshape((len(orders),) + samples.shape[1:]), float(np.max(np.abs(resid), initial=0.0))


@dataclass(frozen=True)
class ExpansionSeries:
    """Coefficient fields of ``sum_n coefficient_n r^n`` with the fit's max residual."""

    orders: tuple[int, ...]
    coefficients: tuple
    fit_residual: float

    def coefficient(self, n: int):
        return self.coefficients[self.orders.index(n)]

    def __call__(self, r: float):
        out = None
        for n, c in zip(self.orders, self.coefficients):
            term = c * float(r) ** n
            out = term if out is None else out + term
        return out


def extract_series(samples, radii, orders, field=None) -> ExpansionSeries:
    """Per-node least-squares fit of sampled fields against powers of r.

    ``samples`` is a sequence of SphereScalar / SphereOneForm (one per radius) or of
    objects carrying attribute ``field``.
    """
    radii = np.asarray(radii, dtype=float)
    if np.any(np.diff(radii) <= 0):
        raise FitError("radii must be strictly increasing")
    fields = [getattr(s, field) if field else s for s in samples]
    orders = tuple(int(n) for n in orders)
    if len(fields) < len(orders) + 1:
        raise FitError(f"need at least {len(orders) + 1} radii for {len(orders)} orders, got {len(fields)}")
    first = fields[0]
    if isinstance(first, SphereOneForm):
        stack = np.stack([np.stack([f.theta, f.phi]) for f in fields])
        coefs, res = fit_power_series(radii, stack, orders)
        out = tuple(SphereOneForm(first.grid, c[0], c[1]) for c in coefs)
    elif isinstance(first, SphereScalar):
        stack = np.stack([f.values for f in fields])
        coefs, res = fit_power_series(radii, stack, orders)
        out = tuple(SphereScalar(first.grid, c) for c in coefs)
    else:
        stack = np.stack([np.asarray(f, dtype=float) for f in fields])
        coefs, res = fit_power_series(radii, stack, orders)
        out = tuple(coefs)
    return ExpansionSeries(orders, out, res)


@dataclass(frozen=True)
class Extrapolation:
    value: np.ndarray
    error: np.ndarray
    degree: int


def extrapolate(radii, values, degree: int | None = None) -> Extrapolation:
    """Limit r -> infinity by a polynomial fit in 1/r.

    The default degree is ``len(radii) - 2``; the error estimate is the change in
    the limit when the degree is lowered by one.
    """
    radii = np.asarray(radii, dtype=float)
    values = np.asarray(values, dtype=float)
    m = radii.size
    if degree is None:
        degree = m - 2
    if degree < 1 or degree > m - 1:
        raise FitError(f"degree {degree} not usable with {m} radii")

    def limit(deg):
        coefs, _ = fit_power_series(radii, values, list(range(0, -deg - 1, -1)))
        return coefs[0]

    hi = limit(degree)
    lo = limit(degree - 1)
    return Extrapolation(np.asarray(hi), np.abs(np.asarray(hi) - np.asarray(lo)), degree)
