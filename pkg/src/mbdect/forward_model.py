"""Polychromatic dual-energy transmission model and Poisson likelihood.

For basis images ``c`` (2, n_y, n_x) the line integrals are
``l_i(y) = sum_x h(x, y) c_i(x)`` and the expected counts for spectrum ``j`` are

    g_j(y) = sum_E I_j(E) * exp(-l_1(y) mu_1(E) - l_2(y) mu_2(E))

The data term is the Poisson negative log-likelihood without the d-only constant,
``f = sum_j sum_y g_j(y) - d_j(y) ln g_j(y)``. Its gradient in the line integrals is

    df/dl_i(y) = sum_j (1 - d_j/g_j) * dg_j/dl_i,   dg_j/dl_i = -sum_E I_j(E) mu_i(E) e_E(y)

with ``e_E = exp(-l . mu(E))``, and the gradient in ``c_i`` is the projector
adjoint of that sinogram.
"""
from dataclasses import dataclass

import numpy as np

from . import projector
from .physics import lac_at


class NumericalError(FloatingPointError):
    pass


@dataclass(frozen=True, eq=False)
class ScanModel:
    geometry: projector.Geometry
    spectra: tuple  # (low, high) Spectrum
    materials: tuple  # (basis 1, basis 2) MaterialTable

    def __post_init__(self):
        lo, hi = self.spectra
        if lo.energies_keV.shape != hi.energies_keV.shape or np.any(lo.energies_keV != hi.energies_keV):
            raise ValueError("both spectra must share one energy grid")
        active = (lo.fluence > 0) | (hi.fluence > 0)
        energies = lo.energies_keV[active]
        mu = np.stack([lac_at(t, energies) for t in self.materials]).reshape(2, -1)
        fluence = np.stack([lo.fluence[active], hi.fluence[active]])
        object.__setattr__(self, "energies", energies)
        object.__setattr__(self, "mu", mu)  # (material, E)
        object.__setattr__(self, "fluence", fluence)  # (spectrum, E)

    def scaled(self, factor):
        return ScanModel(self.geometry, tuple(s.scaled(factor) for s in self.spectra), self.materials)


def _line_integrals(c, m):
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 3 or c.shape[0] != 2:
        raise projector.GeometryMismatch(f"basis image must have shape (2, n_y, n_x), got {c.shape}")
    return projector.forward(c, m.geometry)


def _expected(ell, m):
    """Expected counts and per-energy transmissions for line integrals ``ell`` (2, ...)."""
    flat = ell.reshape(2, -1)
    expo = m.mu.T @ flat  # (E, rays)
    trans = np.exp(-expo)
    g = m.fluence @ trans  # (2, rays)
    if not np.all(np.isfinite(g)) or np.any(g <= 0):
        bad = np.flatnonzero(~(np.isfinite(g) & (g > 0)).all(axis=0))[0]
        ia, ib = np.unravel_index(bad, ell.shape[1:])
        raise NumericalError(f"non-finite or vanishing expected counts at view {ia}, bin {ib}")
    return g, trans


def predict(c, m):
    """Expected counts ``(2, n_angles, n_det)`` for spectra (low, high)."""
    ell = _line_integrals(c, m)
    g, _ = _expected(ell, m)
    return g.reshape(ell.shape)


def predict_from_line_integrals(ell, m):
    ell = np.asarray(ell, dtype=np.float64)
    g, _ = _expected(ell, m)
    return g.reshape(ell.shape)


def simulate(g, seed):
    """Poisson counts with means ``g``.

    Uses numpy's Philox counter-based generator keyed by ``seed``; numpy's
    Poisson sampler draws by inversion for means below 10 and by transformed
    rejection (PTRS) above.
    """
    g = np.asarray(g, dtype=np.float64)
    if np.any(~np.isfinite(g)) or np.any(g <= 0):
        raise ValueError("Poisson means must be positive and finite")
    rng = np.random.Generator(np.random.Philox(seed))
    return rng.poisson(g).astype(np.float64)


def neg_log_likelihood(d, g):
    d = np.asarray(d, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if d.shape != g.shape:
        raise ValueError(f"shape mismatch {d.shape} vs {g.shape}")
    return float(np.sum(g - d * np.log(g)))


def _dg_dl(trans, m):
    # (spectrum j, material i, rays): -sum_E I_j(E) mu_i(E) e_E
    weights = (m.fluence[:, None, :] * m.mu[None, :, :]).reshape(4, -1)
    return -(weights @ trans).reshape(2, 2, -1)


def sinogram_gradient(ell, d, m):
    """NLL value and its gradient with respect to the line integrals."""
    d = np.asarray(d, dtype=np.float64).reshape(2, -1)
    g, trans = _expected(ell, m)
    nll = float(np.sum(g - d * np.log(g)))
    resid = 1.0 - d / g  # (j, rays)
    grad_ell = np.einsum("jr,jir->ir", resid, _dg_dl(trans, m))
    return nll, grad_ell.reshape(ell.shape)


def nll_and_gradient(c, d, m):
    ell = _line_integrals(c, m)
    nll, gl = sinogram_gradient(ell, d, m)
    return nll, projector.adjoint(gl, m.geometry)


def nll_gradient(c, d, m):
    """Gradient of the Poisson NLL with respect to both basis images."""
    return nll_and_gradient(c, d, m)[1]


def nll_value(c, d, m):
    return neg_log_likelihood(d, predict(c, m))


def hessian_vector(c, d, m, v):
    """Exact NLL Hessian applied to ``v`` (2, n_y, n_x).

    Per ray, ``H = sum_j (1 - d_j/g_j) grad2 g_j + (d_j / g_j^2) grad g_j grad g_j^T`` with
    ``grad2 g_j[i, k] = sum_E I_j mu_i mu_k e_E``.
    """
    geom = m.geometry
    ell = _line_integrals(c, m)
    dl = projector.forward(np.asarray(v, dtype=np.float64), geom).reshape(2, -1)
    d = np.asarray(d, dtype=np.float64).reshape(2, -1)
    g, trans = _expected(ell, m)
    dg = _dg_dl(trans, m)  # (j, i, r)
    mu_dl = m.mu.T @ dl  # (E, r): sum_k mu_k dl_k
    # sum_k grad2 g_j[i, k] dl_k = sum_E I_j mu_i e_E (mu . dl)
    weights = (m.fluence[:, None, :] * m.mu[None, :, :]).reshape(4, -1)
    h2 = (weights @ (trans * mu_dl)).reshape(2, 2, -1)
    resid = 1.0 - d / g
    proj = np.einsum("jir,ir->jr", dg, dl)
    out = np.einsum("jr,jir->ir", resid, h2) + np.einsum("jr,jir->ir", d / g / g * proj, dg)
    return projector.adjoint(out.reshape((2,) + geom.sino_shape), geom)
