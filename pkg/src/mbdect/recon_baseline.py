"""Analytic initialisation: per-spectrum FBP, then effective-energy decomposition."""
import math

import numpy as np

from . import projector
from .physics import lac_at, total_fluence

LOG_FLOOR = 0.5


class SingularDecomposition(ValueError):
    pass


def log_transform(d, spectrum):
    """Line integrals ``ln(I0 / max(d, 0.5))`` with ``I0`` the spectrum's total fluence."""
    d = np.asarray(d, dtype=np.float64)
    return np.log(total_fluence(spectrum) / np.maximum(d, LOG_FLOOR))


def ramp_filter(n_det, spacing, window="hann"):
    """Frequency response of the band-limited ramp on the zero-padded grid."""
    size = 1 << max(1, math.ceil(math.log2(2 * n_det)))
    n = np.concatenate([np.arange(0, size // 2 + 1), np.arange(-(size // 2) + 1, 0)])
    h = np.zeros(size)
    h[0] = 1.0 / (4.0 * spacing**2)
    odd = n % 2 == 1
    h[odd] = -1.0 / (math.pi * n[odd] * spacing) ** 2
    H = np.real(np.fft.fft(h)) * spacing
    if window == "hann":
        H = H * 0.5 * (1.0 + np.cos(2.0 * math.pi * np.fft.fftfreq(size)))
    elif window != "ram-lak":
        raise ValueError(f"unknown window {window!r}")
    return H


def filter_sinogram(p, geom, window="hann"):
    p = np.asarray(p, dtype=np.float64)
    H = ramp_filter(geom.n_det, geom.det_spacing_cm, window)
    padded = np.zeros(p.shape[:-1] + (H.size,))
    padded[..., : geom.n_det] = p
    q = np.real(np.fft.ifft(np.fft.fft(padded, axis=-1) * H, axis=-1))
    return q[..., : geom.n_det]


def backproject(q, geom):
    """Pixel-driven backprojection with linear detector interpolation, scaled by pi / n_angles."""
    xs = (np.arange(geom.n_x) - (geom.n_x - 1) / 2.0) * geom.pixel_size_cm
    ys = (np.arange(geom.n_y) - (geom.n_y - 1) / 2.0) * geom.pixel_size_cm
    X, Y = np.meshgrid(xs, ys)
    det = geom.det_coords
    img = np.zeros(geom.image_shape)
    for k, theta in enumerate(geom.angles_rad):
        s = X * math.cos(theta) + Y * math.sin(theta)
        img += np.interp(s, det, q[k], left=0.0, right=0.0)
    return img * (math.pi / geom.n_angles)


def fbp(p, geom, window="hann"):
    p = np.asarray(p, dtype=np.float64)
    if p.shape != geom.sino_shape:
        raise projector.GeometryMismatch(f"geometry mismatch: sinogram {p.shape} vs {geom.sino_shape}")
    return backproject(filter_sinogram(p, geom, window), geom)


def decomposition_matrix(m):
    """2x2 matrix of basis LACs at the two spectra's mean energies (rows: low, high)."""
    e_eff = [s.mean_energy() for s in m.spectra]
    M = np.array([[lac_at(t, e) for t in m.materials] for e in e_eff])
    if np.linalg.cond(M) > 1e12:
        raise SingularDecomposition(f"decomposition matrix is singular (cond={np.linalg.cond(M):.3g})")
    return M


def image_decompose(mu_low, mu_high, m):
    mu_low = np.asarray(mu_low, dtype=np.float64)
    mu_high = np.asarray(mu_high, dtype=np.float64)
    if mu_low.shape != mu_high.shape:
        raise ValueError("attenuation images differ in shape")
    M = decomposition_matrix(m)
    rhs = np.stack([mu_low.ravel(), mu_high.ravel()])
    return np.linalg.solve(M, rhs).reshape((2,) + mu_low.shape)


def fbp_decompose(d, m, window="hann"):
    """Initial basis images from measured counts ``d`` (2, n_angles, n_det)."""
    mu = [fbp(log_transform(d[j], m.spectra[j]), m.geometry, window) for j in range(2)]
    return image_decompose(mu[0], mu[1], m)
