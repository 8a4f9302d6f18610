"""2D parallel-beam Joseph projector and its exact adjoint.

The system matrix is assembled once per geometry as a CSR matrix whose rows
are rays ``(angle, bin)`` in row-major sinogram order and whose columns are
pixels in row-major image order. ``forward`` is ``A @ x`` and ``adjoint`` is
``A.T @ y``; both use a fixed reduction order, so results are reproducible
bit for bit.

Ray for angle ``theta`` and detector coordinate ``s``::

    p(t) = s * (cos theta, sin theta) + t * (-sin theta, cos theta)
"""
import json
import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class GeometryMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Geometry:
    n_angles: int = 96
    n_det: int = 96
    det_spacing_cm: float = 0.1
    n_x: int = 64
    n_y: int = 64
    pixel_size_cm: float = 0.1

    def __post_init__(self):
        if self.n_angles <= 0 or self.n_det <= 0 or self.n_x <= 0 or self.n_y <= 0:
            raise ValueError("geometry extents must be positive")
        if self.det_spacing_cm <= 0 or self.pixel_size_cm <= 0:
            raise ValueError("spacings must be positive")

    @property
    def angles_rad(self):
        return np.arange(self.n_angles) * (math.pi / self.n_angles)

    @property
    def det_coords(self):
        return (np.arange(self.n_det) - (self.n_det - 1) / 2.0) * self.det_spacing_cm

    @property
    def image_shape(self):
        return (self.n_y, self.n_x)

    @property
    def sino_shape(self):
        return (self.n_angles, self.n_det)

    def covers_image(self):
        diag = math.hypot(self.n_x, self.n_y) * self.pixel_size_cm
        return self.n_det * self.det_spacing_cm >= diag

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, obj):
        return cls(**{k: obj[k] for k in cls.__dataclass_fields__ if k in obj})

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2))


def _axis_weights(coord, n, pixel):
    """Linear-interpolation neighbours of continuous coordinates along one axis.

    Returns index/weight pairs for the lower and upper neighbour; indices
    outside ``[0, n)`` get weight zero (the image is zero outside its support).
    """
    f = coord / pixel + (n - 1) / 2.0
    i0 = np.floor(f)
    w1 = f - i0
    i0 = i0.astype(np.int64)
    i1 = i0 + 1
    w0 = 1.0 - w1
    w0 = np.where((i0 >= 0) & (i0 < n), w0, 0.0)
    w1 = np.where((i1 >= 0) & (i1 < n), w1, 0.0)
    return np.clip(i0, 0, n - 1), w0, np.clip(i1, 0, n - 1), w1


@lru_cache(maxsize=16)
def system_matrix(geom):
    """CSR matrix of Joseph weights, shape ``(n_angles * n_det, n_y * n_x)``."""
    ps = geom.pixel_size_cm
    s = geom.det_coords
    rows, cols, vals = [], [], []
    ray_base = 0
    for theta in geom.angles_rad:
        c, si = math.cos(theta), math.sin(theta)
        ray = ray_base + np.arange(geom.n_det)
        if abs(c) >= abs(si):
            # drive along image rows (y); interpolate in x
            y = (np.arange(geom.n_y) - (geom.n_y - 1) / 2.0) * ps
            t = (y[None, :] - s[:, None] * si) / c
            x = s[:, None] * c - t * si
            i0, w0, i1, w1 = _axis_weights(x, geom.n_x, ps)
            iy = np.broadcast_to(np.arange(geom.n_y)[None, :], x.shape)
            scale = ps / abs(c)
            pix0 = iy * geom.n_x + i0
            pix1 = iy * geom.n_x + i1
        else:
            x = (np.arange(geom.n_x) - (geom.n_x - 1) / 2.0) * ps
            t = (s[:, None] * c - x[None, :]) / si
            y = s[:, None] * si + t * c
            i0, w0, i1, w1 = _axis_weights(y, geom.n_y, ps)
            ix = np.broadcast_to(np.arange(geom.n_x)[None, :], y.shape)
            scale = ps / abs(si)
            pix0 = i0 * geom.n_x + ix
            pix1 = i1 * geom.n_x + ix
        r = np.broadcast_to(ray[:, None], pix0.shape)
        for pix, w in ((pix0, w0), (pix1, w1)):
            keep = w > 0
            rows.append(r[keep])
            cols.append(pix[keep])
            vals.append(w[keep] * scale)
        ray_base += geom.n_det
    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(geom.n_angles * geom.n_det, geom.n_x * geom.n_y),
    )
    A.sum_duplicates()
    A.sort_indices()
    return A


@lru_cache(maxsize=16)
def _transpose(geom):
    return system_matrix(geom).T.tocsr()


def _check(arr, shape, what):
    if arr.shape[-2:] != shape:
        raise GeometryMismatch(f"geometry mismatch: {what} has shape {arr.shape[-2:]}, expected {shape}")


def forward(img, geom):
    """Line integrals of ``img`` (..., n_y, n_x) -> (..., n_angles, n_det), in cm x image units."""
    img = np.asarray(img, dtype=np.float64)
    _check(img, geom.image_shape, "image")
    lead = img.shape[:-2]
    flat = img.reshape(-1, geom.n_y * geom.n_x).T
    out = system_matrix(geom) @ flat
    return np.ascontiguousarray(out.T).reshape(lead + geom.sino_shape)


def adjoint(sino, geom):
    """Exact transpose of :func:`forward`."""
    sino = np.asarray(sino, dtype=np.float64)
    _check(sino, geom.sino_shape, "sinogram")
    lead = sino.shape[:-2]
    flat = sino.reshape(-1, geom.n_angles * geom.n_det).T
    out = _transpose(geom) @ flat
    return np.ascontiguousarray(out.T).reshape(lead + geom.image_shape)


def row_sums(geom):
    return forward(np.ones(geom.image_shape), geom)


def col_sums(geom):
    return adjoint(np.ones(geom.sino_shape), geom)
