"""RMAE versus energy, line profiles and CSV/SVG report files."""
import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .physics import lac_at

RMAE_ENERGIES = tuple(range(20, 151, 10))


@dataclass(eq=False)
class RoiSpec:
    """A homogeneous region and its reference: a composition ``(c1, c2)`` or a LAC curve.

    ``reference_curve`` is a callable ``E -> mu_ref(E)`` and wins over the composition.
    """

    label: str
    mask: np.ndarray
    composition: tuple = None
    reference_curve: object = None

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if not self.mask.any():
            raise ValueError(f"ROI {self.label!r} is empty")
        if self.composition is None and self.reference_curve is None:
            raise ValueError(f"ROI {self.label!r} needs a reference composition or curve")

    def mu_ref(self, E, materials):
        if self.reference_curve is not None:
            return float(self.reference_curve(E))
        return float(sum(w * lac_at(t, E) for w, t in zip(self.composition, materials)))


def rmae(c, roi, m, energies=RMAE_ENERGIES):
    """Mean absolute LAC error over the ROI divided by the ROI's reference LAC, per energy."""
    c = np.asarray(c, dtype=np.float64)
    if roi.mask.shape != c.shape[1:]:
        raise ValueError(f"ROI mask {roi.mask.shape} does not match image {c.shape[1:]}")
    # fixed (row-major) summation order over the ROI pixels
    c1 = c[0][roi.mask]
    c2 = c[1][roi.mask]
    out = []
    for E in energies:
        mu1, mu2 = (lac_at(t, E) for t in m.materials)
        ref = roi.mu_ref(E, m.materials)
        out.append(float(np.mean(np.abs(c1 * mu1 + c2 * mu2 - ref)) / ref))
    return np.array(out)


def profile(img, axis, index):
    """Row (``axis=1``: fixed row ``index``) or column (``axis=0``) of a 2D image."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("profile expects a 2D image")
    if axis not in (0, 1):
        raise ValueError("axis must be 0 (column) or 1 (row)")
    n = img.shape[1] if axis == 0 else img.shape[0]
    if not 0 <= index < n:
        raise IndexError(f"index {index} out of range [0, {n})")
    return img[:, index].copy() if axis == 0 else img[index, :].copy()


def load_rois(path, shape, pixel_size_cm):
    """ROIs from JSON: ``{"rois": [{"label", "ellipse" | "pixels", "composition"}]}``.

    ``ellipse`` uses the phantom ellipse schema (center_cm, semi_axes_cm, rotation_rad)
    and is rasterised with pixel-center membership.
    """
    from .phantom import Ellipse, ellipse_mask
    from .schemas import validate

    obj = validate(json.loads(Path(path).read_text()), "roi")
    rois = []
    for i, r in enumerate(obj.get("rois", [])):
        if "ellipse" in r:
            e = r["ellipse"]
            ell = Ellipse(tuple(e["center_cm"]), tuple(e["semi_axes_cm"]), float(e.get("rotation_rad", 0.0)),
                          tuple(r["composition"]))
            mask = ellipse_mask(ell, shape[1], shape[0], pixel_size_cm)
        elif "pixels" in r:
            mask = np.zeros(shape, dtype=bool)
            for iy, ix in r["pixels"]:
                mask[iy, ix] = True
        else:
            raise ValueError(f"rois[{i}]: needs 'ellipse' or 'pixels'")
        rois.append(RoiSpec(r.get("label", f"roi{i}"), mask, tuple(r["composition"])))
    return rois


# report -------------------------------------------------------------------------

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def write_curves_csv(path, x_name, x, series):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([x_name] + list(series))
        for i, xv in enumerate(x):
            w.writerow([repr(float(xv))] + [repr(float(series[k][i])) for k in series])


def read_curves_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    return header[0], data[:, 0], {name: data[:, i + 1] for i, name in enumerate(header[1:])}


def svg_line_chart(title, x_label, y_label, x, series, width=640, height=400):
    """Self-contained SVG with one polyline per series."""
    x = np.asarray(x, dtype=np.float64)
    ys = np.concatenate([np.asarray(v, dtype=np.float64) for v in series.values()])
    x0, x1 = float(x.min()), float(x.max())
    y0, y1 = float(min(ys.min(), 0.0)), float(ys.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    left, right, top, bottom = 70, 150, 40, 50
    pw, ph_ = width - left - right, height - top - bottom

    def px(v):
        return left + (v - x0) / (x1 - x0) * pw

    def py(v):
        return top + ph_ - (v - y0) / (y1 - y0) * ph_

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'font-family="sans-serif" font-size="12">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
             f'<line x1="{left}" y1="{top + ph_}" x2="{left + pw}" y2="{top + ph_}" stroke="black"/>',
             f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph_}" stroke="black"/>']
    for t in np.linspace(x0, x1, 6):
        parts.append(f'<text x="{px(t):.1f}" y="{top + ph_ + 16}" text-anchor="middle">{t:.3g}</text>')
    for t in np.linspace(y0, y1, 6):
        parts.append(f'<text x="{left - 6}" y="{py(t) + 4:.1f}" text-anchor="end">{t:.3g}</text>')
    parts.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">{x_label}</text>')
    parts.append(f'<text x="16" y="{top + ph_ / 2}" text-anchor="middle" '
                 f'transform="rotate(-90 16 {top + ph_ / 2})">{y_label}</text>')
    for i, (name, v) in enumerate(series.items()):
        col = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, np.asarray(v, dtype=np.float64)))
        parts.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{left + pw + 10}" y="{top + 16 * (i + 1)}" fill="{col}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(curves, profiles=None, traces=None, out_dir="."):
    """Write one CSV and one SVG per figure.

    ``curves``: ``{figure: {method: rmae array}}`` over :data:`RMAE_ENERGIES` (or
    ``{figure: (energies, {method: values})}``); ``profiles``: ``{figure: {method: values}}``
    over pixel position; ``traces``: ``{name: objective array}``. Returns the written paths.
    """
    if not curves and not profiles and not traces:
        raise ValueError("nothing to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def emit(name, x_name, x, series, title, y_label):
        csv_path = out / f"{name}.csv"
        write_curves_csv(csv_path, x_name, x, series)
        svg_path = out / f"{name}.svg"
        svg_path.write_text(svg_line_chart(title, x_name, y_label, x, series))
        written.extend([csv_path, svg_path])

    for fig, val in (curves or {}).items():
        energies, series = val if isinstance(val, tuple) else (RMAE_ENERGIES, val)
        emit(f"rmae_{fig}", "energy_keV", energies, series, f"RMAE vs energy: {fig}", "RMAE")
    for fig, series in (profiles or {}).items():
        n = len(next(iter(series.values())))
        emit(f"profile_{fig}", "position", np.arange(n), series, f"Profile: {fig}", "value")
    for name, tr in (traces or {}).items():
        emit(f"trace_{name}", "iteration", np.arange(len(tr)), {"objective": tr}, f"Objective: {name}",
             "objective")
    return written
