"""Ellipse phantoms of basis-material weights.

Images are ``(2, n_y, n_x)`` float64 arrays: channel 0 is the water-like weight,
channel 1 the bone-like weight. Pixel ``(iy, ix)`` has its center at
``x = (ix - (n_x - 1) / 2) * pixel``, ``y = (iy - (n_y - 1) / 2) * pixel``.
"""
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Ellipse:
    center_cm: tuple
    semi_axes_cm: tuple
    rotation_rad: float
    composition: tuple

    def __post_init__(self):
        if min(self.semi_axes_cm) <= 0:
            raise ValueError(f"semi-axes must be positive, got {self.semi_axes_cm}")

    def contains(self, x, y):
        cx, cy = self.center_cm
        a, b = self.semi_axes_cm
        cr, sr = math.cos(self.rotation_rad), math.sin(self.rotation_rad)
        dx, dy = x - cx, y - cy
        u = dx * cr + dy * sr
        v = -dx * sr + dy * cr
        return (u / a) ** 2 + (v / b) ** 2 <= 1.0

    def chord(self, point, direction):
        """Parameter interval ``(t0, t1)`` where ``point + t * direction`` is inside, or None."""
        cx, cy = self.center_cm
        a, b = self.semi_axes_cm
        cr, sr = math.cos(self.rotation_rad), math.sin(self.rotation_rad)
        px, py = point[0] - cx, point[1] - cy
        dx, dy = direction
        pu, pv = px * cr + py * sr, -px * sr + py * cr
        du, dv = dx * cr + dy * sr, -dx * sr + dy * cr
        qa = (du / a) ** 2 + (dv / b) ** 2
        qb = 2.0 * (pu * du / a**2 + pv * dv / b**2)
        qc = (pu / a) ** 2 + (pv / b) ** 2 - 1.0
        disc = qb * qb - 4.0 * qa * qc
        if disc <= 0.0:
            return None
        sq = math.sqrt(disc)
        return (-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa)

    def shrunk(self, factor):
        a, b = self.semi_axes_cm
        return Ellipse(self.center_cm, (a * factor, b * factor), self.rotation_rad, self.composition)


@dataclass(frozen=True)
class PhantomSpec:
    field_of_view_cm: float
    ellipses: tuple = field(default_factory=tuple)

    def to_json(self):
        return {
            "fov": self.field_of_view_cm,
            "ellipses": [
                {
                    "center_cm": list(e.center_cm),
                    "semi_axes_cm": list(e.semi_axes_cm),
                    "rotation_rad": e.rotation_rad,
                    "composition": list(e.composition),
                }
                for e in self.ellipses
            ],
        }

    @classmethod
    def from_json(cls, obj):
        ellipses = tuple(
            Ellipse(tuple(e["center_cm"]), tuple(e["semi_axes_cm"]),
                    float(e.get("rotation_rad", 0.0)), tuple(e["composition"]))
            for e in obj.get("ellipses", [])
        )
        return cls(float(obj["fov"]), ellipses)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path):
        from .schemas import validate

        return cls.from_json(validate(json.loads(Path(path).read_text()), "phantom"))


def pixel_centers(n, pixel_size):
    return (np.arange(n) - (n - 1) / 2.0) * pixel_size


def ellipse_mask(ellipse, n_x, n_y, pixel_size):
    x = pixel_centers(n_x, pixel_size)[None, :]
    y = pixel_centers(n_y, pixel_size)[:, None]
    return ellipse.contains(x, y)


def rasterize(spec, n_x, n_y=None):
    """Pixel-center membership rasterization; later ellipses overwrite earlier ones."""
    n_y = n_x if n_y is None else n_y
    if n_x <= 0 or n_y <= 0:
        raise ValueError("image size must be positive")
    pixel = spec.field_of_view_cm / n_x
    img = np.zeros((2, n_y, n_x))
    for e in spec.ellipses:
        m = ellipse_mask(e, n_x, n_y, pixel)
        img[0][m] = e.composition[0]
        img[1][m] = e.composition[1]
    return img


def analytic_path_integral(spec, point, direction):
    """Per-basis path integrals (cm) along the infinite line ``point + t * direction``."""
    direction = (float(direction[0]), float(direction[1]))
    speed = math.hypot(*direction)
    if speed == 0.0:
        raise ValueError("direction must be nonzero")
    # painter's order: each segment is (t0, t1, composition)
    segments = []
    for e in spec.ellipses:
        iv = e.chord(point, direction)
        if iv is None:
            continue
        t0, t1 = iv
        kept = []
        for s0, s1, comp in segments:
            if s1 <= t0 or s0 >= t1:
                kept.append((s0, s1, comp))
                continue
            if s0 < t0:
                kept.append((s0, t0, comp))
            if s1 > t1:
                kept.append((t1, s1, comp))
        kept.append((t0, t1, e.composition))
        segments = kept
    out = np.zeros(2)
    for s0, s1, comp in segments:
        out += (s1 - s0) * speed * np.asarray(comp, dtype=np.float64)
    return out


@dataclass(frozen=True)
class PhantomFamily:
    """Ranges for randomized head-like phantoms (all lengths in cm)."""

    fov_cm: float = 6.4
    body_semi_axes: tuple = (2.3, 2.9)
    body_c1: tuple = (0.95, 1.05)
    n_inserts: tuple = (2, 5)
    insert_radius: tuple = (0.3, 0.8)
    insert_c1: tuple = (0.8, 1.2)
    insert_c2: tuple = (0.0, 0.8)


def random_phantom(rng, family=PhantomFamily()):
    a = rng.uniform(*family.body_semi_axes)
    b = rng.uniform(*family.body_semi_axes)
    body = Ellipse((0.0, 0.0), (a, b), float(rng.uniform(0, math.pi)),
                   (float(rng.uniform(*family.body_c1)), 0.0))
    ellipses = [body]
    inner = min(a, b)
    n_ins = int(rng.integers(family.n_inserts[0], family.n_inserts[1] + 1))
    tries = 0
    while len(ellipses) < n_ins + 1 and tries < 200:
        tries += 1
        ra = rng.uniform(*family.insert_radius)
        rb = rng.uniform(*family.insert_radius)
        r_max = max(ra, rb)
        rad = rng.uniform(0.0, max(inner - r_max - 0.15, 0.0))
        ang = rng.uniform(0, 2 * math.pi)
        cx, cy = rad * math.cos(ang), rad * math.sin(ang)
        # keep inserts disjoint so each is a homogeneous ROI
        if any(math.hypot(cx - e.center_cm[0], cy - e.center_cm[1]) < r_max + max(e.semi_axes_cm) + 0.1
               for e in ellipses[1:]):
            continue
        comp = (float(rng.uniform(*family.insert_c1)), float(rng.uniform(*family.insert_c2)))
        ellipses.append(Ellipse((cx, cy), (ra, rb), float(rng.uniform(0, math.pi)), comp))
    return PhantomSpec(family.fov_cm, tuple(ellipses))


def make_specs(seed, count, family=PhantomFamily()):
    if count <= 0:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(seed)
    return [random_phantom(rng, family) for _ in range(count)]


def make_dataset(seed, count, family=PhantomFamily(), n=64):
    """``count`` rasterized random phantoms, deterministic in ``seed``."""
    return [rasterize(s, n) for s in make_specs(seed, count, family)]


def family_dict(family):
    return asdict(family)
