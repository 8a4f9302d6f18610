"""Glue shared by the CLI and the experiment scripts: simulated datasets and reference runs."""
import logging

import numpy as np

from . import forward_model as fm
from . import phantom as ph
from . import recon_baseline as rb
from . import sir
from .unroll.network import Sample

log = logging.getLogger(__name__)

# reference reconstruction used as training target and comparison baseline
REFERENCE_ITERS = 500
REFERENCE_PENALTY = sir.PenaltyConfig("huber", weight=2.0e4, huber_delta=0.02)


def simulate_measurement(c_truth, m, seed):
    return fm.simulate(fm.predict(c_truth, m), seed)


def reference_recon(d, c_init, m, n_iter=REFERENCE_ITERS, pen=REFERENCE_PENALTY):
    return sir.sir_reconstruct(d, c_init, m, n_iter, pen=pen, momentum="mfista")


def build_samples(specs, m, seed, target="sir", sir_iters=REFERENCE_ITERS, pen=REFERENCE_PENALTY):
    """Simulate one noisy scan per phantom and pair the FBP start with a target.

    ``target`` is ``"sir"`` (penalised iterative reference, the default) or
    ``"phantom"`` (the rasterised ground truth). Measurement ``k`` uses Poisson
    seed ``seed + k``.
    """
    if target not in ("sir", "phantom"):
        raise ValueError(f"unknown target {target!r}")
    geom = m.geometry
    samples = []
    for k, spec in enumerate(specs):
        truth = ph.rasterize(spec, geom.n_x, geom.n_y)
        d = simulate_measurement(truth, m, seed + k)
        c0 = rb.fbp_decompose(d, m)
        if target == "sir":
            goal, _ = reference_recon(d, c0, m, sir_iters, pen)
        else:
            goal = truth
        s = Sample(d, c0, goal)
        s.curvature(m)
        samples.append(s)
        log.info("sample %d/%d ready", k + 1, len(specs))
    return samples


def roi_masks(spec, geom, shrink=0.7):
    """Homogeneous evaluation regions: each insert (and the body) shrunk away from edges."""
    masks = []
    for idx, e in enumerate(spec.ellipses):
        mask = ph.ellipse_mask(e.shrunk(shrink), geom.n_x, geom.n_y, geom.pixel_size_cm)
        for later in spec.ellipses[idx + 1:]:
            mask &= ~ph.ellipse_mask(later, geom.n_x, geom.n_y, geom.pixel_size_cm)
        if mask.any():
            masks.append((f"ellipse{idx}", mask, tuple(e.composition)))
    return masks
