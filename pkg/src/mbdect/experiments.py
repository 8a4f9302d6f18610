"""Scaled-down relative comparison: FBP start vs. penalized SIR vs. the trained unrolled net.

Used by ``scripts/relative_claim.py`` and the acceptance suite.
"""
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import metrics as mt
from . import phantom as ph
from . import pipeline as pl
from . import unroll as U
from .scenario import default_model

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RelativeClaimConfig:
    n_train: int = 64
    n_test: int = 6
    train_seed: int = 1
    test_seed: int = 2
    target: str = "sir"
    n_blocks: int = 4
    train: U.TrainConfig = field(default_factory=U.TrainConfig)


def mean_rmae(specs, images, m):
    """RMAE(E) averaged over every homogeneous region of every phantom."""
    curves = []
    for spec, c in zip(specs, images):
        for label, mask, comp in pl.roi_masks(spec, m.geometry):
            curves.append(mt.rmae(c, mt.RoiSpec(label, mask, comp), m))
    return np.mean(curves, axis=0)


def relative_claim(cfg=RelativeClaimConfig(), model=None, on_epoch=None):
    m = model if model is not None else default_model()
    timings = {}
    t = time.perf_counter()
    train_set = pl.build_samples(ph.make_specs(cfg.train_seed, cfg.n_train), m, 1000, target=cfg.target)
    timings["train_data_s"] = time.perf_counter() - t

    test_specs = ph.make_specs(cfg.test_seed, cfg.n_test)
    t = time.perf_counter()
    test_set = pl.build_samples(test_specs, m, 5000, target="sir")  # c_truth holds the SIR reference
    timings["sir_per_recon_s"] = (time.perf_counter() - t) / cfg.n_test

    net = U.make_net(m, cfg.n_blocks, seed=cfg.train.seed)
    t = time.perf_counter()
    pre_losses = []
    theta = U.pretrain_first_block(train_set, net, cfg.train, on_step=lambda i, v: pre_losses.append(v))
    U.broadcast(net, theta)
    timings["pretrain_s"] = time.perf_counter() - t
    t = time.perf_counter()
    net, history = U.train(train_set, net, cfg.train, on_epoch=on_epoch)
    timings["train_s"] = time.perf_counter() - t

    t = time.perf_counter()
    net_out = [U.infer(s.d, s.c_init, net)[0] for s in test_set]
    timings["infer_per_recon_s"] = (time.perf_counter() - t) / cfg.n_test

    curves = {
        "fbp": mean_rmae(test_specs, [s.c_init for s in test_set], m),
        "sir": mean_rmae(test_specs, [s.c_truth for s in test_set], m),
        "unrolled": mean_rmae(test_specs, net_out, m),
    }
    return {"curves": curves, "timings": timings, "history": history, "pretrain_losses": pre_losses,
            "net": net, "config": asdict(cfg)}
