"""Stacked update blocks, deep-supervision training and first-block pretraining.

Block ``k`` maps ``c`` to ``mixer_k(stack(DC(c), c)) + c`` with channel order
``[dc_1, dc_2, c_1, c_2]``.
"""
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import sir
from ..tensor_io import read_array, write_array
from .mixer import PARAM_NAMES, MixerConfig, copy_params, init_params, mixer_backward, mixer_forward

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Sample:
    d: np.ndarray  # (2, n_angles, n_det) counts
    c_init: np.ndarray  # (2, n_y, n_x)
    c_truth: np.ndarray
    curv: np.ndarray = None  # data-only surrogate curvature, filled lazily

    def curvature(self, m):
        if self.curv is None:
            self.curv = sir.curvature_bound(self.d, m)
        return self.curv


@dataclass
class UnrolledNet:
    blocks: list
    model: object  # ScanModel
    surrogate: sir.SurrogateConfig = field(default_factory=sir.SurrogateConfig)
    mixer: MixerConfig = field(default_factory=MixerConfig)

    @property
    def n_blocks(self):
        return len(self.blocks)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 0.05
    batch_size: int = 4
    seed: int = 0
    pretrain_iters: int = 2000
    clip_norm: float = 10.0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.clip_norm <= 0:
            raise ValueError("learning rate, batch size and clip norm must be positive")
        if self.epochs < 0 or self.pretrain_iters < 0:
            raise ValueError("epochs and pretrain_iters must be >= 0")


def make_net(model, n_blocks=4, seed=0, mixer=MixerConfig(), surrogate=sir.SurrogateConfig()):
    if n_blocks < 1:
        raise ValueError("need at least one block")
    rng = np.random.default_rng(seed)
    return UnrolledNet([init_params(mixer, rng) for _ in range(n_blocks)], model, surrogate, mixer)


def weight_schedule(epoch, n_epochs, n_blocks):
    """Deep-supervision weights: the last block always 1, earlier ones fade to 0 by mid-training."""
    w = np.full(n_blocks, max(0.0, 1.0 - epoch / (n_epochs / 2.0)) if n_epochs > 0 else 0.0)
    w[-1] = 1.0
    return w


def _dc(c_prev, d, curv, net):
    return sir.dc_step(c_prev, d, net.model, net.surrogate, curv=curv)


def block_apply(c_prev, d, params, net, curv=None, delta=None):
    """One update block. ``delta`` may carry a precomputed DC output."""
    c_prev = np.asarray(c_prev, dtype=np.float64)
    if curv is None and net.surrogate.curvature_mode == "precomputed-bound":
        curv = sir.curvature_bound(d, net.model)
    if delta is None:
        delta = _dc(c_prev, d, curv, net)
    out, _ = mixer_forward(np.concatenate([delta, c_prev]), params, net.mixer)
    return out + c_prev


def infer(d, c_init, net, curv=None):
    """Run all blocks; returns ``(c_N, [c_1, ..., c_N])``."""
    if curv is None and net.surrogate.curvature_mode == "precomputed-bound":
        curv = sir.curvature_bound(d, net.model)
    c = np.asarray(c_init, dtype=np.float64)
    inter = []
    for params in net.blocks:
        c = block_apply(c, d, params, net, curv=curv)
        inter.append(c)
    return c, inter


# losses -----------------------------------------------------------------------

def rms_loss(pred, target):
    """Per-sample root-mean-square error over pixels and channels, and its gradient."""
    diff = pred - target
    n = diff[0].size
    per = np.sqrt(np.sum(diff.reshape(diff.shape[0], -1) ** 2, axis=1) / n)
    safe = np.where(per > 0, per, 1.0)
    grad = np.where(per[:, None, None, None] > 0, diff / (n * safe[:, None, None, None]), 0.0)
    return per, grad


def _global_norm(grads):
    return float(np.sqrt(sum(np.sum(g * g) for gs in grads for g in gs.values())))


def _apply_update(blocks, grads, cfg):
    norm = _global_norm(grads)
    scale = cfg.learning_rate * (min(1.0, cfg.clip_norm / norm) if norm > 0 else 1.0)
    for params, g in zip(blocks, grads):
        for name in PARAM_NAMES:
            params[name] -= scale * g[name]
    return norm


def _forward_batch(batch, net, n_active=None):
    """Forward through the blocks, keeping everything needed for the reverse pass."""
    m = net.model
    c = np.stack([s.c_init for s in batch])
    states = []
    outs = []
    for params in net.blocks[:n_active]:
        deltas = np.stack([_dc(c[b], s.d, s.curvature(m), net) for b, s in enumerate(batch)])
        y, tape = mixer_forward(np.concatenate([deltas, c], axis=1), params, net.mixer)
        states.append((c, deltas, tape))
        c = y + c
        outs.append(c)
    return outs, states


def _backward_batch(batch, net, states, out_grads):
    """Reverse pass; ``out_grads[k]`` is dL/dc_k for every block output."""
    m = net.model
    grads = [None] * len(states)
    carry = np.zeros_like(out_grads[-1])
    for k in range(len(states) - 1, -1, -1):
        c_prev, deltas, tape = states[k]
        gc = carry + out_grads[k]
        gz, grads[k] = mixer_backward(tape, gc, net.blocks[k], net.mixer)
        carry = gc + gz[:, 2:]
        if k > 0:
            gdelta = gz[:, :2]
            for b, s in enumerate(batch):
                if np.any(gdelta[b]):
                    carry[b] += sir.dc_step_vjp(c_prev[b], s.d, m, deltas[b], gdelta[b],
                                                net.surrogate, curv=s.curvature(m))
    return grads


def loss_and_grads(batch, net, weights):
    """Weighted deep-supervision loss of a batch and the parameter gradients of every block."""
    outs, states = _forward_batch(batch, net)
    target = np.stack([s.c_truth for s in batch])
    B = len(batch)
    total = 0.0
    block_losses = []
    out_grads = []
    for k, c in enumerate(outs):
        per, g = rms_loss(c, target)
        block_losses.append(float(per.mean()))
        total += weights[k] * float(per.mean())
        out_grads.append(weights[k] * g / B)
    return total, block_losses, _backward_batch(batch, net, states, out_grads)


def train(dataset, net, cfg=TrainConfig(), on_epoch=None):
    """End-to-end gradient descent on the weighted intermediate losses.

    Returns ``(net, history)`` with one record per epoch: the mean weighted
    loss over minibatches and the mean unweighted loss of every block.
    """
    if not dataset:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    history = []
    initial = None
    bad_epochs = 0
    for epoch in range(cfg.epochs):
        w = weight_schedule(epoch, cfg.epochs, net.n_blocks)
        order = rng.permutation(len(dataset))
        losses, per_block = [], []
        for start in range(0, len(order), cfg.batch_size):
            batch = [dataset[i] for i in order[start:start + cfg.batch_size]]
            loss, blk, grads = loss_and_grads(batch, net, w)
            _apply_update(net.blocks, grads, cfg)
            losses.append(loss)
            per_block.append(blk)
        rec = {"epoch": epoch, "loss": float(np.mean(losses)),
               "block_losses": [float(v) for v in np.mean(per_block, axis=0)],
               "weights": [float(v) for v in w]}
        history.append(rec)
        log.info("epoch %d loss %.6g blocks %s", epoch, rec["loss"], rec["block_losses"])
        if on_epoch is not None:
            on_epoch(rec)
        if initial is None:
            initial = rec["loss"]
        if rec["loss"] > 10.0 * initial:
            bad_epochs += 1
            if bad_epochs >= 5:
                raise TrainingDiverged(
                    f"loss {rec['loss']:.4g} above 10x initial {initial:.4g} for 5 epochs (lr={cfg.learning_rate})")
        else:
            bad_epochs = 0
    return net, history


def pretrain_first_block(dataset, net, cfg=TrainConfig(), on_step=None):
    """Train block 0 alone against the targets, with DC outputs precomputed once.

    Returns the trained parameters; ``net`` is left untouched.
    """
    if not dataset:
        raise ValueError("empty dataset")
    params = copy_params(net.blocks[0])
    if cfg.pretrain_iters == 0:
        return params
    m = net.model
    inputs = np.stack([np.concatenate([_dc(s.c_init, s.d, s.curvature(m), net), s.c_init]) for s in dataset])
    targets = np.stack([s.c_truth for s in dataset])
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(dataset))
    pos = 0
    for it in range(cfg.pretrain_iters):
        if pos + cfg.batch_size > len(order):
            order = rng.permutation(len(dataset))
            pos = 0
        idx = order[pos:pos + cfg.batch_size]
        pos += len(idx)
        x = inputs[idx]
        y, tape = mixer_forward(x, params, net.mixer)
        per, g = rms_loss(y + x[:, 2:], targets[idx])
        _, grads = mixer_backward(tape, g / len(idx), params, net.mixer)
        _apply_update([params], [grads], cfg)
        if on_step is not None:
            on_step(it, float(per.mean()))
    return params


def broadcast(net, params):
    """Copy one block's parameters into every block."""
    net.blocks = [copy_params(params) for _ in net.blocks]
    return net


def evaluate_losses(dataset, net):
    """Mean per-block RMS error over a dataset (no parameter update)."""
    totals = np.zeros(net.n_blocks)
    for s in dataset:
        _, inter = infer(s.d, s.c_init, net, curv=s.curvature(net.model))
        totals += [float(rms_loss(c[None], s.c_truth[None])[0][0]) for c in inter]
    return totals / len(dataset)


# persistence ------------------------------------------------------------------

def config_hash(net):
    blob = json.dumps({"mixer": asdict(net.mixer), "surrogate": asdict(net.surrogate),
                       "n_blocks": net.n_blocks}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def save_net(net, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for k, params in enumerate(net.blocks):
        for name in PARAM_NAMES:
            fname = f"block{k}.{name}.dect"
            write_array(out / fname, params[name])
            files[f"{k}/{name}"] = {"file": fname, "shape": list(params[name].shape)}
    manifest = {"n_blocks": net.n_blocks, "mixer": asdict(net.mixer),
                "surrogate": asdict(net.surrogate), "config_hash": config_hash(net), "params": files}
    (out / "net.json").write_text(json.dumps(manifest, indent=2))
    return out / "net.json"


def load_net(in_dir, model):
    src = Path(in_dir)
    manifest = json.loads((src / "net.json").read_text())
    mixer = MixerConfig(**manifest["mixer"])
    surrogate = sir.SurrogateConfig(**manifest["surrogate"])
    blocks = []
    for k in range(manifest["n_blocks"]):
        blocks.append({name: read_array(src / manifest["params"][f"{k}/{name}"]["file"])
                       .reshape(manifest["params"][f"{k}/{name}"]["shape"]) for name in PARAM_NAMES})
    return UnrolledNet(blocks, model, surrogate, mixer)
