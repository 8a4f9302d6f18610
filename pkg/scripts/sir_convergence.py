"""Objective traces of plain separable-surrogate SIR vs. monotone FISTA on one phantom.

    python3 scripts/sir_convergence.py --iters 500 --out results/sir_convergence
"""
import argparse
from pathlib import Path

import numpy as np

from mbdect import metrics as mt
from mbdect import phantom as ph
from mbdect import pipeline as pl
from mbdect import recon_baseline as rb
from mbdect import sir
from mbdect.scenario import default_model


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--iters", type=int, default=500, help="iterations per method")
    ap.add_argument("--seed", type=int, default=3, help="phantom and noise seed")
    ap.add_argument("--out", type=Path, default=Path("results/sir_convergence"))
    args = ap.parse_args()
    m = default_model()
    geom = m.geometry
    spec = ph.make_specs(args.seed, 1)[0]
    truth = ph.rasterize(spec, geom.n_x, geom.n_y)
    d = pl.simulate_measurement(truth, m, args.seed)
    c0 = rb.fbp_decompose(d, m)
    recons, traces = {"fbp": c0}, {}
    for momentum in ("none", "mfista"):
        c, tr = sir.sir_reconstruct(d, c0, m, args.iters, pen=pl.REFERENCE_PENALTY, momentum=momentum)
        recons[f"sir_{momentum}"] = c
        traces[momentum] = tr
    floor = min(float(t.min()) for t in traces.values())
    curves = {}
    for label, mask, comp in pl.roi_masks(spec, geom):
        roi = mt.RoiSpec(label, mask, comp)
        curves[label] = {k: mt.rmae(v, roi, m) for k, v in recons.items()}
    written = mt.emit_report(curves, traces={f"gap_{k}": v - floor for k, v in traces.items()}, out_dir=args.out)
    for k, v in traces.items():
        print(f"{k:7s} objective {v[0]:.6g} -> {v[-1]:.6g}")
    print("wrote", len(written), "files to", args.out)


if __name__ == "__main__":
    main()
