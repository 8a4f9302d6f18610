"""Command-line front end: ``mbdect <command> ...``.

Every command writes its artifacts plus a run manifest (JSON: command line,
resolved options, input and output SHA-256 hashes, seed, version, wall time).

Exit codes: 0 ok, 2 config/schema error, 3 data or geometry mismatch,
4 numerical failure, 5 I/O error.
"""
import argparse
import hashlib
import json
import logging
import math
import sys
import time
from contextlib import nullcontext
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import forward_model as fm
from . import metrics as mt
from . import phantom as ph
from . import pipeline as pl
from . import recon_baseline as rb
from . import sir
from . import unroll as U
from .physics import TableError
from .projector import Geometry, GeometryMismatch
from .scenario import DEFAULT_SCENARIO, load_scenario, scan_model_from_dict
from .schemas import ConfigError, validate
from .tensor_io import ArrayFormatError, CsvParseError, read_array, write_array
from .unroll.mixer import MixerConfig

log = logging.getLogger("mbdect")

EXIT_OK, EXIT_CONFIG, EXIT_MISMATCH, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4, 5


# helpers ----------------------------------------------------------------------

def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_tree(paths, root=None):
    out = {}
    for p in paths:
        p = Path(p)
        files = sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p]
        for q in files:
            if q.name.endswith("manifest.json"):
                continue
            inside = root is not None and Path(root) in q.parents
            key = str(q.relative_to(root)) if inside else str(q)
            out[key] = sha256(q)
    return out


def write_manifest(path, args, inputs, outputs, started, wall, root=None):
    def plain(v):
        if isinstance(v, Path):
            return str(v)
        if isinstance(v, (list, tuple)):
            return [plain(x) for x in v]
        return v

    opts = {k: plain(v) for k, v in vars(args).items() if k != "func"}
    manifest = {
        "command": args.command,
        "argv": sys.argv[1:],
        "options": opts,
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "inputs": _hash_tree([p for p in inputs if p is not None]),
        "outputs": _hash_tree(outputs, root),
        "started_utc": started,
        "wall_time_s": wall,
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _load_model(path):
    if path is None:
        return scan_model_from_dict(DEFAULT_SCENARIO), None
    return load_scenario(path)[0], Path(path)


def _read_json(path, schema):
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"{path}: invalid JSON ({exc})") from None
    return validate(obj, schema)


def _expect_shape(arr, shape, what):
    if arr.shape != tuple(shape):
        raise GeometryMismatch(f"geometry mismatch: {what} has shape {arr.shape}, expected {tuple(shape)}")


def _build(field, factory, *a, **kw):
    """Dataclass construction with validation errors reported as config errors."""
    try:
        return factory(*a, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(field, str(exc)) from None


def _surrogate(args):
    return _build("step-scale", sir.SurrogateConfig, nonnegativity=args.nonneg, step_scale=args.step_scale)


def _penalty(args):
    return _build("penalty", sir.PenaltyConfig, args.penalty, args.beta, args.huber_delta)


def _write_trace(path, trace):
    with open(path, "w") as fh:
        fh.write("iteration,objective\n")
        for k, v in enumerate(trace):
            fh.write(f"{k},{float(v)!r}\n")


# commands ---------------------------------------------------------------------

def cmd_phantom(args):
    """Rasterize a phantom JSON (or a seeded random phantom) to a basis image."""
    model, _ = _load_model(args.scenario)
    geom = model.geometry
    if args.spec is not None:
        spec = ph.PhantomSpec.load(args.spec)
    else:
        spec = ph.make_specs(args.seed, 1)[0]
    img = ph.rasterize(spec, geom.n_x, geom.n_y)
    if not math.isclose(spec.field_of_view_cm / geom.n_x, geom.pixel_size_cm, rel_tol=1e-3):
        log.warning("phantom fov / n_x = %.4g cm differs from the scenario pixel size %.4g cm",
                    spec.field_of_view_cm / geom.n_x, geom.pixel_size_cm)
    write_array(args.out, img)
    spec_out = Path(args.out).with_suffix(".json")
    spec.save(spec_out)
    return [args.spec, args.scenario], [args.out, spec_out]


def cmd_dataset(args):
    """Simulate a training/evaluation set of random phantoms."""
    model, _ = _load_model(args.scenario)
    specs = ph.make_specs(args.seed, args.count)
    samples = pl.build_samples(specs, model, args.seed * 1000 + 17, target=args.target,
                               sir_iters=args.sir_iters)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, (spec, s) in enumerate(zip(specs, samples)):
        names = {key: f"sample{k:04d}.{key}.dect" for key in ("d", "c_init", "c_truth")}
        for key, fname in names.items():
            write_array(out / fname, getattr(s, key))
        spec.save(out / f"sample{k:04d}.phantom.json")
        entries.append(names)
    (out / "dataset.json").write_text(json.dumps(
        {"samples": entries, "target": args.target, "seed": args.seed,
         "geometry": model.geometry.to_json()}, indent=2) + "\n")
    return [args.scenario], [out]


def load_dataset(path, model):
    root = Path(path)
    meta = json.loads((root / "dataset.json").read_text())
    if Geometry.from_json(meta["geometry"]) != model.geometry:
        raise GeometryMismatch("geometry mismatch: dataset was simulated for a different geometry")
    out = []
    for e in meta["samples"]:
        s = U.Sample(*(read_array(root / e[k]) for k in ("d", "c_init", "c_truth")))
        _expect_shape(s.d, (2,) + model.geometry.sino_shape, f"{e['d']}")
        _expect_shape(s.c_init, (2,) + model.geometry.image_shape, f"{e['c_init']}")
        _expect_shape(s.c_truth, (2,) + model.geometry.image_shape, f"{e['c_truth']}")
        out.append(s)
    return out


def cmd_simulate(args):
    """Noisy dual-energy counts for a basis image."""
    model, _ = _load_model(args.scenario)
    c = read_array(args.phantom)
    _expect_shape(c, (2,) + model.geometry.image_shape, "phantom image")
    d = pl.simulate_measurement(c, model, args.seed)
    write_array(args.out, d)
    return [args.scenario, args.phantom], [args.out]


def cmd_recon(args):
    model, _ = _load_model(args.scenario)
    geom = model.geometry
    d = read_array(args.counts)
    _expect_shape(d, (2,) + geom.sino_shape, "counts")
    inputs = [args.scenario, args.counts, args.init]
    if args.init is not None:
        c0 = read_array(args.init)
        _expect_shape(c0, (2,) + geom.image_shape, "initial image")
    else:
        c0 = rb.fbp_decompose(d, model, args.window)
    outputs = [args.out]
    if args.mode == "fbp":
        c = c0
    elif args.mode == "sir":
        c, trace = sir.sir_reconstruct(d, c0, model, args.iters, _surrogate(args), _penalty(args),
                                       momentum=args.momentum, log=log.info)
        if args.trace_out is not None:
            _write_trace(args.trace_out, trace)
            outputs.append(args.trace_out)
    else:
        if args.net is None:
            raise ConfigError("net", "recon unrolled needs --net")
        net = U.load_net(args.net, model)
        inputs.append(args.net)
        c, _ = U.infer(d, c0, net)
    write_array(args.out, c)
    return inputs, outputs


def _train_config(args):
    cfg = _read_json(args.config, "train") if args.config is not None else {}
    pick = {k: cfg[k] for k in ("epochs", "learning_rate", "batch_size", "seed", "pretrain_iters", "clip_norm")
            if k in cfg}
    for flag, key in (("epochs", "epochs"), ("lr", "learning_rate"), ("batch_size", "batch_size"),
                      ("seed", "seed"), ("pretrain_iters", "pretrain_iters")):
        if getattr(args, flag) is not None:
            pick[key] = getattr(args, flag)
    blocks = args.blocks if args.blocks is not None else cfg.get("blocks", 4)
    mixer = _build("mixer", MixerConfig, **cfg.get("mixer", {}))
    surrogate = _build("surrogate", sir.SurrogateConfig, **cfg.get("surrogate", {}))
    return _build("train", U.TrainConfig, **pick), blocks, mixer, surrogate


def _write_losses(path, history, pretrain_losses):
    n = len(history[0]["block_losses"]) if history else 0
    with open(path, "w") as fh:
        fh.write("phase,step,loss," + ",".join(f"block{k}" for k in range(n)) + "\n")
        for i, v in enumerate(pretrain_losses):
            fh.write(f"pretrain,{i},{v!r}" + "," * n + "\n")
        for rec in history:
            fh.write(f"train,{rec['epoch']},{rec['loss']!r}," + ",".join(repr(v) for v in rec["block_losses"]) + "\n")


def train_network(samples, model, cfg, blocks, mixer=MixerConfig(), surrogate=sir.SurrogateConfig()):
    net = U.make_net(model, blocks, seed=cfg.seed, mixer=mixer, surrogate=surrogate)
    pre = []
    theta = U.pretrain_first_block(samples, net, cfg, on_step=lambda i, v: pre.append(v))
    U.broadcast(net, theta)
    net, history = U.train(samples, net, cfg)
    return net, history, pre


def cmd_train(args):
    model, _ = _load_model(args.scenario)
    cfg, blocks, mixer, surrogate = _train_config(args)
    samples = load_dataset(args.dataset, model)
    net, history, pre = train_network(samples, model, cfg, blocks, mixer, surrogate)
    U.save_net(net, args.out)
    outputs = [args.out]
    if args.loss_out is not None:
        _write_losses(args.loss_out, history, pre)
        outputs.append(args.loss_out)
    return [args.scenario, args.dataset, args.config], outputs


def _profiles(images, axis):
    out = {}
    for ch, name in enumerate(("c1", "c2")):
        series = {}
        for label, img in images.items():
            n = img.shape[2] if axis == 0 else img.shape[1]
            series[label] = mt.profile(img[ch], axis, n // 2)
        out[name] = series
    return out


def cmd_eval(args):
    model, _ = _load_model(args.scenario)
    shape = model.geometry.image_shape
    rois = mt.load_rois(args.roi, shape, model.geometry.pixel_size_cm)
    images = {}
    for path in args.recons:
        img = read_array(path)
        _expect_shape(img, (2,) + shape, str(path))
        images[Path(path).stem] = img
    curves = {}
    for roi in rois:
        curves[roi.label] = {label: mt.rmae(img, roi, model) for label, img in images.items()}
    if len(rois) > 1:
        curves["mean"] = {label: np.mean([curves[r.label][label] for r in rois], axis=0) for label in images}
    written = mt.emit_report(curves, _profiles(images, 0), None, args.out_dir)
    return [args.scenario, args.roi] + list(args.recons), written


def _demo_model(size):
    if size == 64:
        return scan_model_from_dict(DEFAULT_SCENARIO)
    pixel = 6.4 / size
    n_det = int(math.ceil(size * 1.5))
    obj = dict(DEFAULT_SCENARIO, geometry=Geometry(n_det, n_det, pixel, size, size, pixel).to_json())
    return scan_model_from_dict(obj)


def cmd_demo(args):
    """Synthetic end-to-end run: phantom, scans, FBP / SIR / unrolled reconstructions, RMAE and profiles."""
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = _demo_model(args.size)
    geom = model.geometry
    spec = ph.make_specs(args.seed, 1)[0]
    truth = ph.rasterize(spec, geom.n_x, geom.n_y)
    d = pl.simulate_measurement(truth, model, args.seed)
    spec.save(out / "phantom.json")
    write_array(out / "phantom.dect", truth)
    write_array(out / "counts.dect", d)
    model.geometry.save(out / "geometry.json")

    c_fbp = rb.fbp_decompose(d, model)
    log.info("fbp done")
    c_sir, trace = pl.reference_recon(d, c_fbp, model, n_iter=args.sir_iters)
    log.info("sir done")
    train_specs = ph.make_specs(args.seed + 1, args.train_samples)
    samples = pl.build_samples(train_specs, model, args.seed * 1000 + 1, target="phantom")
    cfg = U.TrainConfig(epochs=args.epochs, learning_rate=args.lr, batch_size=min(4, len(samples)),
                        seed=args.seed, pretrain_iters=args.pretrain_iters)
    net, history, pre = train_network(samples, model, cfg, args.blocks)
    U.save_net(net, out / "net")
    _write_losses(out / "losses.csv", history, pre)
    c_net, _ = U.infer(d, c_fbp, net)
    log.info("unrolled inference done")
    recons = {"fbp": c_fbp, "sir": c_sir, "unrolled": c_net}
    for k, v in recons.items():
        write_array(out / f"recon_{k}.dect", v)
    curves = {}
    per_roi = []
    for label, mask, comp in pl.roi_masks(spec, geom):
        roi = mt.RoiSpec(label, mask, comp)
        curves[label] = {k: mt.rmae(v, roi, model) for k, v in recons.items()}
        per_roi.append(curves[label])
    curves["mean"] = {k: np.mean([c[k] for c in per_roi], axis=0) for k in recons}
    mt.emit_report(curves, _profiles(dict(recons, truth=truth), 0), {"sir": trace}, out)
    return [], [out]


# parser -----------------------------------------------------------------------

def _positive_int(text):
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="mbdect", description=__doc__.split("\n")[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter,
                                epilog="exit codes: 0 ok, 2 config/schema error, 3 data or geometry mismatch, "
                                       "4 numerical failure, 5 I/O error")
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="cap BLAS/OpenMP threads used by numpy and scipy")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded fixed-order reductions for bit-exact output")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def scenario_arg(sp):
        sp.add_argument("--scenario", type=Path, default=None,
                        help="scenario JSON (geometry, spectra, materials); default: shipped 64x64 scenario")

    sp = sub.add_parser("phantom", help="rasterize a phantom spec to a basis image")
    sp.add_argument("spec", type=Path, nargs="?", default=None, help="phantom JSON; omit to draw a random one")
    sp.add_argument("--seed", type=_nonneg_int, default=0, help="seed for the random phantom (no spec given)")
    scenario_arg(sp)
    sp.add_argument("--out", type=Path, required=True, help="output basis image (.dect); spec JSON written beside it")
    sp.set_defaults(func=cmd_phantom)

    sp = sub.add_parser("dataset", help="simulate random phantoms with FBP starts and training targets")
    scenario_arg(sp)
    sp.add_argument("--count", type=_positive_int, required=True, help="number of samples")
    sp.add_argument("--seed", type=_nonneg_int, default=0, help="phantom and noise seed")
    sp.add_argument("--target", choices=("phantom", "sir"), default="phantom",
                    help="training target: rasterized truth or a penalized SIR reference")
    sp.add_argument("--sir-iters", type=_positive_int, default=pl.REFERENCE_ITERS,
                    help="iterations for --target sir")
    sp.add_argument("--out", type=Path, required=True, help="output directory")
    sp.set_defaults(func=cmd_dataset)

    sp = sub.add_parser("simulate", help="Poisson counts for both spectra")
    scenario_arg(sp)
    sp.add_argument("--phantom", type=Path, required=True, help="basis image (.dect)")
    sp.add_argument("--seed", type=_nonneg_int, required=True, help="noise seed")
    sp.add_argument("--out", type=Path, required=True, help="output counts (.dect, shape 2 x views x bins)")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("recon", help="reconstruct basis images from counts")
    sp.add_argument("mode", choices=("fbp", "sir", "unrolled"), help="reconstruction method")
    scenario_arg(sp)
    sp.add_argument("--counts", type=Path, required=True, help="measured counts (.dect)")
    sp.add_argument("--init", type=Path, default=None, help="starting basis image; default: FBP decomposition")
    sp.add_argument("--window", choices=("hann", "ram-lak"), default="hann", help="FBP apodization")
    sp.add_argument("--iters", type=_positive_int, default=pl.REFERENCE_ITERS, help="SIR iterations")
    sp.add_argument("--penalty", choices=("none", "quadratic-difference", "huber"), default="none",
                    help="SIR roughness penalty")
    sp.add_argument("--beta", type=float, default=0.0, help="penalty weight")
    sp.add_argument("--huber-delta", type=float, default=0.01, help="Huber threshold")
    sp.add_argument("--step-scale", type=float, default=1.0, help="surrogate step scale in (0, 1]")
    sp.add_argument("--nonneg", action=argparse.BooleanOptionalAction, default=True,
                    help="clamp basis images at zero")
    sp.add_argument("--momentum", choices=("none", "mfista"), default="none",
                    help="plain surrogate steps or monotone FISTA")
    sp.add_argument("--trace-out", type=Path, default=None, help="CSV of (iteration, objective)")
    sp.add_argument("--net", type=Path, default=None, help="trained network directory (unrolled mode)")
    sp.add_argument("--out", type=Path, required=True, help="output basis image (.dect)")
    sp.set_defaults(func=cmd_recon)

    sp = sub.add_parser("train", help="pretrain the first block, broadcast, then train end to end")
    scenario_arg(sp)
    sp.add_argument("--dataset", type=Path, required=True, help="directory written by 'dataset'")
    sp.add_argument("--config", type=Path, default=None, help="training JSON; flags override it")
    sp.add_argument("--epochs", type=_nonneg_int, default=None, help="end-to-end training epochs (default 20)")
    sp.add_argument("--lr", type=float, default=None, help="gradient-descent learning rate (default 0.05)")
    sp.add_argument("--batch-size", type=_positive_int, default=None, help="samples per update (default 4)")
    sp.add_argument("--blocks", type=_positive_int, default=None, help="number of update blocks")
    sp.add_argument("--pretrain-iters", type=_nonneg_int, default=None,
                    help="first-block pretraining iterations (default 2000)")
    sp.add_argument("--seed", type=_nonneg_int, default=None, help="initialization and shuffling seed")
    sp.add_argument("--loss-out", type=Path, default=None, help="CSV of per-epoch losses per block")
    sp.add_argument("--out", type=Path, required=True, help="output network directory")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="RMAE curves and profiles for reconstructions")
    sp.add_argument("recons", type=Path, nargs="+", help="basis images (.dect); file stems label the series")
    scenario_arg(sp)
    sp.add_argument("--roi", type=Path, required=True, help="ROI JSON")
    sp.add_argument("--out-dir", type=Path, required=True, help="directory for CSV/SVG reports")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("demo", help="end-to-end synthetic run")
    sp.add_argument("--seed", type=_nonneg_int, default=7, help="seed for phantoms, noise and training")
    sp.add_argument("--out-dir", type=Path, required=True, help="output directory")
    sp.add_argument("--size", type=_positive_int, default=64, help="image size (pixels across a 6.4 cm field)")
    sp.add_argument("--sir-iters", type=_positive_int, default=100, help="iterations of the SIR comparison")
    sp.add_argument("--train-samples", type=_positive_int, default=8, help="simulated training phantoms")
    sp.add_argument("--epochs", type=_nonneg_int, default=2, help="end-to-end training epochs")
    sp.add_argument("--pretrain-iters", type=_nonneg_int, default=50, help="first-block pretraining iterations")
    sp.add_argument("--blocks", type=_positive_int, default=4, help="number of update blocks")
    sp.add_argument("--lr", type=float, default=0.02, help="learning rate")
    sp.set_defaults(func=cmd_demo)
    return p


def _thread_limit(args):
    n = 1 if args.deterministic else args.threads
    if n is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _manifest_path(args, outputs):
    for attr in ("out_dir",):
        if getattr(args, attr, None) is not None:
            return Path(getattr(args, attr)) / "manifest.json", Path(getattr(args, attr))
    first = Path(outputs[0])
    if first.is_dir():
        return first / "manifest.json", first
    return first.with_name(first.name + ".manifest.json"), None


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    try:
        with _thread_limit(args):
            inputs, outputs = args.func(args)
        path, root = _manifest_path(args, outputs)
        write_manifest(path, args, inputs, outputs, started, time.perf_counter() - t0, root)
    except (ConfigError, TableError, CsvParseError) as exc:
        print(f"mbdect: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GeometryMismatch as exc:
        print(f"mbdect: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (FloatingPointError, U.TrainingDiverged) as exc:
        print(f"mbdect: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ArrayFormatError) as exc:
        print(f"mbdect: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
