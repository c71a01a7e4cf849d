"""``eit`` command line: mesh, forward, dataset, reconstruct, sample, metrics, toy-score.

Every subcommand accepts ``--seed``, ``--config FILE`` (``key = value``
lines, keys named like the long options) and ``--out-dir DIR`` (relative
output paths are placed there).  Command-line flags override the config.
On success one ``key=value`` summary line goes to stdout; failures print
``error=<category> message=...`` to stderr and exit with 2 (usage),
3 (I/O) or 4 (numeric).
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import io
from .dgm.csd import CsdStarConfig, ImageNormalizer, RasterContext, csd_star_pipeline
from .dgm.sde import (DEFAULT_CORRECTOR_SNR, DEFAULT_CORRECTOR_STEPS, ScoreModel, ScoreTrainConfig,
                      SdeSchedule, pc_sample, train_score)
from .dgm.toy import GaussianMixture2D
from .fem import DEFAULT_CONTACT_IMPEDANCE, add_measurement_noise, forward_voltages
from .inverse import ForwardOperator, InverseConfig, reconstruct
from .mesh import build_disk_mesh, load_mesh, save_mesh
from .metrics import MetricReport, evaluate, summarize
from .nnet import load_net, save_net
from .phantom import DatasetContext, PhantomSpec, generate_dataset, rasterize_idw, sample_phantom

EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 2, 3, 4


class UsageError(Exception):
    pass


class InputError(Exception):
    """Unreadable or malformed input file."""


# ---------------------------------------------------------------- parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None, help="key = value file; flags override it")
    p.add_argument("--out-dir", default=None)


def _inverse_flags(p):
    p.add_argument("--lambda", dest="lam", type=float, default=0.01)
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--misfit-tol", type=float, default=0.0)
    p.add_argument("--contact-impedance", type=float, default=DEFAULT_CONTACT_IMPEDANCE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="eit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("mesh", help="build the disk mesh")
    _common(p)
    p.add_argument("--electrodes", type=int, default=16)
    p.add_argument("--refinement", type=int, default=7)
    p.add_argument("--coverage", type=float, default=0.5)
    p.add_argument("--out", default="mesh.txt")

    p = sub.add_parser("forward", help="simulate electrode voltages for a phantom")
    _common(p)
    p.add_argument("--mesh", default=None, help="mesh file (default: built-in mesh)")
    p.add_argument("--phantom", default=None, help="phantom JSON (overrides --kind)")
    p.add_argument("--kind", choices=("two", "four"), default="two")
    p.add_argument("--phantom-seed", type=int, default=None, help="defaults to --seed")
    p.add_argument("--snr", type=float, default=math.inf)
    p.add_argument("--contact-impedance", type=float, default=DEFAULT_CONTACT_IMPEDANCE)
    p.add_argument("--image", default=None, help="also export the rasterised phantom")
    p.add_argument("--side", type=int, default=128)
    p.add_argument("--out", default="v.csv")

    p = sub.add_parser("dataset", help="generate a phantom/measurement dataset")
    _common(p)
    p.add_argument("--kind", choices=("two", "four"), default="two")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--snr", type=float, default=40.0)
    p.add_argument("--split", default=None, help="train,val,test counts")
    p.add_argument("--side", type=int, default=128)
    p.add_argument("--refinement", type=int, default=7)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="data")

    p = sub.add_parser("reconstruct", help="Levenberg-Marquardt reconstruction")
    _common(p)
    p.add_argument("--mesh", default=None)
    p.add_argument("--measurements", default=None)
    _inverse_flags(p)
    p.add_argument("--trace", default=None, help="write iteration,misfit rows")
    p.add_argument("--image", default=None, help="also export the rasterised reconstruction")
    p.add_argument("--side", type=int, default=128)
    p.add_argument("--out", default="sigma_gn.csv")

    p = sub.add_parser("sample", help="score-based sampling (csd-star or unconditional pc)")
    _common(p)
    p.add_argument("--mode", choices=("csd-star", "pc"), default="csd-star")
    p.add_argument("--measurements", default=None)
    p.add_argument("--score", default=None, help="score checkpoint")
    p.add_argument("--mesh", default=None)
    p.add_argument("--k", type=int, default=1000)
    p.add_argument("--k-prime", type=int, default=600)
    p.add_argument("--corrector-steps", type=int, default=DEFAULT_CORRECTOR_STEPS)
    p.add_argument("--corrector-snr", type=float, default=DEFAULT_CORRECTOR_SNR)
    p.add_argument("--count", type=int, default=1, help="pc mode: number of samples")
    _inverse_flags(p)
    p.add_argument("--out", default="recon.bin")

    p = sub.add_parser("metrics", help="compare reconstructions to ground truth")
    _common(p)
    p.add_argument("--recon", default=None)
    p.add_argument("--gt", default=None)
    p.add_argument("--out", default="report.csv")

    p = sub.add_parser("toy-score", help="train a score network")
    _common(p)
    p.add_argument("--train", default="gmm2d", help="gmm2d or a dataset .bin file")
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--hidden", default="64,64")
    p.add_argument("--activation", choices=("tanh", "relu"), default="tanh")
    p.add_argument("--sigma-min", type=float, default=0.01)
    p.add_argument("--sigma-max", type=float, default=10.0)
    p.add_argument("--samples", type=int, default=1000, help="gmm2d: samples for the histogram")
    p.add_argument("--corrector-steps", type=int, default=DEFAULT_CORRECTOR_STEPS)
    p.add_argument("--out", default="score.ckpt")
    return parser


REQUIRED = {"reconstruct": ("measurements",), "sample": ("score",), "metrics": ("recon", "gt")}
OUTPUTS = ("out", "trace", "image")


def read_config(path) -> dict[str, str]:
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as err:
        raise InputError(f"cannot read config {path}: {err}") from err
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a subcommand is required (see eit --help)")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    if args.config:
        actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
        actions.update({a.option_strings[-1].lstrip("-").replace("-", "_"): a
                        for a in sub._actions if a.option_strings})
        defaults = {}
        for key, raw in read_config(args.config).items():
            if key not in actions or key in ("config", "help"):
                raise UsageError(f"unknown config key {key!r} for '{args.command}'")
            action = actions[key]
            try:
                value = action.type(raw) if action.type else raw
            except ValueError as err:
                raise UsageError(f"config key {key!r}: {err}") from err
            if action.choices and value not in action.choices:
                raise UsageError(f"config key {key!r} must be one of {sorted(action.choices)}")
            defaults[action.dest] = value
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    for name in REQUIRED.get(args.command, ()):
        if getattr(args, name) is None:
            raise UsageError(f"'{args.command}' needs --{name.replace('_', '-')}")
    base = Path(args.out_dir) if args.out_dir else None
    for name in OUTPUTS:
        value = getattr(args, name, None)
        if value is not None and base is not None and not Path(value).is_absolute():
            setattr(args, name, str(base / value))
    return args


# ---------------------------------------------------------------- helpers


def _summary(**items) -> str:
    def fmt(v):
        if isinstance(v, float):
            return "inf" if v == math.inf else repr(float(f"{v:.10g}"))
        return str(v)
    return " ".join(f"{k}={fmt(v)}" for k, v in items.items())


def _read(reader, path, what):
    try:
        return reader(path)
    except (OSError, ValueError, KeyError, IndexError) as err:
        raise InputError(f"cannot read {what} {path}: {err}") from err


def _mesh(path):
    return build_disk_mesh() if path is None else _read(load_mesh, path, "mesh")


def _inverse_config(args) -> InverseConfig:
    try:
        return InverseConfig(lam=args.lam, max_iters=args.iters, misfit_tol=args.misfit_tol)
    except ValueError as err:
        raise UsageError(str(err)) from err


def _write_text(path, text: str) -> None:
    with io.atomic_open(path, "w") as fh:
        fh.write(text)


def save_score(path, model: ScoreModel, task: str, **extra) -> None:
    meta = {"task": task, "sigma_min": model.schedule.sigma_min, "sigma_max": model.schedule.sigma_max,
            "K": model.schedule.K, "sigma_data": model.sigma_data, **extra}
    save_net(path, model.net, meta)


def load_score(path) -> tuple[ScoreModel, dict]:
    net, meta = _read(load_net, path, "score checkpoint")
    try:
        sched = SdeSchedule(meta["sigma_min"], meta["sigma_max"], int(meta["K"]))
        return ScoreModel(net, sched, float(meta["sigma_data"])), meta
    except KeyError as err:
        raise InputError(f"{path}: checkpoint lacks score metadata {err}") from err


# ---------------------------------------------------------------- commands


def cmd_mesh(args) -> str:
    try:
        m = build_disk_mesh(args.electrodes, args.refinement, args.coverage)
    except ValueError as err:
        raise UsageError(str(err)) from err
    save_mesh(m, args.out)
    return _summary(nodes=m.n_nodes, elements=m.n_elements, electrodes=m.n_electrodes, out=args.out)


def cmd_forward(args) -> str:
    mesh = _mesh(args.mesh)
    if args.phantom:
        spec = _read(lambda p: PhantomSpec.from_dict(json.loads(Path(p).read_text())), args.phantom, "phantom")
    else:
        spec = sample_phantom(args.kind, args.seed if args.phantom_seed is None else args.phantom_seed)
    sigma = spec.paint(mesh)
    v = forward_voltages(mesh, sigma, args.contact_impedance)
    v = add_measurement_noise(v, args.snr, args.seed)
    io.write_vector_csv(args.out, v)
    if args.image:
        io.export_image(rasterize_idw(mesh, sigma, grid=args.side, background=spec.background), args.image)
    return _summary(measurements=len(v), snr=float(args.snr), circles=len(spec.circles), out=args.out)


def cmd_dataset(args) -> str:
    split = None
    if args.split:
        try:
            split = tuple(int(s) for s in args.split.split(","))
        except ValueError as err:
            raise UsageError(f"--split: {err}") from err
    try:
        ctx = DatasetContext(mesh=build_disk_mesh(refinement=args.refinement), grid=args.side)
        written = generate_dataset(args.kind, args.count, args.snr, split, base_seed=args.seed,
                                   output_path=args.out, ctx=ctx, workers=args.workers)
    except ValueError as err:
        raise UsageError(str(err)) from err
    counts = {k: len(io.read_records(p)) for k, p in written.items() if k != "manifest"}
    return _summary(count=args.count, **counts, out=args.out)


def cmd_reconstruct(args) -> str:
    mesh = _mesh(args.mesh)
    v = _read(io.read_vector_csv, args.measurements, "measurements")
    sigma, trace = reconstruct(v, mesh, args.contact_impedance, config=_inverse_config(args))
    io.write_vector_csv(args.out, sigma)
    if args.trace:
        _write_text(args.trace, "".join(f"{i},{float(m)!r}\n" for i, m in trace.rows()))
    if args.image:
        io.export_image(rasterize_idw(mesh, sigma, grid=args.side), args.image)
    return _summary(iterations=len(trace.misfits) - 1, misfit=float(trace.misfits[-1]), out=args.out)


def cmd_sample(args) -> str:
    model, meta = load_score(args.score)
    try:
        schedule = SdeSchedule(model.schedule.sigma_min, model.schedule.sigma_max, args.k)
        if args.mode == "csd-star":
            cfg = CsdStarConfig(args.k, args.k_prime, corrector_steps=args.corrector_steps,
                                corrector_snr=args.corrector_snr)
        elif args.count < 1 or args.corrector_steps < 0 or args.corrector_snr <= 0:
            raise ValueError("--count must be >= 1, --corrector-steps >= 0, --corrector-snr > 0")
    except ValueError as err:
        raise UsageError(str(err)) from err
    if args.mode == "pc":
        x = pc_sample(model, schedule, corrector_steps=args.corrector_steps,
                      corrector_snr=args.corrector_snr, dim=model.dim, seed=args.seed,
                      n_samples=args.count)
        if "side" in meta:
            norm = ImageNormalizer(meta.get("offset", 1.0), meta.get("scale", 1.0))
            images = norm.to_image(x).reshape(args.count, meta["side"], meta["side"])
            io.write_records(args.out, np.arange(args.count), images)
        else:
            _write_text(args.out, "".join(",".join(repr(float(c)) for c in row) + "\n" for row in x))
        return _summary(mode="pc", samples=args.count, steps=args.k, out=args.out)
    if "side" not in meta:
        raise UsageError("csd-star needs an image score checkpoint (trained on a dataset)")
    if args.measurements is None:
        raise UsageError("csd-star needs --measurements")
    v = _read(io.read_vector_csv, args.measurements, "measurements")
    ctx = RasterContext(_mesh(args.mesh), side=int(meta["side"]), contact_impedances=args.contact_impedance,
                        normalizer=ImageNormalizer(meta.get("offset", 1.0), meta.get("scale", 1.0)))
    image = csd_star_pipeline(v, _inverse_config(args), model, cfg, ctx, schedule, seed=args.seed)
    io.export_image(image, args.out)
    return _summary(mode="csd-star", steps=args.k_prime, side=ctx.side, out=args.out)


def cmd_metrics(args) -> str:
    recon = _read(io.read_records, args.recon, "reconstructions")["image"]
    gt = _read(io.read_records, args.gt, "ground truth")["image"]
    if len(recon) != len(gt) or recon.shape[1:] != gt.shape[1:]:
        raise UsageError(f"{len(recon)} reconstructions of shape {recon.shape[1:]} vs "
                         f"{len(gt)} ground truths of shape {gt.shape[1:]}")
    try:
        reports = [evaluate(r.astype(float), g.astype(float)) for r, g in zip(recon, gt)]
    except ValueError as err:
        raise UsageError(str(err)) from err
    mean, std = summarize(reports)
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["pair", *MetricReport.names()])
    for i, rep in enumerate(reports):
        w.writerow([i, *(repr(float(x)) for x in rep.as_tuple())])
    w.writerow(["mean±std", *(f"{m!r}±{s!r}" for m, s in zip(mean.tolist(), std.tolist()))])
    _write_text(args.out, buf.getvalue())
    return _summary(pairs=len(reports), **dict(zip(MetricReport.names(), mean.tolist())))


def cmd_toy_score(args) -> str:
    try:
        hidden = tuple(int(h) for h in args.hidden.split(","))
        schedule = SdeSchedule(args.sigma_min, args.sigma_max, 1000)
        cfg = ScoreTrainConfig(steps=args.steps, batch=args.batch, lr=args.lr, hidden=hidden,
                               activation=args.activation, seed=args.seed)
    except ValueError as err:
        raise UsageError(str(err)) from err
    rng = np.random.default_rng(args.seed)
    if args.train == "gmm2d":
        gmm = GaussianMixture2D()
        model, losses = train_score(gmm.sample(20_000, rng), schedule, cfg)
        save_score(args.out, model, "gmm2d")
        x = pc_sample(model, schedule, corrector_steps=args.corrector_steps, dim=2, seed=args.seed,
                      n_samples=args.samples)
        hist = gmm.mode_weights(x)
        modes = {f"mode{i}": float(h) for i, h in enumerate(hist)}
        truth = {f"truth{i}": float(w) for i, w in enumerate(gmm.weights)}
        return _summary(task="gmm2d", steps=args.steps, loss=float(losses[-500:].mean()), **modes, **truth,
                        out=args.out)
    images = _read(io.read_records, args.train, "training images")["image"].astype(float)
    norm = ImageNormalizer()
    x = norm.to_model(images).reshape(len(images), -1)
    model, losses = train_score(x, schedule, cfg)
    save_score(args.out, model, "images", side=int(images.shape[1]), offset=norm.offset, scale=norm.scale)
    return _summary(task="images", images=len(images), steps=args.steps, loss=float(losses[-500:].mean()),
                    out=args.out)


COMMANDS = {"mesh": cmd_mesh, "forward": cmd_forward, "dataset": cmd_dataset,
            "reconstruct": cmd_reconstruct, "sample": cmd_sample, "metrics": cmd_metrics,
            "toy-score": cmd_toy_score}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        line = COMMANDS[args.command](args)
    except SystemExit as err:  # --help
        return int(err.code or 0)
    except UsageError as err:
        print(f"error=usage message={err}", file=sys.stderr)
        return EXIT_USAGE
    except (InputError, OSError) as err:
        print(f"error=io message={err}", file=sys.stderr)
        return EXIT_IO
    except (ArithmeticError, np.linalg.LinAlgError, RuntimeError, ValueError) as err:
        print(f"error=numeric message={type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
