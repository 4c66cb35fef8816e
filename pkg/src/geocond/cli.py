"""Command-line entry point.

Every subcommand accepts ``--seed``, ``--config`` (a ``key=value`` file) and
``--out``. Values resolve as built-in defaults < config file < flags.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, GeocondError, UsageError

PROG = "geocond"


@dataclass
class Opt:
    flag: str
    type: type
    default: object
    help: str = ""
    choices: tuple | None = None

    @property
    def dest(self) -> str:
        return self.flag.lstrip("-").replace("-", "_")


COMMON = [
    Opt("--seed", int, 0, "master random seed"),
    Opt("--out", str, None, "output path or directory"),
]

COMMANDS: dict[str, list[Opt]] = {
    "gen-data": [
        Opt("--n", int, 1000, "number of training images"),
        Opt("--size", int, 64, "image height and width"),
        Opt("--reference-size", int, 256, "side of the reference image"),
        Opt("--reference-out", str, None, "reference image path (default: next to --out)"),
    ],
    "train-gan": [
        Opt("--data", str, None, "training dataset (GEOD)"),
        Opt("--iters", int, 5000, "generator iterations"),
        Opt("--mode", str, "wgan", "adversarial objective", ("wgan", "standard")),
        Opt("--batch-size", int, 32),
        Opt("--n-critic", int, 5),
        Opt("--clip", float, 0.01),
        Opt("--lr", float, 1e-4),
        Opt("--beta1", float, 0.5),
        Opt("--nz", int, 30, "latent dimension"),
        Opt("--width", int, 64, "base channel count of both networks"),
        Opt("--checkpoint-every", int, 1000),
    ],
    "train-inference": [
        Opt("--g", str, None, "generator checkpoint"),
        Opt("--obs", str, None, "observation file (i j val per line)"),
        Opt("--example", str, None, "built-in observation layout A-I"),
        Opt("--lam", float, 0.1, "prior weight lambda"),
        Opt("--iters", int, 10000),
        Opt("--batch-size", int, 64),
        Opt("--k", int, 0, "neighbour order (0 = floor(sqrt(batch)))"),
        Opt("--lr", float, 1e-4),
        Opt("--hidden", int, 512),
        Opt("--depth", int, 5),
        Opt("--early-stop-window", int, 500),
    ],
    "sample": [
        Opt("--g", str, None, "generator checkpoint"),
        Opt("--i", str, None, "inference checkpoint (conditional sampling)"),
        Opt("--count", int, 30),
        Opt("--geod", str, None, "also write the batch as a GEOD dataset"),
    ],
    "assess": [
        Opt("--sets", str, None, "comma-separated name=path.geod realization sets"),
        Opt("--reference", str, None, "reference image (GEOD with one image)"),
        Opt("--d", str, None, "standard-mode discriminator checkpoint"),
        Opt("--train", str, None, "training dataset for the memorization check"),
        Opt("--resolutions", str, "1,2,4,8", "downsampling factors"),
        Opt("--window", int, 4),
        Opt("--mds-iters", int, 300),
        Opt("--mds-tol", float, 1e-3),
        Opt("--bins", int, 20),
        Opt("--blur-sigma", float, 1.0),
    ],
    "toy-mixture": [
        Opt("--case", str, "1d", "target mixture", ("1d", "2d")),
        Opt("--iters", int, 1000),
        Opt("--points", int, 0, "samples to draw (0 = 1000 for 1d, 4000 for 2d)"),
        Opt("--lr", float, 1e-4),
        Opt("--batch-size", int, 64),
        Opt("--hidden", int, 512),
        Opt("--depth", int, 5),
        Opt("--bins", int, 50),
    ],
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=PROG, description="Generator training, conditioning and assessment.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, opts in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key=value file")
        for o in COMMON + opts:
            p.add_argument(o.flag, type=o.type, default=argparse.SUPPRESS, help=o.help,
                           choices=o.choices)
    return parser


def read_config(path, opts: list[Opt]) -> dict:
    known = {o.dest: o for o in opts}
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path} line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigError(f"{path} line {lineno}: unknown key {key!r}")
        o = known[key]
        try:
            out[key] = o.type(value)
        except ValueError as exc:
            raise ConfigError(f"{path} line {lineno}: bad value for {key}: {value!r}") from exc
        if o.choices and out[key] not in o.choices:
            raise ConfigError(f"{path} line {lineno}: {key} must be one of {o.choices}")
    return out


def resolve(command: str, ns: argparse.Namespace) -> argparse.Namespace:
    opts = COMMON + COMMANDS[command]
    values = {o.dest: o.default for o in opts}
    if ns.config:
        values.update(read_config(ns.config, opts))
    for o in opts:
        if hasattr(ns, o.dest):
            values[o.dest] = getattr(ns, o.dest)
    return argparse.Namespace(command=command, **values)


def _need(args, *names):
    for n in names:
        if getattr(args, n) in (None, ""):
            raise UsageError(f"--{n.replace('_', '-')} is required")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_generator(path):
    from .layers import load_generator

    if not Path(path).is_file():
        raise UsageError(f"generator checkpoint not found: {path}")
    return load_generator(path)


# ---------------------------------------------------------------- commands
def cmd_gen_data(args) -> int:
    from .data import reference_image, save_dataset, synth_channels, Dataset

    _need(args, "out")
    if args.size < 16:
        raise UsageError(f"--size must be at least 16, got {args.size}")
    if args.n < 1:
        raise UsageError("--n must be positive")
    from .seeding import int_seed

    ds = synth_channels(args.n, args.size, args.size, int_seed(args.seed, "train-images"))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    ref_path = Path(args.reference_out) if args.reference_out else out.with_suffix(".reference.geod")
    ref = reference_image(args.reference_size, int_seed(args.seed, "reference"))
    save_dataset(Dataset(ref[None]), ref_path)
    print(f"wrote {out}: N={len(ds)} dims={ds.height}x{ds.width} "
          f"channel_fraction={ds.channel_fraction():.4f}; reference {ref_path}")
    return 0


def cmd_train_gan(args) -> int:
    from .data import load_dataset
    from .gan import GanConfig, train_gan
    from .layers import save_network

    _need(args, "data", "out")
    ds = load_dataset(args.data)
    out = _out_dir(args)
    cfg = GanConfig(mode=args.mode, batch_size=args.batch_size, n_critic=args.n_critic,
                    clip=args.clip, lr=args.lr, beta1=args.beta1, max_iters=args.iters,
                    seed=args.seed, nz=args.nz, width=args.width,
                    checkpoint_every=args.checkpoint_every, out_dir=str(out))
    G, D, trace = train_gan(ds, cfg)
    save_network(G, out / "generator.ckpt")
    save_network(D, out / "discriminator.ckpt")
    trace.to_csv(out / "gan_trace.csv")
    last = f" final d_loss={trace.d_loss[-1]:.5f} g_loss={trace.g_loss[-1]:.5f}" if len(trace) else ""
    print(f"trained {args.iters} iterations ({trace.d_updates} critic updates);{last}")
    return 0


def cmd_train_inference(args) -> int:
    from .conditioner import PosteriorSpec, SamplerConfig, train_sampler
    from .data import builtin_observations, load_observations
    from .layers import save_network

    _need(args, "g", "out")
    if bool(args.obs) == bool(args.example):
        raise UsageError("give exactly one of --obs and --example")
    G = _load_generator(args.g)
    grid = (G.image_size, G.image_size)
    obs = load_observations(args.obs, grid) if args.obs else builtin_observations(args.example, grid)
    spec = PosteriorSpec(G, obs, args.lam)
    cfg = SamplerConfig(batch_size=args.batch_size, k=args.k or None, lr=args.lr,
                        max_iters=args.iters, seed=args.seed, n_w=G.nz, n_z=G.nz,
                        hidden=args.hidden, depth=args.depth,
                        early_stop_window=args.early_stop_window)
    out = _out_dir(args)
    I, trace = train_sampler(spec, cfg)
    save_network(I, out / "inference.ckpt")
    trace.to_csv(out / "sampler_trace.csv")
    tail = f" final objective={trace.objective[-1]:.5f}" if len(trace) else ""
    print(f"{len(obs)} observations, {len(trace)} iterations;{tail}")
    return 0


def cmd_sample(args) -> int:
    from .conditioner import sample_conditional
    from .data import Dataset, save_dataset, write_pgm
    from .gan import sample_unconditional
    from .layers import load_inference

    _need(args, "g", "out")
    G = _load_generator(args.g)
    if args.i:
        if not Path(args.i).is_file():
            raise UsageError(f"inference checkpoint not found: {args.i}")
        I = load_inference(args.i)
        imgs = sample_conditional(G, I, args.count, args.seed).numpy()
    else:
        imgs = sample_unconditional(G, args.count, args.seed).numpy()
    out = _out_dir(args)
    imgs = np.clip(imgs[:, 0], -1, 1)
    for k, img in enumerate(imgs):
        write_pgm(img, out / f"sample_{k:04d}.pgm")
    if args.geod:
        save_dataset(Dataset(imgs), args.geod)
    print(f"wrote {len(imgs)} {'conditional' if args.i else 'unconditional'} samples to {out}")
    return 0


def _parse_sets(text: str) -> dict[str, str]:
    sets = {}
    for item in text.split(","):
        if "=" not in item:
            raise UsageError(f"--sets entries must be name=path, got {item!r}")
        name, path = (s.strip() for s in item.split("=", 1))
        sets[name] = path
    return sets


def cmd_assess(args) -> int:
    from . import assess
    from .data import load_dataset
    from .layers import load_discriminator

    _need(args, "sets", "reference", "out")
    sets = {name: load_dataset(p).images for name, p in _parse_sets(args.sets).items()}
    ref = load_dataset(args.reference).images[0]
    try:
        resolutions = tuple(int(r) for r in args.resolutions.split(","))
    except ValueError as exc:
        raise UsageError(f"bad --resolutions {args.resolutions!r}") from exc
    out = _out_dir(args)

    report = assess.anodi_scores(sets, ref, resolutions, args.window)
    report.to_csv(out / "anodi.csv")

    names, hists = [], []
    for name, imgs in sets.items():
        hs = assess.histograms(imgs, 1, args.window)
        hists += hs
        names += [(name, i) for i in range(len(hs))]
    emb = assess.smacof_mds(assess.js_matrix(hists), 2, args.mds_iters, args.mds_tol, args.seed)
    assess.write_embedding_csv(out / "embedding.csv",
                               [(m, i, x, y) for (m, i), (x, y) in zip(names, emb.points)])

    if args.d:
        D = load_discriminator(args.d)
        for name, h in assess.discriminator_histogram(D, sets, args.bins).items():
            h.to_csv(out / f"histogram_{name}.csv")
    if args.train:
        train = load_dataset(args.train).images
        for name, imgs in sets.items():
            assess.memorization_check(imgs, train, args.blur_sigma).to_csv(out / f"memorization_{name}.csv")
    for r in report.rows:
        print(f"{r.method} {assess.resolution_label(r.resolution)}: "
              f"inconsistency={r.inconsistency:.5f} diversity={r.diversity:.5f}")
    return 0


def cmd_toy_mixture(args) -> int:
    import csv

    from .toy import (DEFAULT_POINTS, assignment_fractions, histogram_js, mixture_for,
                      toy_config, toy_samples, train_toy)

    _need(args, "out")
    gm = mixture_for(args.case)
    cfg = toy_config(args.case, max_iters=args.iters, seed=args.seed, lr=args.lr,
                     batch_size=args.batch_size, hidden=args.hidden, depth=args.depth)
    I, trace = train_toy(args.case, cfg)
    points = args.points or DEFAULT_POINTS[args.case]
    x = toy_samples(I, points, args.seed)
    out = _out_dir(args)
    with open(out / "samples.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index"] + [f"x{d}" for d in range(gm.dim)])
        for i, row in enumerate(x):
            w.writerow([i] + [repr(float(v)) for v in row])
    if gm.dim == 1:
        js, edges, counts, masses = histogram_js(x, gm, args.bins)
        with open(out / "histogram.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_lo", "bin_hi", "count", "target_mass"])
            for lo, hi, c, m in zip(edges[:-1], edges[1:], counts, masses):
                w.writerow([repr(float(lo)), repr(float(hi)), int(c), repr(float(m))])
        summary = f"js={js!r}"
    else:
        frac = assignment_fractions(x, gm)
        with open(out / "histogram.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["component", "fraction"])
            for c, f in enumerate(frac):
                w.writerow([c, repr(float(f))])
        summary = "fractions=" + ",".join(f"{f:.4f}" for f in frac)
    trace.to_csv(out / "sampler_trace.csv")
    (out / "score.txt").write_text(summary + "\n")
    print(f"{args.case}: {len(trace)} iterations, {points} points, {summary}")
    return 0


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train-gan": cmd_train_gan,
    "train-inference": cmd_train_inference,
    "sample": cmd_sample,
    "assess": cmd_assess,
    "toy-mixture": cmd_toy_mixture,
}


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        args = resolve(ns.command, ns)
        return HANDLERS[ns.command](args)
    except UsageError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 2
    except (GeocondError, OSError) as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
