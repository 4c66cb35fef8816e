"""Condition a trained generator on a built-in observation layout and report honoring rates.

    python3 scripts/desk_condition.py --g runs/desk/generator.ckpt --example A --iters 2000
"""
import argparse
import time

import numpy as np

from geocond.assess import binarize_clean
from geocond.conditioner import PosteriorSpec, SamplerConfig, sample_conditional, train_sampler
from geocond.data import builtin_observations
from geocond.layers import load_generator, save_network


def honoring(G, I, obs, count, seed):
    imgs = sample_conditional(G, I, count, seed).numpy()[:, 0]
    clean = np.stack([binarize_clean(im) for im in imgs])
    return obs.honored_fraction(clean)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--g", required=True)
    ap.add_argument("--example", default="A")
    ap.add_argument("--lam", type=float, default=0.1)
    ap.add_argument("--iters", type=int, default=2000)
    ap.add_argument("--lr", type=float, default=1e-4)
    ap.add_argument("--entropy-weight", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--count", type=int, default=100)
    ap.add_argument("--save", default=None)
    args = ap.parse_args()

    G = load_generator(args.g)
    obs = builtin_observations(args.example, (G.image_size, G.image_size))
    spec = PosteriorSpec(G, obs, args.lam)
    cfg = SamplerConfig(max_iters=args.iters, lr=args.lr, seed=args.seed, n_w=G.nz, n_z=G.nz,
                        entropy_weight=args.entropy_weight, early_stop_window=0)
    t0 = time.time()

    def progress(it, obj, loss, ent):
        if it % 100 == 0:
            print(f"{it:6d}  obj={obj:+.4f}  loss={loss:.4f}  H={ent:+.3f}  {time.time() - t0:6.1f}s",
                  flush=True)

    I, trace = train_sampler(spec, cfg, progress=progress)
    frac = honoring(G, I, obs, args.count, args.seed + 1)
    print(f"trained {len(trace)} iterations in {time.time() - t0:.1f}s")
    print(f"mean honored {frac.mean():.3f}; realizations honoring >= 90%: {np.mean(frac >= 0.9):.2f}")
    if args.save:
        save_network(I, args.save)


if __name__ == "__main__":
    main()
