"""Compare generator checkpoints against their training set with ANODI scores.

    python3 scripts/desk_assess.py runs/desk/train.geod runs/desk/generator_*.ckpt
"""
import argparse

import numpy as np

from geocond.assess import anodi_scores
from geocond.data import load_dataset, reference_image
from geocond.gan import sample_unconditional
from geocond.layers import load_generator


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("train")
    ap.add_argument("checkpoints", nargs="+")
    ap.add_argument("--count", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    train = load_dataset(args.train).images
    size = train.shape[-1]
    ref = reference_image(4 * size)
    base = anodi_scores(train[:args.count], ref, resolutions=(1,)).get("generated")
    print(f"training set: inconsistency={base.inconsistency:.4f} diversity={base.diversity:.4f}")
    for path in args.checkpoints:
        G = load_generator(path)
        x = sample_unconditional(G, args.count, args.seed).numpy()[:, 0]
        row = anodi_scores(x, ref, resolutions=(1,)).get("generated")
        print(f"{path}: inconsistency={row.inconsistency:.4f} ({row.inconsistency / base.inconsistency:.2f}x) "
              f"diversity={row.diversity:.4f} ({row.diversity / base.diversity:.2f}x) "
              f"pixel std={x.std(0).mean():.3f}")


if __name__ == "__main__":
    main()
