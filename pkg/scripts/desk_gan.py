"""Train the desk-scale WGAN on synthetic channel images and save checkpoints.

    python3 scripts/desk_gan.py --out runs/desk --iters 5000 --width 8
"""
import argparse
import time
from pathlib import Path

from geocond.data import save_dataset, synth_channels
from geocond.gan import GanConfig, train_gan
from geocond.layers import save_network


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--iters", type=int, default=5000)
    ap.add_argument("--width", type=int, default=8)
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--checkpoint-every", type=int, default=1000)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = synth_channels(args.n, args.size, args.size, args.seed)
    save_dataset(ds, out / "train.geod")
    cfg = GanConfig(max_iters=args.iters, width=args.width, seed=args.seed, out_dir=str(out),
                    checkpoint_every=args.checkpoint_every)
    t0 = time.time()

    def progress(it, d, g):
        if it % 100 == 0:
            print(f"{it:6d}  d={d:+.5f}  g={g:+.5f}  {time.time() - t0:7.1f}s", flush=True)

    G, D, trace = train_gan(ds, cfg, progress)
    save_network(G, out / "generator.ckpt")
    save_network(D, out / "discriminator.ckpt")
    trace.to_csv(out / "gan_trace.csv")
    print(f"done in {time.time() - t0:.1f}s")


if __name__ == "__main__":
    main()
