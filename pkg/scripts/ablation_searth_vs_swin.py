"""Pretrain the toy model with earth and planar masking and compare validation loss.

    python3 scripts/ablation_searth_vs_swin.py --seeds 0 1 2 --iters 2000
"""

import argparse

import numpy as np

from searth.data import SynthConfig, generate_dataset
from searth.model import ModelConfig
from searth.training import TrainConfig, one_step_loss, persistence_loss, pretrain


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--iters", type=int, default=2000)
    ap.add_argument("--data-seed", type=int, default=0)
    args = ap.parse_args()

    ds = generate_dataset(SynthConfig(seed=args.data_seed))
    print(f"persistence  {persistence_loss(ds):.4f}")
    for mode in ("earth", "planar"):
        losses = []
        for seed in args.seeds:
            ckpt, _ = pretrain(ModelConfig.toy(mask_mode=mode), TrainConfig(iterations=args.iters, seed=seed), ds)
            losses.append(one_step_loss(ckpt, ckpt.model, ds))
            print(f"{mode:7s} seed {seed}  {losses[-1]:.4f}")
        print(f"{mode:7s} median  {np.median(losses):.4f}")


if __name__ == "__main__":
    main()
