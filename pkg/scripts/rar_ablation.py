"""Fine-tune a pretrained toy model with RAR at several stage counts and report RMSE by lead.

    python3 scripts/rar_ablation.py --stages 1 2 4 --seed 0
"""

import argparse

import numpy as np

from searth.data import SynthConfig, generate_dataset
from searth.evaluation import evaluate
from searth.model import ModelConfig
from searth.training import TrainConfig, finetune_rar, pretrain, tensor_params


def mean_rmse(ckpt, ds, leads):
    table = evaluate(tensor_params(ckpt), ckpt.model, ds, leads)
    return [np.mean([r.rmse for r in table.rows if r.lead_hours == L * ds.step_hours]) for L in leads]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--stages", type=int, nargs="+", default=[1, 2, 4])
    ap.add_argument("--k", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--pretrain-iters", type=int, default=2000)
    ap.add_argument("--finetune-iters", type=int, default=200)
    ap.add_argument("--leads", type=int, nargs="+", default=[4, 8, 12, 16])
    args = ap.parse_args()

    ds = generate_dataset(SynthConfig(seed=0))
    base, _ = pretrain(ModelConfig.toy(), TrainConfig(iterations=args.pretrain_iters, seed=args.seed), ds)
    print("lead steps   " + "  ".join(f"{L:8d}" for L in args.leads))
    print("pretrained   " + "  ".join(f"{v:8.4f}" for v in mean_rmse(base, ds, args.leads)))
    for m in args.stages:
        cfg = TrainConfig(mode="rar", iterations=args.finetune_iters, lr_initial=3e-5, schedule="constant",
                          k=args.k, stages=m, seed=args.seed)
        ckpt, _ = finetune_rar(base, cfg, ds)
        print(f"RAR M={m:<6d}" + "  ".join(f"{v:8.4f}" for v in mean_rmse(ckpt, ds, args.leads)))


if __name__ == "__main__":
    main()
