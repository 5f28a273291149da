"""Peak live graph nodes for one fine-tuning iteration, AR versus RAR."""

import argparse
import gc

from searth import autodiff as ad
from searth.data import SynthConfig, generate_dataset
from searth.model import ModelConfig
from searth.training import TrainConfig, finetune_ar, finetune_rar, new_checkpoint


def peak(fn, *args):
    gc.collect()
    ad.graph.reset_peak()
    floor = ad.graph.live_node_count
    fn(*args)
    return ad.graph.peak_live_node_count - floor


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--k", type=int, default=4)
    ap.add_argument("--horizons", type=int, nargs="+", default=[4, 8, 16, 32])
    args = ap.parse_args()

    ds = generate_dataset(SynthConfig(seed=0))
    start = new_checkpoint(ModelConfig.toy(), ds, 0)
    print("horizon  ar_peak  rar_peak")
    for n in args.horizons:
        ar = peak(finetune_ar, start, TrainConfig(iterations=1, batch_size=1, rollout_steps=n), ds)
        rar = peak(finetune_rar, start, TrainConfig(iterations=1, batch_size=1, k=args.k, stages=n // args.k), ds)
        print(f"{n:7d}  {ar:7d}  {rar:8d}")


if __name__ == "__main__":
    main()
