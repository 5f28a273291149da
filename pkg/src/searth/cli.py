"""Command-line entry point: ``searth <subcommand> [flags]``.

Every subcommand accepts ``--config <json>``; flags given on the command
line override the file. Failures print ``error: <code>: <detail>`` on one
line and exit with 2 (usage), 3 (config), 4 (io) or 5 (numeric). Each run
appends a JSON record to ``runs.jsonl`` next to its main output (or to
``--runs``).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import autodiff as ad
from .checkpoint import checkpoint_load, checkpoint_save
from .data import SynthConfig, generate_dataset, load_dataset, write_dataset
from .errors import ConfigError, IOFormatError, MissingFileError, NumericError, SearthError, UsageError
from .evaluation import ClimatologyField, compute_climatology, evaluate
from .geometry import earth_attention_mask, regrid_quarter_to_one
from .gt1 import gt1_read, gt1_write
from .model import ModelConfig
from .plotting import emit_plot, read_metric_csv
from .training import TrainConfig, finetune_ar, finetune_rar, loss_grad_check, pretrain, tensor_params

RUNS_FILE = "runs.jsonl"
GRADCHECK_TOL = 1e-4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _grid(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like HxW, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _window(text: str) -> tuple[int, int]:
    parts = _int_list(text)
    if len(parts) == 1:
        return parts[0], parts[0]
    if len(parts) == 2:
        return parts[0], parts[1]
    raise argparse.ArgumentTypeError(f"window must be N or H,W, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="searth", description="Earth-topology window transformer forecasting toolkit.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON file of defaults for this subcommand")
        sp.add_argument("--runs", help=f"run manifest to append to (default: {RUNS_FILE} beside the output)")
        return sp

    s = add("gen-data", "write a synthetic zonal-advection dataset")
    s.add_argument("--out")
    s.add_argument("--grid", type=_grid)
    s.add_argument("--channels", type=int)
    s.add_argument("--steps", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--waves", type=int)
    s.add_argument("--noise", type=float)

    s = add("regrid", "average a 721x1440 GT1 field down to 180x360")
    s.add_argument("--in", dest="input")
    s.add_argument("--out")

    def train_flags(sp):
        sp.add_argument("--data")
        sp.add_argument("--out")
        sp.add_argument("--iters", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--batch", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--lr-final", type=float)
        sp.add_argument("--schedule", choices=["cosine", "constant"])
        sp.add_argument("--log-csv", help="loss log (default: <out>.loss.csv)")
        sp.add_argument("--stop-at", type=int, help="stop before this iteration (checkpoint stays resumable)")

    s = add("pretrain", "single-step pretraining")
    train_flags(s)
    s.add_argument("--resume", help="checkpoint to continue from")
    s.add_argument("--mode", choices=["earth", "planar"], help="attention mask mode")
    s.add_argument("--precision", choices=["float32", "float64"])
    s.add_argument("--embed-dim", type=int)
    s.add_argument("--window", type=_window)

    s = add("finetune-ar", "autoregressive fine-tuning on one graph")
    train_flags(s)
    s.add_argument("--ckpt")
    s.add_argument("--steps", type=int)

    s = add("finetune-rar", "relay autoregressive fine-tuning")
    train_flags(s)
    s.add_argument("--ckpt")
    s.add_argument("--k", type=int)
    s.add_argument("--stages", type=int)

    s = add("evaluate", "RMSE/ACC per variable and lead")
    s.add_argument("--ckpt")
    s.add_argument("--data")
    s.add_argument("--leads", type=_int_list, help="lead times in hours, e.g. 24,48,72")
    s.add_argument("--clim", help="GT1 climatology [C,H,W] (default: training-split mean)")
    s.add_argument("--out-csv")
    s.add_argument("--split", choices=["train", "val", "all"])
    s.add_argument("--max-inits", type=int)
    s.add_argument("--persistence", action="store_true", default=None, help="score persistence instead")

    s = add("mask-dump", "write an attention mask as CSV")
    s.add_argument("--H", type=int)
    s.add_argument("--W", type=int)
    s.add_argument("--win", type=_window)
    s.add_argument("--shift", type=_window)
    s.add_argument("--mode", choices=["earth", "planar"])
    s.add_argument("--out-csv")

    s = add("plot", "SVG of metrics against lead time")
    s.add_argument("--metrics", help="comma-separated metric CSVs")
    s.add_argument("--labels", help="comma-separated labels, one per CSV")
    s.add_argument("--out")
    s.add_argument("--title")

    s = add("gradcheck", "central-difference check of the full model and loss")
    s.add_argument("--preset", choices=["toy"])
    s.add_argument("--seed", type=int)
    s.add_argument("--coords", type=int, help="probed coordinates per tensor")
    s.add_argument("--out", help="optional JSON report")
    return p


DEFAULTS = {
    "gen-data": dict(grid=(16, 32), channels=4, steps=400, seed=0, waves=3, noise=0.05),
    "regrid": {},
    "pretrain": dict(iters=2000, seed=0, batch=2, lr=1e-3, lr_final=1e-7, schedule="cosine",
                     mode="earth", precision="float32"),
    "finetune-ar": dict(iters=200, seed=0, batch=2, lr=3e-5, lr_final=3e-5, schedule="constant", steps=4),
    "finetune-rar": dict(iters=200, seed=0, batch=2, lr=3e-5, lr_final=3e-5, schedule="constant", k=4, stages=4),
    "evaluate": dict(leads=[24, 48, 72, 96], split="val", persistence=False),
    "mask-dump": dict(mode="earth"),
    "plot": dict(title=""),
    "gradcheck": dict(preset="toy", seed=0, coords=3),
}

REQUIRED = {
    "gen-data": ["out"],
    "regrid": ["input", "out"],
    "pretrain": ["data", "out"],
    "finetune-ar": ["ckpt", "data", "out"],
    "finetune-rar": ["ckpt", "data", "out"],
    "evaluate": ["ckpt", "data", "out_csv"],
    "mask-dump": ["H", "W", "win", "out_csv"],
    "plot": ["metrics", "out"],
    "gradcheck": [],
}


def resolve_options(command: str, args: argparse.Namespace) -> dict:
    """Built-in defaults, then the ``--config`` file, then explicit flags."""
    opts = dict(DEFAULTS[command])
    if args.config:
        if not os.path.exists(args.config):
            raise MissingFileError(f"config file {args.config} not found")
        with open(args.config) as fh:
            try:
                loaded = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{args.config}: expected a JSON object")
        valid = set(vars(args)) - {"command", "config"}
        for key, value in loaded.items():
            key = key.replace("-", "_")
            if key == "in":
                key = "input"
            if key not in valid:
                raise ConfigError(f"{args.config}: unknown option {key!r} for {command}")
            opts[key] = value
    for key, value in vars(args).items():
        if key not in ("command", "config") and value is not None:
            opts[key] = value
    if "seed" in opts and os.environ.get("SEARTH_SEED"):
        try:
            opts["seed"] = int(os.environ["SEARTH_SEED"])
        except ValueError:
            raise ConfigError(f"SEARTH_SEED must be an integer, got {os.environ['SEARTH_SEED']!r}") from None
    missing = [k for k in REQUIRED[command] if opts.get(k) is None]
    if missing:
        raise UsageError(f"{command}: missing --{missing[0].replace('_', '-')}")
    for key in ("grid", "win", "shift", "window"):
        if isinstance(opts.get(key), list):
            opts[key] = tuple(opts[key]) if len(opts[key]) == 2 else (opts[key][0],) * 2
        elif isinstance(opts.get(key), int):
            opts[key] = (opts[key], opts[key])
    return opts


def _config_hash(command: str, opts: dict) -> str:
    blob = json.dumps({"command": command, **opts}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _append_run(path: str, record: dict) -> None:
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def _write_loss_log(path: str, rows, append: bool = False) -> None:
    mode = "a" if append and os.path.exists(path) else "w"
    with open(path, mode, newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if mode == "w":
            w.writerow(["iter", "lr", "loss"])
        for it, lr, loss in rows:
            w.writerow([it, repr(float(lr)), repr(float(loss))])


def _train_config(opts: dict, mode: str, **extra) -> TrainConfig:
    return TrainConfig(mode=mode, batch_size=opts["batch"], iterations=opts["iters"], lr_initial=opts["lr"],
                       lr_final=opts["lr_final"], schedule=opts["schedule"], seed=opts["seed"], **extra)


# ------------------------------------------------------------------ commands

def cmd_gen_data(o: dict) -> dict:
    h, w = o["grid"]
    cfg = SynthConfig(n_lat=h, n_lon=w, channels=o["channels"], steps=o["steps"], waves=o["waves"],
                      seed=o["seed"], noise_amplitude=o["noise"])
    ds = generate_dataset(cfg)
    write_dataset(o["out"], ds, cfg.to_dict())
    return {"steps": ds.n_steps, "train_steps": ds.train_steps}


def cmd_regrid(o: dict) -> dict:
    if not os.path.exists(o["input"]):
        raise MissingFileError(f"{o['input']} not found")
    field = gt1_read(o["input"])
    if isinstance(field, dict):
        out = {k: regrid_quarter_to_one(v) for k, v in field.items()}
    else:
        out = regrid_quarter_to_one(field)
    gt1_write(o["out"], out)
    return {}


def _log_path(o: dict) -> str:
    return o.get("log_csv") or f"{o['out']}.loss.csv"


def cmd_pretrain(o: dict) -> dict:
    ds = load_dataset(o["data"])
    ckpt = None
    if o.get("resume"):
        ckpt = checkpoint_load(o["resume"])
        model = ckpt.model
    else:
        H, W = ds.grid.shape
        kw = dict(n_channels=ds.states.shape[1], n_lat=H, n_lon=W, mask_mode=o["mode"], precision=o["precision"])
        if o.get("embed_dim"):
            kw["embed_dim"] = o["embed_dim"]
        if o.get("window"):
            kw["window"] = o["window"]
        model = ModelConfig.toy(**kw)
    cfg = _train_config(o, "pretrain")
    out, rows = pretrain(model, cfg, ds, ckpt=ckpt, stop_at=o.get("stop_at"))
    checkpoint_save(o["out"], out)
    _write_loss_log(_log_path(o), rows, append=bool(o.get("resume")))
    return {"iterations": out.iteration, "final_loss": rows[-1][2] if rows else None}


def _finetune(o: dict, mode: str) -> dict:
    ds = load_dataset(o["data"])
    ckpt = checkpoint_load(o["ckpt"])
    if mode == "ar":
        cfg = _train_config(o, "ar", rollout_steps=o["steps"])
        out, rows = finetune_ar(ckpt, cfg, ds, stop_at=o.get("stop_at"))
    else:
        cfg = _train_config(o, "rar", k=o["k"], stages=o["stages"])
        out, rows = finetune_rar(ckpt, cfg, ds, stop_at=o.get("stop_at"))
    checkpoint_save(o["out"], out)
    _write_loss_log(_log_path(o), rows)
    return {"iterations": out.iteration, "final_loss": rows[-1][2] if rows else None}


def cmd_finetune_ar(o: dict) -> dict:
    return _finetune(o, "ar")


def cmd_finetune_rar(o: dict) -> dict:
    return _finetune(o, "rar")


def cmd_evaluate(o: dict) -> dict:
    ds = load_dataset(o["data"])
    ckpt = checkpoint_load(o["ckpt"])
    steps = []
    for hours in o["leads"]:
        if hours <= 0 or hours % ds.step_hours:
            raise ConfigError(f"lead {hours} h is not a positive multiple of {ds.step_hours} h")
        steps.append(hours // ds.step_hours)
    clim = None
    if o.get("clim"):
        if not os.path.exists(o["clim"]):
            raise MissingFileError(f"{o['clim']} not found")
        clim = ClimatologyField(np.asarray(gt1_read(o["clim"]), dtype=np.float64), o["clim"])
        if clim.mean.shape != ds.states.shape[1:]:
            raise ConfigError(f"climatology shape {clim.mean.shape} does not match states {ds.states.shape[1:]}")
    else:
        clim = compute_climatology(ds.split("train"), "train split")
    table = evaluate(tensor_params(ckpt), ckpt.model, ds, steps, clim, split=o["split"],
                     max_inits=o.get("max_inits"), persistence=bool(o["persistence"]))
    table.to_csv(o["out_csv"])
    return {"n_samples": table.n_samples, "acc_skipped": table.skipped}


def cmd_mask_dump(o: dict) -> dict:
    wh, ww = o["win"]
    sh, sw = o["shift"] if o.get("shift") else (wh // 2, ww // 2)
    mask = earth_attention_mask(o["H"], o["W"], wh, ww, sh, sw, o["mode"])
    folder = os.path.dirname(o["out_csv"])
    if folder:
        os.makedirs(folder, exist_ok=True)
    with open(o["out_csv"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window", "q", "k", "blocked"])
        for win, q, k in np.ndindex(*mask.shape):
            w.writerow([win, q, k, int(mask[win, q, k] != 0)])
    return {"windows": int(mask.shape[0]), "blocked": int((mask != 0).sum())}


def cmd_plot(o: dict) -> dict:
    files = [f for f in str(o["metrics"]).split(",") if f]
    labels = [s for s in str(o["labels"]).split(",")] if o.get("labels") else [
        os.path.splitext(os.path.basename(f))[0] for f in files]
    if len(labels) != len(files):
        raise UsageError(f"{len(labels)} labels for {len(files)} metric files")
    series = []
    for f, label in zip(files, labels):
        if not os.path.exists(f):
            raise MissingFileError(f"{f} not found")
        series.append((label, read_metric_csv(f)))
    svg = emit_plot(series, o.get("title") or "")
    with open(o["out"], "w") as fh:
        fh.write(svg)
    return {"series": len(series)}


def cmd_gradcheck(o: dict) -> dict:
    model = ModelConfig.toy(precision="float64")
    errors = loss_grad_check(model, o["seed"], o["coords"])
    worst_name = max(errors, key=errors.get)
    worst = errors[worst_name]
    print(f"gradcheck: {len(errors)} tensors, max relative error {worst:.3e} ({worst_name})")
    if o.get("out"):
        with open(o["out"], "w") as fh:
            json.dump({"max_relative_error": worst, "per_tensor": errors}, fh, indent=1, sort_keys=True)
    if worst > GRADCHECK_TOL:
        raise NumericError(f"gradient mismatch {worst:.3e} in {worst_name} exceeds {GRADCHECK_TOL}")
    return {"max_relative_error": worst}


COMMANDS = {
    "gen-data": cmd_gen_data,
    "regrid": cmd_regrid,
    "pretrain": cmd_pretrain,
    "finetune-ar": cmd_finetune_ar,
    "finetune-rar": cmd_finetune_rar,
    "evaluate": cmd_evaluate,
    "mask-dump": cmd_mask_dump,
    "plot": cmd_plot,
    "gradcheck": cmd_gradcheck,
}


def _runs_path(command: str, o: dict) -> str:
    if o.get("runs"):
        return o["runs"]
    target = o.get("out") or o.get("out_csv")
    if not target:
        return RUNS_FILE
    folder = target if command == "gen-data" else os.path.dirname(os.path.abspath(target))
    return os.path.join(folder, RUNS_FILE)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        opts = resolve_options(args.command, args)
        ad.graph.reset_peak()
        t0 = time.perf_counter()
        try:
            info = COMMANDS[args.command](opts)
        except SearthError:
            raise
        except FileNotFoundError as exc:
            raise MissingFileError(str(exc)) from None
        except (OSError, EOFError) as exc:
            raise IOFormatError(str(exc)) from None
        record = {
            "command": args.command,
            "config_hash": _config_hash(args.command, {k: v for k, v in opts.items() if k != "runs"}),
            "seed": opts.get("seed"),
            "wall_time_s": round(time.perf_counter() - t0, 6),
            "peak_live_node_count": ad.graph.peak_live_node_count,
            "info": info,
        }
        _append_run(_runs_path(args.command, opts), record)
        return 0
    except SearthError as exc:
        detail = str(exc.detail).replace("\n", " ")
        print(f"error: {exc.code}: {detail}", file=sys.stderr)
        return exc.exit_status
    except KeyError as exc:
        print(f"error: io: malformed input, missing key {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
