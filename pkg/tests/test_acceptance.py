"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s`` (about 15 minutes on a
laptop CPU; criteria 10 and 11 train the toy model for real).
"""

import gc
import json

import numpy as np
import pytest

from searth import autodiff as ad
from searth.autodiff import Tensor
from searth.cli import main as cli_main
from searth.data import SynthConfig, generate_dataset
from searth.evaluation import acc, evaluate, normalized_diff, rmse, skillful_lead_time
from searth.geometry import (
    BLOCK,
    LatLonGrid,
    earth_attention_mask,
    pole_seam_mask,
    regrid_quarter_to_one,
    window_token_positions,
)
from searth.attention import window_msa
from searth.model import ModelConfig, count_parameters, embed, forward_step, init_params, param_shapes, \
    patch_merge, unembed
from searth.rng import stream
from searth.training import (
    TrainConfig,
    finetune_ar,
    finetune_rar,
    loss_grad_check,
    new_checkpoint,
    one_step_loss,
    persistence_loss,
    pretrain,
    rollout_stage,
    tensor_params,
)

from conftest import record_criterion
from helpers import primitive_cases, random_msa_params, reference_window_attention

SEEDS = (0, 1, 2)
PRETRAIN_ITERS = 2000
FINETUNE = dict(iterations=200, lr_initial=3e-5, schedule="constant", k=4, batch_size=2)
TREND_LEADS = (8, 12, 16)


@pytest.fixture(scope="module")
def synth():
    return generate_dataset(SynthConfig(seed=0))


@pytest.fixture(scope="module")
def pretrained(synth):
    """Toy-preset checkpoints per (mask mode, seed) after the full pretraining budget."""
    out = {}
    for mode in ("earth", "planar"):
        for seed in SEEDS:
            model = ModelConfig.toy(mask_mode=mode)
            out[mode, seed] = pretrain(model, TrainConfig(iterations=PRETRAIN_ITERS, seed=seed), synth)[0]
    return out


def test_criterion_01_mask_oracle():
    cases, failures = 0, []
    for H in (4, 6, 8, 12, 16):
        for W in (4, 6, 8, 12, 16):
            for win in (2, 3, 4):
                if H % win or W % win:
                    continue
                s = win // 2
                earth = earth_attention_mask(H, W, win, win, s, s, "earth")
                planar = earth_attention_mask(H, W, win, win, s, s, "planar")
                pos = window_token_positions(H, W, win, win)
                rows_wrapped = pos[..., 0] + s >= H
                cols_wrapped = pos[..., 1] + s >= W
                row_split = rows_wrapped[:, :, None] != rows_wrapped[:, None, :]
                col_split = cols_wrapped[:, :, None] != cols_wrapped[:, None, :]
                extra = (planar == BLOCK) & (earth == 0)
                ok = (np.array_equal(earth, pole_seam_mask(H, W, win, win, s, s))
                      and not np.any((earth == BLOCK) & (planar == 0))
                      and extra.any()
                      and np.array_equal(extra, col_split & ~row_split))
                cases += 1
                if not ok:
                    failures.append((H, W, win))
    record_criterion(1, not failures, f"{cases} geometries, failures={failures}")
    assert not failures


def test_criterion_02_attention_oracle():
    rng = stream(2, "acceptance-attention")
    worst = 0.0
    for trial in range(50):
        win = int(rng.choice([2, 3, 4]))
        H, W = win * int(rng.integers(1, 3)), win * int(rng.integers(1, 4))
        nh = int(rng.choice([1, 2]))
        C = nh * int(rng.choice([2, 4]))
        kind = trial % 4
        if kind == 0:
            mask = None
        elif kind in (1, 2):
            s = win // 2
            mask = earth_attention_mask(H, W, win, win, s, s, "earth" if kind == 1 else "planar")
        else:
            T = win * win
            mask = np.where(rng.random(((H // win) * (W // win), T, T)) < 0.3, BLOCK, 0.0)
            mask[:, np.arange(T), np.arange(T)] = 0.0
        p = random_msa_params(rng, C, nh, (win, win))
        x = rng.standard_normal((1, H, W, C))
        got = window_msa(Tensor(x), {k: Tensor(v) for k, v in p.items()}, "attn", nh, (win, win), mask).data[0]
        ref = reference_window_attention(x[0], p["attn.qkv.weight"], p["attn.qkv.bias"], p["attn.proj.weight"],
                                         p["attn.proj.bias"], p["attn.rel_bias"], nh, (win, win), mask)
        worst = max(worst, float(np.max(np.abs(got - ref))))
    record_criterion(2, worst <= 1e-6, f"50 triples, max |diff| = {worst:.2e} (tol 1e-6)")
    assert worst <= 1e-6


def _roll_gap(cfg, seed, shift, axis):
    p = init_params(cfg, seed)
    a, b = stream(seed, "acceptance-roll-input").standard_normal((2, 1, cfg.n_channels, cfg.n_lat, cfg.n_lon))
    y = forward_step(p, cfg, Tensor(a), Tensor(b)).data
    yr = forward_step(p, cfg, Tensor(np.roll(a, shift, axis)), Tensor(np.roll(b, shift, axis))).data
    return float(np.max(np.abs(np.roll(y, shift, axis) - yr)))


def test_criterion_03_zonal_equivariance():
    earth = ModelConfig.toy(mask_mode="earth", precision="float64")
    planar = ModelConfig.toy(mask_mode="planar", precision="float64")
    step = 4 * earth.window[1]
    shifts = list(range(step, earth.n_lon, step))
    earth_gap = max(_roll_gap(earth, s, sh, -1) for s in range(10) for sh in shifts)
    planar_gaps = [_roll_gap(planar, s, step, -1) for s in range(10)]
    violated = sum(g > 1e-3 for g in planar_gaps)
    ok = earth_gap <= 1e-8 and violated >= 9
    record_criterion(3, ok, f"earth max |diff| = {earth_gap:.1e} over shifts {shifts}; "
                            f"planar violates on {violated}/10 (min {min(planar_gaps):.2e})")
    assert ok


def test_criterion_04_meridional_boundary():
    cfg = ModelConfig.toy(mask_mode="earth", precision="float64")
    gaps = [_roll_gap(cfg, s, cfg.window[0], -2) for s in range(10)]
    broken = sum(g > 1e-3 for g in gaps)
    record_criterion(4, broken >= 9, f"latitude roll breaks equivariance on {broken}/10 (min {min(gaps):.2e})")
    assert broken >= 9


def test_criterion_05_gradient_correctness():
    prim = {name: ad.grad_check(fn, Tensor(x0)) for name, fn, x0 in primitive_cases()}
    model = loss_grad_check(ModelConfig.toy(precision="float64"), seed=0, coords_per_tensor=3, batch=2,
                            training=True)
    worst_p = max(prim, key=prim.get)
    worst_m = max(model, key=model.get)
    ok = prim[worst_p] <= 1e-4 and model[worst_m] <= 1e-4
    record_criterion(5, ok, f"{len(prim)} primitive cases max {prim[worst_p]:.1e} ({worst_p}); "
                            f"toy model+loss {len(model)} tensors max {model[worst_m]:.1e}")
    assert ok


@pytest.fixture(scope="module")
def toy64_start(synth):
    model = ModelConfig.toy(precision="float64")
    return pretrain(model, TrainConfig(iterations=2, seed=4), synth)[0]


def test_criterion_06_rar_degeneracy(synth, toy64_start):
    cfg = TrainConfig(iterations=3, batch_size=2, lr_initial=1e-4, schedule="constant", k=4, stages=1,
                      rollout_steps=4, seed=4)
    rar, _ = finetune_rar(toy64_start, cfg, synth)
    ar, _ = finetune_ar(toy64_start, cfg, synth)
    gap = max(float(np.max(np.abs(rar.params[k] - ar.params[k]))) for k in rar.params)
    moved = max(float(np.max(np.abs(rar.params[k] - toy64_start.params[k]))) for k in rar.params)
    ok = gap <= 1e-10 and moved > 0
    record_criterion(6, ok, f"max |param diff| = {gap:.1e} after 3 iterations (update size {moved:.1e})")
    assert ok


def test_criterion_07_detachment(synth, toy64_start):
    k, stages, seed = 4, 3, 4
    captured = []
    previous = {}

    def probe(it, s, loss, params, x_prev, x_curr, a, b):
        names = list(params)
        inside = ad.grad(loss, [params[n] for n in names], release=False)
        leak = ad.grad(loss, previous.get("outputs", []), release=False)
        captured.append(dict(stage=s, names=names, inside=inside, leak=leak,
                             snapshot={n: params[n].data.copy() for n in names},
                             x_prev=x_prev.data.copy(), x_curr=x_curr.data.copy(),
                             constant=(x_prev.node is None and x_curr.node is None
                                       and not x_prev.requires_grad and not x_curr.requires_grad)))
        previous["outputs"] = [a, b]

    cfg = TrainConfig(iterations=1, batch_size=1, k=k, stages=stages, seed=seed, schedule="constant")
    finetune_rar(toy64_start, cfg, synth, probe=probe)

    # replay each stage on a fresh graph with the relayed states injected as constants
    norm = synth.normalized("train")
    from searth.training import epoch_indices, sequences
    starts = epoch_indices(norm.shape[0] - (stages * k + 2) + 1, 1, 0, seed, "finetune-order")
    seq = sequences(norm, starts, stages * k + 2)
    worst, leak, constant = 0.0, 0.0, True
    for c in captured:
        s = c["stage"]
        params = {n: Tensor(v, requires_grad=True, name=n) for n, v in c["snapshot"].items()}
        loss, _, _ = rollout_stage(params, toy64_start.model, Tensor(c["x_prev"]), Tensor(c["x_curr"]),
                                   seq[2 + s * k: 2 + (s + 1) * k], synth.grid.weights(), seed, 0, s * k)
        replay = ad.grad(loss, [params[n] for n in c["names"]])
        worst = max(worst, max(float(np.max(np.abs(g1 - g2))) for g1, g2 in zip(c["inside"], replay)))
        leak = max([leak] + [float(np.max(np.abs(g))) for g in c["leak"]])
        constant &= c["constant"]
    ok = worst <= 1e-12 and leak == 0.0 and constant and len(captured) == stages
    record_criterion(7, ok, f"{len(captured)} stages, max |grad diff| = {worst:.1e}, "
                            f"gradient into previous stage = {leak}, relayed inputs constant = {constant}")
    assert ok


def _peak(fn, *args):
    gc.collect()
    ad.graph.reset_peak()
    floor = ad.graph.live_node_count
    fn(*args)
    return ad.graph.peak_live_node_count - floor


def test_criterion_08_memory_decoupling(synth):
    model = ModelConfig.toy()
    start = new_checkpoint(model, synth, 0)
    rar = {}
    for m in (1, 2, 4, 8):
        cfg = TrainConfig(iterations=1, batch_size=1, k=4, stages=m)
        rar[m] = _peak(finetune_rar, start, cfg, synth)
    ar = {}
    for n in (4, 8, 16, 32):
        cfg = TrainConfig(iterations=1, batch_size=1, rollout_steps=n)
        ar[n] = _peak(finetune_ar, start, cfg, synth)
    spread = (max(rar.values()) - min(rar.values())) / min(rar.values())
    growth_ok = all(ar[n] / ar[4] >= 0.8 * n / 4 for n in ar)
    ok = spread < 0.05 and growth_ok
    record_criterion(8, ok, f"RAR peaks {rar} (spread {spread:.1%}); AR peaks {ar}")
    assert ok


def test_criterion_09_metric_identities():
    rng = stream(9, "acceptance-metrics")
    grid = LatLonGrid.regular(16, 32)
    w = grid.weights()
    y = rng.standard_normal((3, 16, 32))
    clim = rng.standard_normal((16, 32))
    checks = {
        "acc(Y,Y)=1": acc(y, y, clim, w) == 1.0,
        "rmse(Y,Y)=0": rmse(y, y, w) == 0.0,
        "sum L = N_lat": abs(w.sum() - 16) <= 1e-9 and abs(LatLonGrid.regular(180, 360).weights().sum() - 180) <= 1e-9,
        "rmse diff -0.10": abs(normalized_diff(1.8, 2.0, "rmse") + 0.10) <= 1e-12,
        "acc diff +0.25": abs(normalized_diff(0.7, 0.6, "acc") - 0.25) <= 1e-12,
        "lead 2.5 d": skillful_lead_time([1, 2, 3], [0.9, 0.7, 0.5], 0.6) == (2.5, False),
    }
    failed = [k for k, v in checks.items() if not v]
    record_criterion(9, not failed, f"{len(checks)} identities, failed={failed}")
    assert not failed


def test_criterion_10_learning_trend(synth, pretrained):
    earth = [one_step_loss(pretrained["earth", s], pretrained["earth", s].model, synth) for s in SEEDS]
    planar = [one_step_loss(pretrained["planar", s], pretrained["planar", s].model, synth) for s in SEEDS]
    persist = persistence_loss(synth)
    me, mp = float(np.median(earth)), float(np.median(planar))
    ok = me < persist and me < mp
    record_criterion(10, ok, f"median val wLMAE earth {me:.4f} vs planar {mp:.4f} vs persistence {persist:.4f} "
                             f"(earth {np.round(earth, 4).tolist()}, planar {np.round(planar, 4).tolist()})")
    assert ok


def _mean_rmse_by_lead(ckpt, synth):
    table = evaluate(tensor_params(ckpt), ckpt.model, synth, TREND_LEADS)
    return {lead: float(np.mean([r.rmse for r in table.rows if r.lead_hours == lead * synth.step_hours]))
            for lead in TREND_LEADS}


def test_criterion_11_rar_horizon_trend(synth, pretrained):
    scores = {"pretrained": [], "M=1": [], "M=4": []}
    for seed in SEEDS:
        base = pretrained["earth", seed]
        scores["pretrained"].append(_mean_rmse_by_lead(base, synth))
        for m in (1, 4):
            cfg = TrainConfig(mode="rar", stages=m, seed=seed, **FINETUNE)
            scores[f"M={m}"].append(_mean_rmse_by_lead(finetune_rar(base, cfg, synth)[0], synth))
    med = {name: {lead: float(np.median([s[lead] for s in runs])) for lead in TREND_LEADS}
           for name, runs in scores.items()}
    ok = all(med["M=4"][L] <= med["M=1"][L] <= med["pretrained"][L] for L in TREND_LEADS)
    table = "; ".join(f"lead {L}: " + "/".join(f"{med[n][L]:.4f}" for n in ("M=4", "M=1", "pretrained"))
                      for L in TREND_LEADS)
    record_criterion(11, ok, f"median RMSE RAR(M=4)/RAR(M=1)/pretrained, {table}")
    assert ok


def test_criterion_12_paper_scale_shapes():
    cfg = ModelConfig.paper()
    n = count_parameters(cfg)
    names = ["embed.weight", "embed.bias", "merge.weight", "merge.bias", "unembed.deconv.weight",
             "unembed.deconv.bias", "unembed.fc.weight", "unembed.fc.bias"]
    p = init_params(cfg, 0, names)
    x = Tensor(np.zeros((1, 69, 180, 360), dtype=np.float32))
    with ad.no_grad():
        z = embed(p, x, x)
        m = patch_merge(p, z)
        y = unembed(p, z)
    shapes = ((z.shape[3], z.shape[1], z.shape[2]), (m.shape[3], m.shape[1], m.shape[2]), y.shape[1:])
    ok = (shapes == ((768, 90, 180), (1536, 45, 90), (69, 180, 360))
          and abs(n - 600e6) <= 0.2 * 600e6 and len(param_shapes(cfg)) > 0)
    record_criterion(12, ok, f"embed/merge/unembed {shapes}, parameters {n:,}")
    assert ok


def test_criterion_13_regrid():
    const = regrid_quarter_to_one(np.full((721, 1440), -4.5))
    field = np.zeros((721, 1440))
    field[4:8, 8:12] = np.arange(16).reshape(4, 4)
    block = regrid_quarter_to_one(field)
    ok = const.shape == (180, 360) and np.all(const == -4.5) and block[1, 2] == 7.5 and block.sum() == 7.5
    record_criterion(13, ok, f"shape {const.shape}, constant preserved, block mean {block[1, 2]}")
    assert ok


def test_criterion_14_reproducibility(tmp_path):
    def run(*argv):
        assert cli_main([str(a) for a in argv]) == 0

    for tag in ("a", "b"):
        run("gen-data", "--out", tmp_path / f"data_{tag}", "--seed", 7, "--steps", 120)
        run("pretrain", "--data", tmp_path / f"data_{tag}", "--out", tmp_path / f"ck_{tag}.gt1",
            "--iters", 200, "--seed", 3)
        run("evaluate", "--ckpt", tmp_path / f"ck_{tag}.gt1", "--data", tmp_path / f"data_{tag}",
            "--leads", "6,12,24", "--out-csv", tmp_path / f"m_{tag}.csv")
        run("plot", "--metrics", tmp_path / f"m_{tag}.csv", "--labels", "toy", "--out", tmp_path / f"f_{tag}.svg")
    same = {
        "data": all((tmp_path / "data_a" / f).read_bytes() == (tmp_path / "data_b" / f).read_bytes()
                    for f in json.loads((tmp_path / "data_a" / "manifest.json").read_text())["files"]),
        "loss log": (tmp_path / "ck_a.gt1.loss.csv").read_bytes() == (tmp_path / "ck_b.gt1.loss.csv").read_bytes(),
        "checkpoint": (tmp_path / "ck_a.gt1").read_bytes() == (tmp_path / "ck_b.gt1").read_bytes(),
        "svg": (tmp_path / "f_a.svg").read_bytes() == (tmp_path / "f_b.svg").read_bytes(),
    }
    # resume at iteration 100 and compare against the uninterrupted run
    run("pretrain", "--data", tmp_path / "data_a", "--out", tmp_path / "half.gt1", "--iters", 200, "--seed", 3,
        "--stop-at", 100)
    run("pretrain", "--data", tmp_path / "data_a", "--resume", tmp_path / "half.gt1", "--out",
        tmp_path / "resumed.gt1", "--iters", 200, "--seed", 3)
    full_log = (tmp_path / "ck_a.gt1.loss.csv").read_text().splitlines()
    tail = (tmp_path / "resumed.gt1.loss.csv").read_text().splitlines()
    same["resume log tail"] = tail[1:] == full_log[-100:] and len(tail) == 101
    same["resume checkpoint"] = (tmp_path / "resumed.gt1").read_bytes() == (tmp_path / "ck_a.gt1").read_bytes()
    failed = [k for k, v in same.items() if not v]
    record_criterion(14, not failed, f"bit-identical: {sorted(k for k, v in same.items() if v)}; failed={failed}")
    assert not failed


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-s", "-q"]))
