"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

The desk-scale training checks take several minutes each on one CPU core.
"""
import time

import numpy as np
import pytest
import torch
import torch.nn.functional as Fn
import yaml

from gancircle import data as D
from gancircle import losses as L
from gancircle.checkpoint import load_checkpoint
from gancircle.cli import main
from gancircle.experiments import desk_supervised, desk_unsupervised
from gancircle.losses import LossWeights
from gancircle.metrics import ifc, psnr, ssim
from gancircle.models import (
    CRITIC_FILTERS,
    FEATURE_FILTERS,
    DiscriminatorConfig,
    GeneratorConfig,
    ModelParams,
    build_discriminator,
    build_generator,
    init_weights,
)
from gancircle.phantoms import phantom, phantom_corpus
from gancircle.training import (
    TrainConfig,
    TrainingComplete,
    default_model_configs,
    init_state,
    lr_schedule,
    train,
)

from oracles import psnr_bruteforce, relative_gradient_error, ssim_bruteforce

TINY_G = {"feature_filters": (4,) * 12,
          "recon_filters": {"A1": 3, "B1": 2, "B2": 2, "C1": 3, "C2": 2, "output": 1}}
TINY_D = {"conv_filters": (4,) * 8, "fc_units": 8}
SUP_STEPS = 480  # about 30 epochs of 256 patches
UNSUP_STEPS = 40


def _trace(strides, n):
    for s in strides:
        n = (n + 2 - 3) // s + 1
    return (n - 1) * 2 - 2 + 4


def test_architecture_audit(acceptance):
    t0 = time.perf_counter()
    nets = {
        ("G", "supervised"): build_generator(GeneratorConfig("G", "supervised"), 0).eval(),
        ("G", "unsupervised"): build_generator(GeneratorConfig("G", "unsupervised"), 1).eval(),
        ("F", "unsupervised"): build_generator(GeneratorConfig("F", "unsupervised"), 2).eval(),
        ("F", "supervised"): build_generator(GeneratorConfig("F", "supervised"), 3).eval(),
    }
    D_ = build_discriminator(DiscriminatorConfig(), 4)
    ladders_ok = all(
        [b.conv.out_channels for b in G.feat.values()] == list(FEATURE_FILTERS)
        and [G.recon[k].out_channels for k in ("A1", "B1", "B2", "C1", "C2", "out")] == [24, 8, 8, 32, 16, 1]
        for G in nets.values()
    ) and [s["conv"].out_channels for s in D_.conv.values()] == list(CRITIC_FILTERS) == [
        64, 64, 128, 128, 256, 256, 512, 512]
    with torch.no_grad():
        named = (nets["G", "supervised"](torch.rand(1, 1, 32, 32)).shape[-1] == 64
                 and nets["G", "unsupervised"](torch.rand(1, 1, 64, 64)).shape[-1] == 64
                 and nets["F", "unsupervised"](torch.rand(1, 1, 64, 64)).shape[-1] == 64
                 and nets["F", "supervised"](torch.rand(1, 1, 64, 64)).shape[-1] == 32)
        rng = np.random.default_rng(0)
        bad = []
        for _ in range(20):
            h, w = (int(v) * 4 for v in rng.integers(2, 13, 2))
            for (direction, mode), G in nets.items():
                out = G(torch.rand(1, 1, h, w))
                want = (_trace(G.cfg.strides, h), _trace(G.cfg.strides, w))
                ratio = {("G", "supervised"): 2, ("F", "supervised"): 0.5}.get((direction, mode), 1)
                if tuple(out.shape[-2:]) != want or want != (int(h * ratio), int(w * ratio)):
                    bad.append((direction, mode, h, w, tuple(out.shape)))
    elapsed = time.perf_counter() - t0
    ok = ladders_ok and named and not bad and elapsed < 10
    acceptance("architecture audit", ok, f"ladders={ladders_ok} contracts={named} "
               f"random-size failures={len(bad)} time={elapsed:.1f}s")
    assert ok, bad


def _critic(x, weight):
    return Fn.softplus(Fn.conv2d(x, weight)).flatten(1).mean(1) * 3


def test_loss_correctness(acceptance):
    t0 = time.perf_counter()
    g = torch.Generator().manual_seed(0)
    W = torch.randn(2, 1, 3, 3, generator=g, dtype=torch.float64)
    wts = LossWeights()
    worst = {}

    def gan_total(Gx, Fy):
        comps = {"adv_G": L.generator_adv_loss(_critic(Gx, W)), "adv_F": L.generator_adv_loss(_critic(Fy, W)),
                 "cyc": L.cycle_loss(Fy, Gx * 0.5, Gx, Fy * 2.0), "idt": L.identity_loss(Gx, Fy, Fy, Gx),
                 "jst": L.jst_loss(Gx, Fy, wts.tau), "sup": L.supervision_loss(Gx, Fy, Fy, Gx)}
        return L.total_objective(comps, wts, "semi").total

    for trial in range(10):
        a, b, c, d = (torch.rand(2, 1, 8, 8, generator=g, dtype=torch.float64) for _ in range(4))
        u = torch.rand(2, generator=g, dtype=torch.float64)
        cases = {
            "critic+gp": (lambda r, f, w: L.critic_loss(_critic(r, w), _critic(f, w),
                                                         L.gradient_penalty(lambda z: _critic(z, w), r, f, u),
                                                         wts.lambda_gp), [a, b, W]),
            "cycle": (lambda p, q: L.cycle_loss(a, p, b, q), [c, d]),
            "identity": (lambda p, q: L.identity_loss(p, b, q, a), [c, d]),
            "jst": (lambda p: L.jst_loss(p, a, wts.tau), [c]),
            "objective": (gan_total, [c, d]),
            "supervision": (lambda p, q: L.supervision_loss(p, a, q, b), [c, d]),
        }
        for name, (fn, args) in cases.items():
            worst[name] = max(worst.get(name, 0.0), relative_gradient_error(fn, args))

    unit = lambda x: (x * 0.25).flatten(1).sum(1)  # 16 pixels, coefficient norm exactly 1
    const = lambda x: (x * 0.0).flatten(1).sum(1) + 7.0
    r4, f4 = torch.rand(3, 1, 4, 4, dtype=torch.float64), torch.rand(3, 1, 4, 4, dtype=torch.float64)
    u3 = torch.rand(3, dtype=torch.float64)
    hand = {
        "unit-gradient gp": float(L.gradient_penalty(unit, r4, f4, u3)) == 0.0,
        "constant-critic gp": float(L.gradient_penalty(const, r4, f4, u3)) == 1.0,
        "2x2 TV": float(L.tv(torch.tensor([[[[0.0, 1.0], [0.0, 1.0]]]]), normalize=False)) == 2.0,
        "weighted sum": L.total_objective({"adv_G": 0.0, "adv_F": 0.0, "cyc": 1.0, "idt": 1.0, "jst": 1.0},
                                          wts, "unsupervised").total == 1.501,
    }
    elapsed = time.perf_counter() - t0
    grads_ok = all(v < 1e-4 for v in worst.values())
    ok = grads_ok and all(hand.values()) and elapsed < 60
    acceptance("loss correctness", ok, "max rel err " + ", ".join(f"{k}={v:.1e}" for k, v in worst.items())
               + f"; hand examples {sum(hand.values())}/4; time={elapsed:.1f}s")
    assert ok, (worst, hand)


def test_weight_init_audit(acceptance):
    conv = torch.nn.Conv2d(695, 16, 3)  # 695 * 9 * 16 = 100080 weights
    init_weights(torch.nn.Sequential(conv), seed=0)
    std = float(conv.weight.detach().double().std())
    std_ok = abs(std / 0.118 - 1) <= 0.01
    state = init_state(TrainConfig(mode="unsupervised"))
    biases = [(n, p) for net in state.networks().values() for n, p in net.named_parameters()
              if n.endswith("bias") and not n.endswith("norm.bias")]
    norm_biases = [p for net in state.networks().values() for n, p in net.named_parameters() if n.endswith("norm.bias")]
    bias_ok = all(torch.count_nonzero(p) == 0 for _, p in biases) and all(torch.count_nonzero(p) == 0
                                                                          for p in norm_biases)
    ok = std_ok and bias_ok
    acceptance("weight-init audit", ok, f"std={std:.5f} over {conv.weight.numel()} samples "
               f"(target 0.118), {len(biases)} conv/fc biases all zero={bias_ok}")
    assert ok


def test_schedule_audit(acceptance):
    cfg = TrainConfig(mode="supervised", variant="g_forward", batch_size=2, total_epochs=100)
    values_ok = lr_schedule(0, cfg) == 1e-4 and lr_schedule(50, cfg) == 5e-5 and lr_schedule(99, cfg) == 5e-5
    try:
        lr_schedule(100, cfg)
        halt_flag = False
    except TrainingComplete:
        halt_flag = True
    rng = np.random.default_rng(0)
    pairs = [D.PatchPair(rng.random((8, 8)), rng.random((16, 16)), (8, 8), True) for _ in range(2)]
    state, rows = train(cfg, (pairs, None), model_cfgs=default_model_configs(cfg, 16, generator=TINY_G),
                        hr_size=16)
    epochs = [r["epoch"] for r in rows]
    lrs = {r["epoch"]: r["lr"] for r in rows}
    run_ok = (state.epoch == 100 and epochs[-1] == 99 and len(rows) == 100
              and lrs[0] == 1e-4 and lrs[49] == 1e-4 and lrs[50] == 5e-5 and lrs[99] == 5e-5)
    ok = values_ok and halt_flag and run_ok
    acceptance("schedule audit", ok, f"lr(0)={lr_schedule(0, cfg)}, lr(50)={lr_schedule(50, cfg)}, "
               f"last trained epoch={epochs[-1]}, epochs completed={state.epoch}")
    assert ok


@pytest.mark.slow
def test_desk_supervised(acceptance):
    res = desk_supervised(n_train=256, n_test=48, budget_s=900, max_steps=SUP_STEPS, seed=0)
    ok = res.seconds <= 900 and res.psnr_gain >= 0.5 and res.ssim_gain >= 0.01
    acceptance("desk-scale supervised G-forward", ok,
               f"PSNR {res.psnr_model:.2f} vs bicubic {res.psnr_bicubic:.2f} (+{res.psnr_gain:.2f} dB), "
               f"SSIM {res.ssim_model:.4f} vs {res.ssim_bicubic:.4f} (+{res.ssim_gain:.4f}), "
               f"{res.steps} steps in {res.seconds:.0f}s")
    assert ok


@pytest.mark.slow
def test_desk_cycle(acceptance):
    res = desk_unsupervised(n_train=256, budget_s=1800, max_steps=UNSUP_STEPS, batch_size=8, seed=0)
    ok = res.seconds <= 1800 and res.reduction >= 0.5 and res.all_finite
    acceptance("desk-scale unsupervised cycle", ok,
               f"mean |F(G(x))-x| {res.cycle_init:.4g} -> {res.cycle_final:.4g} "
               f"({100 * res.reduction:.1f}% reduction), all finite={res.all_finite}, "
               f"{res.steps} steps in {res.seconds:.0f}s")
    assert ok


def test_semi_equals_supervised(acceptance):
    rng = np.random.default_rng(0)
    hr = phantom_corpus(12, 64, 3)
    pairs = [D.PatchPair(h.reshape(32, 2, 32, 2).mean(axis=(1, 3)), h, (32, 32), True, source=str(i))
             for i, h in enumerate(hr)]
    logs = {}
    for mode in ("supervised", "semi"):
        paired, pools = D.split_semi(pairs, 1.0, seed=5)
        cfg = TrainConfig(mode=mode, batch_size=4, total_epochs=2, seed=7, paired_fraction=1.0)
        mc = default_model_configs(cfg, 64, generator={"feature_filters": (8,) * 12}, discriminator=TINY_D)
        state, rows = train(cfg, (paired, pools), model_cfgs=mc, hr_size=64)
        logs[mode] = (rows, [ModelParams.from_module(n, k) for k, n in state.networks().items()])
    rows_s, rows_m = logs["supervised"][0], logs["semi"][0]
    same_rows = len(rows_s) == len(rows_m) == 6 and all(
        all(a[k] == b[k] for k in L.COMPONENTS + ("total",)) for a, b in zip(rows_s, rows_m))
    same_params = logs["supervised"][1] == logs["semi"][1]
    ok = same_rows and same_params
    acceptance("semi(1.0) == supervised", ok, f"{len(rows_m)} steps, loss rows bitwise equal={same_rows}, "
               f"final parameters bitwise equal={same_params}")
    assert ok


def test_metric_oracles(acceptance):
    rng = np.random.default_rng(42)
    dp = ds = 0.0
    for _ in range(50):
        h, w = rng.integers(16, 33, 2)
        x = rng.random((h, w))
        y = np.clip(x + rng.normal(0, rng.uniform(0.01, 0.3), (h, w)), 0, 1)
        dp = max(dp, abs(psnr(x, y) - psnr_bruteforce(x, y)))
        ds = max(ds, abs(ssim(x, y) - ssim_bruteforce(x, y)))
    mono = []
    for k in range(5):
        img = phantom(64, np.random.default_rng(100 + k), texture=0.08)
        nrng = np.random.default_rng(200 + k)
        vals = [ifc(img, img)] + [ifc(img, img + nrng.normal(0, s, img.shape)) for s in (0.01, 0.05, 0.1)]
        mono.append(all(a > b for a, b in zip(vals, vals[1:])))
    ok = dp <= 1e-6 and ds <= 1e-4 and all(mono)
    acceptance("metric oracles", ok, f"max |dPSNR|={dp:.1e}, max |dSSIM|={ds:.1e} over 50 pairs; "
               f"IFC sigma sweep strictly decreasing on {sum(mono)}/5 images")
    assert ok


def _pipeline(root, seed):
    m = root / "corpus"
    (m / "hr").mkdir(parents=True)
    entries = []
    for i, img in enumerate(phantom_corpus(3, 64, 11)):
        D.write_slice(m / "hr" / f"s{i}.png", D.ImageSlice(img))
        entries.append(D.ManifestEntry(f"hr/s{i}.png", "Y", None))
    D.write_manifest(D.DatasetManifest(entries), m / "manifest.txt")
    cfg = root / "cfg.yaml"
    cfg.write_text(yaml.safe_dump({
        "data": {"manifest": str(root / "sim" / "manifest.txt"), "patches_per_slice": 4},
        "model": {"generator": {"feature_filters": [4] * 12},
                  "discriminator": {"conv_filters": [4] * 8, "fc_units": 8}},
        "train": {"total_epochs": 1, "batch_size": 4, "checkpoint_period": 1},
        "eval": {"baseline_lr_dir": str(root / "sim" / "lr")},
    }))
    common = ["--config", str(cfg), "--seed", str(seed)]
    codes = [
        main(["simulate", str(m / "manifest.txt"), "--out", str(root / "sim")] + common),
        main(["train", "--out", str(root / "train")] + common),
        main(["infer", str(root / "train" / "checkpoints" / "final.gcir"), str(root / "sim" / "lr"),
              "--out", str(root / "sr")] + common),
        main(["evaluate", str(m / "hr"), str(root / "sr"), "--out", str(root / "eval")] + common),
    ]
    return codes


def _files(root, patterns):
    out = {}
    for pat in patterns:
        for f in sorted(p for p in root.glob(pat) if p.is_file()):
            data = f.read_bytes()
            if f.name == "config.yaml":  # echoes carry the run's own directory
                data = data.replace(str(root).encode(), b"<root>")
            out[str(f.relative_to(root))] = data
    return out


def test_end_to_end_determinism(acceptance, tmp_path, capsys):
    codes = [_pipeline(tmp_path / r, seed=5) for r in ("a", "b")]
    pats = ["sim/*", "sim/lr/*", "train/*", "train/checkpoints/*", "sr/*", "eval/*"]
    fa, fb = _files(tmp_path / "a", pats), _files(tmp_path / "b", pats)
    pipeline_ok = codes == [[0] * 4] * 2 and fa.keys() == fb.keys() and all(fa[k] == fb[k] for k in fa)
    differing = [k for k in fa if fa.get(k) != fb.get(k)]

    # resume mid-epoch through the library and at an epoch boundary through the CLI
    cfg = TrainConfig(mode="supervised", batch_size=4, total_epochs=3, seed=2)
    mc = default_model_configs(cfg, 64, generator=TINY_G, discriminator=TINY_D)
    hr = phantom_corpus(10, 64, 4)
    pairs = [D.PatchPair(h.reshape(32, 2, 32, 2).mean(axis=(1, 3)), h, (32, 32), True) for h in hr]
    full, rows_full = train(cfg, (pairs, None), model_cfgs=mc, hr_size=64)
    _, rows_a = train(cfg, (pairs, None), model_cfgs=mc, hr_size=64, max_steps=4,
                      checkpoint_dir=tmp_path / "ck")
    resumed, rows_b = train(cfg, (pairs, None), load_checkpoint(tmp_path / "ck" / "final.gcir"))
    params = lambda s: [ModelParams.from_module(n, k) for k, n in s.networks().items()]
    lib_ok = params(full) == params(resumed) and rows_full == rows_a + rows_b

    run = tmp_path / "a"
    cfg_path = run / "cfg.yaml"
    raw = yaml.safe_load(cfg_path.read_text())
    raw["train"]["total_epochs"] = 2
    cfg_path.write_text(yaml.safe_dump(raw))
    c1 = main(["train", "--config", str(cfg_path), "--seed", "5", "--out", str(tmp_path / "two")])
    c2 = main(["train", "--config", str(cfg_path), "--seed", "5", "--out", str(tmp_path / "resumed"),
               "--resume", str(run / "train" / "checkpoints" / "epoch_001.gcir")])
    cli_ok = c1 == c2 == 0 and (
        (tmp_path / "two" / "checkpoints" / "final.gcir").read_bytes()
        == (tmp_path / "resumed" / "checkpoints" / "final.gcir").read_bytes())
    capsys.readouterr()
    ok = pipeline_ok and lib_ok and cli_ok
    acceptance("end-to-end determinism", ok, f"{len(fa)} artifacts byte-identical={pipeline_ok} "
               f"(differing: {differing}); mid-epoch resume bitwise={lib_ok}; CLI resume bitwise={cli_ok}")
    assert ok
