"""Desk-scale training runs on the phantom corpus (supervised G-forward, unsupervised cycle)."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .data import DegradationSpec, ImageSlice, PatchPair, UnpairedSet, make_batches, simulate_lr, upsample_to_match
from .losses import LossWeights
from .metrics import psnr, ssim
from .phantoms import phantom_corpus
from .resample import upsample2
from .training import (
    NonFiniteLossError,
    TrainConfig,
    default_model_configs,
    init_state,
    lr_schedule,
    set_lr,
    train_step,
)

log = logging.getLogger(__name__)


@dataclass
class PhantomSet:
    hr: np.ndarray  # (n, s, s)
    lr: np.ndarray  # (n, s/2, s/2)


def phantom_set(n: int, size: int = 64, seed: int = 0, noise_sigma: float = 0.01) -> PhantomSet:
    """``n`` HR phantom patches and their degraded LR versions."""
    hr = phantom_corpus(n, size, seed)
    spec = DegradationSpec(noise_sigma=noise_sigma, seed=seed)
    lr = np.stack([simulate_lr(ImageSlice(h, slice_id=f"p{seed}_{i}"), spec).pixels for i, h in enumerate(hr)])
    return PhantomSet(hr, lr)


def _pairs(ps: PhantomSet) -> list:
    s = ps.hr.shape[-1]
    return [PatchPair(l, h, (s // 2, s // 2), True, source=str(i)) for i, (l, h) in enumerate(zip(ps.lr, ps.hr))]


def _apply(net, batch: np.ndarray, chunk: int = 32) -> np.ndarray:
    was = net.training
    net.eval()
    out = []
    with torch.no_grad():
        for i in range(0, len(batch), chunk):
            x = torch.from_numpy(batch[i:i + chunk, None].astype(np.float32))
            out.append(net(x)[:, 0].double().numpy())
    net.train(was)
    return np.concatenate(out)


@dataclass
class SupervisedResult:
    psnr_model: float
    ssim_model: float
    psnr_bicubic: float
    ssim_bicubic: float
    steps: int
    epochs: int
    seconds: float

    @property
    def psnr_gain(self) -> float:
        return self.psnr_model - self.psnr_bicubic

    @property
    def ssim_gain(self) -> float:
        return self.ssim_model - self.ssim_bicubic


def held_out_scores(G, test: PhantomSet) -> tuple:
    sr = np.clip(_apply(G, test.lr), 0.0, 1.0)
    bic = np.stack([np.clip(upsample2(l, "bicubic"), 0.0, 1.0) for l in test.lr])
    p = float(np.mean([psnr(h, s) for h, s in zip(test.hr, sr)]))
    s = float(np.mean([ssim(h, s) for h, s in zip(test.hr, sr)]))
    pb = float(np.mean([psnr(h, b) for h, b in zip(test.hr, bic)]))
    sb = float(np.mean([ssim(h, b) for h, b in zip(test.hr, bic)]))
    return p, s, pb, sb


def desk_supervised(n_train: int = 256, n_test: int = 48, budget_s: float = 600.0, batch_size: int = 16,
                    seed: int = 0, base_lr: float = 1e-4, total_epochs: int = 100,
                    halving_period: int = 50, max_steps: int = None) -> SupervisedResult:
    """Train G-forward (supervision loss only) under a step and wall-clock budget."""
    train_set = phantom_set(n_train, 64, seed)
    test_set = phantom_set(n_test, 64, seed + 10_000)
    cfg = TrainConfig(mode="supervised", variant="g_forward", batch_size=batch_size, seed=seed,
                      base_lr=base_lr, total_epochs=total_epochs, lr_halving_period=halving_period)
    state = init_state(cfg)
    stream = make_batches(_pairs(train_set), None, batch_size, "supervised", seed)
    t0 = time.perf_counter()
    epoch = 0
    done = False
    while not done and epoch < total_epochs:
        set_lr(state, lr_schedule(epoch, cfg))
        for batch in stream.epoch(epoch):
            state, _ = train_step(state, batch)
            if time.perf_counter() - t0 >= budget_s or (max_steps is not None and state.step >= max_steps):
                done = True
                break
        epoch += 1
    elapsed = time.perf_counter() - t0
    p, s, pb, sb = held_out_scores(state.G, test_set)
    log.info("supervised: %d steps in %.0fs; PSNR %.2f vs bicubic %.2f, SSIM %.4f vs %.4f",
             state.step, elapsed, p, pb, s, sb)
    return SupervisedResult(p, s, pb, sb, state.step, epoch, elapsed)


@dataclass
class CycleResult:
    cycle_init: float
    cycle_final: float
    steps: int
    seconds: float
    all_finite: bool
    history: list = field(default_factory=list)

    @property
    def reduction(self) -> float:
        return 1.0 - self.cycle_final / self.cycle_init


def cycle_error(G, Fn, x: np.ndarray) -> float:
    """Mean L1 of F(G(x)) - x with dropout off."""
    rec = _apply(Fn, _apply(G, x).astype(np.float32))
    return float(np.mean(np.abs(rec - x)))


def desk_unsupervised(n_train: int = 256, n_eval: int = 32, budget_s: float = 600.0, batch_size: int = 8,
                      seed: int = 0, base_lr: float = 1e-4, max_steps: int = None,
                      model_overrides: dict = None) -> CycleResult:
    """Unsupervised GAN-CIRCLE on the phantom corpus with all pairings dropped."""
    ps = phantom_set(n_train, 64, seed)
    lr_up = np.stack([upsample_to_match(ImageSlice(l), "nearest").pixels for l in ps.lr])
    rng = np.random.default_rng([seed, 7])
    # fraction 0: X and Y come from disjoint halves so no pairing survives
    order = rng.permutation(n_train)
    xs_idx, ys_idx = order[: n_train // 2], order[n_train // 2:]
    pools = UnpairedSet(
        [PatchPair(lr_up[i], None, (32, 32), False, "X", str(i)) for i in xs_idx],
        [PatchPair(None, ps.hr[i], (32, 32), False, "Y", str(i)) for i in ys_idx],
    )
    eval_x = lr_up[xs_idx[:n_eval]]
    cfg = TrainConfig(mode="unsupervised", batch_size=batch_size, seed=seed, base_lr=base_lr,
                      paired_fraction=0.0, weights=LossWeights())
    state = init_state(cfg, default_model_configs(cfg, 64, **(model_overrides or {})))
    stream = make_batches([], pools, batch_size, "unsupervised", seed)
    init = cycle_error(state.G, state.F, eval_x)
    history, finite = [], True
    t0 = time.perf_counter()
    epoch = 0
    done = False
    while not done and epoch < cfg.total_epochs:
        set_lr(state, lr_schedule(epoch, cfg))
        for batch in stream.epoch(epoch):
            try:
                state, bundle = train_step(state, batch)
            except NonFiniteLossError:
                finite = False
                done = True
                break
            row = bundle.as_row()
            finite = finite and all(math.isfinite(v) for v in row)
            history.append(row)
            if time.perf_counter() - t0 >= budget_s or (max_steps is not None and state.step >= max_steps):
                done = True
                break
        epoch += 1
    elapsed = time.perf_counter() - t0
    final = cycle_error(state.G, state.F, eval_x)
    log.info("unsupervised: %d steps in %.0fs; cycle L1 %.4g -> %.4g", state.step, elapsed, init, final)
    return CycleResult(init, final, state.step, elapsed, finite, history)
