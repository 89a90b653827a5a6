"""Alternating critic / generator optimisation for the three training modes."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch
import torch.nn.functional as F

from . import losses as L
from .data import BatchStream, UnpairedSet, make_batches
from .losses import LossBundle, LossWeights
from .models import (
    DiscriminatorConfig,
    GeneratorConfig,
    MODES,
    build_discriminator,
    build_generator,
)

log = logging.getLogger(__name__)

VARIANTS = ("gan_circle", "g_forward", "g_adversarial")
LOG_COLUMNS = ("step", "epoch", "lr") + L.COMPONENTS + ("total",)


class NonFiniteLossError(FloatingPointError):
    pass


class TrainingComplete(Exception):
    """Raised when asked for the learning rate of an epoch past the end of training."""


@dataclass
class TrainConfig:
    mode: str = "supervised"
    weights: LossWeights = field(default_factory=LossWeights)
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    base_lr: float = 1e-4
    lr_halving_period: int = 50
    total_epochs: int = 100
    batch_size: int = 64
    critic_steps_per_gen_step: int = 1
    seed: int = 0
    checkpoint_period: int = 10
    paired_fraction: float = 1.0
    variant: str = "gan_circle"
    semi_ratio: tuple = (1, 1)

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        self.semi_ratio = tuple(int(r) for r in self.semi_ratio)
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.variant != "gan_circle" and self.mode != "supervised":
            raise ValueError(f"variant {self.variant!r} needs paired data (mode 'supervised')")
        for name in ("lr_halving_period", "total_epochs", "batch_size", "critic_steps_per_gen_step",
                     "checkpoint_period"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.base_lr < 0:
            raise ValueError("base_lr must be >= 0")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if not 0.0 <= self.paired_fraction <= 1.0:
            raise ValueError(f"paired_fraction must lie in [0, 1], got {self.paired_fraction}")
        if len(self.semi_ratio) != 2 or min(self.semi_ratio) < 1:
            raise ValueError("semi_ratio must be two positive integers")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["semi_ratio"] = list(self.semi_ratio)
        return d


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """base_lr halved every ``lr_halving_period`` epochs."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    if epoch >= cfg.total_epochs:
        raise TrainingComplete(f"training terminates after {cfg.total_epochs} epochs (asked for epoch {epoch})")
    return cfg.base_lr * 2.0 ** (-(epoch // cfg.lr_halving_period))


@dataclass
class TrainState:
    cfg: TrainConfig
    G: torch.nn.Module
    F: Optional[torch.nn.Module]
    D_X: Optional[torch.nn.Module]
    D_Y: Optional[torch.nn.Module]
    opt_gen: torch.optim.Optimizer
    opt_dx: Optional[torch.optim.Optimizer]
    opt_dy: Optional[torch.optim.Optimizer]
    model_cfgs: dict
    rng_state: torch.Tensor
    epoch: int = 0
    step: int = 0
    step_in_epoch: int = 0

    def networks(self) -> dict:
        nets = {"G": self.G, "F": self.F, "D_X": self.D_X, "D_Y": self.D_Y}
        return {k: v for k, v in nets.items() if v is not None}

    def optimizers(self) -> dict:
        opts = {"gen": self.opt_gen, "dx": self.opt_dx, "dy": self.opt_dy}
        return {k: v for k, v in opts.items() if v is not None}

    def optimizer_params(self) -> dict:
        """Optimizer name -> ordered list of (param name, parameter)."""
        gen = [(f"G.{n}", p) for n, p in self.G.named_parameters()]
        if self.F is not None:
            gen += [(f"F.{n}", p) for n, p in self.F.named_parameters()]
        out = {"gen": gen}
        if self.D_X is not None:
            out["dx"] = [(f"D_X.{n}", p) for n, p in self.D_X.named_parameters()]
        if self.D_Y is not None:
            out["dy"] = [(f"D_Y.{n}", p) for n, p in self.D_Y.named_parameters()]
        return out


def default_model_configs(cfg: TrainConfig, hr_size: int = 64, **overrides) -> dict:
    """Model configs for ``cfg``; critic input sizes follow the patch geometry."""
    lr_size = hr_size if cfg.mode == "unsupervised" else hr_size // 2
    gen_kw = overrides.get("generator", {})
    disc_kw = overrides.get("discriminator", {})
    names = {"gan_circle": ("G", "F", "D_X", "D_Y"), "g_forward": ("G",), "g_adversarial": ("G", "D_Y")}
    build = {
        "G": lambda: GeneratorConfig(direction="G", mode=cfg.mode, **gen_kw),
        "F": lambda: GeneratorConfig(direction="F", mode=cfg.mode, **gen_kw),
        "D_X": lambda: DiscriminatorConfig(input_size=lr_size, **disc_kw),
        "D_Y": lambda: DiscriminatorConfig(input_size=hr_size, **disc_kw),
    }
    return {k: build[k]() for k in names[cfg.variant]}


def _adam(params, cfg: TrainConfig):
    return torch.optim.Adam(params, lr=cfg.base_lr, betas=(cfg.adam_beta1, cfg.adam_beta2))


def assemble_state(cfg: TrainConfig, nets: dict, model_cfgs: dict, rng_state: torch.Tensor) -> TrainState:
    G, Fn = nets["G"], nets.get("F")
    gen_params = list(G.parameters()) + (list(Fn.parameters()) if Fn is not None else [])
    D_X, D_Y = nets.get("D_X"), nets.get("D_Y")
    return TrainState(
        cfg, G, Fn, D_X, D_Y,
        _adam(gen_params, cfg),
        _adam(D_X.parameters(), cfg) if D_X is not None else None,
        _adam(D_Y.parameters(), cfg) if D_Y is not None else None,
        model_cfgs,
        rng_state,
    )


def init_state(cfg: TrainConfig, model_cfgs: Optional[dict] = None, hr_size: int = 64) -> TrainState:
    model_cfgs = model_cfgs or default_model_configs(cfg, hr_size)
    seeds = np.random.SeedSequence(cfg.seed).generate_state(5).tolist()
    builders = {"G": build_generator, "F": build_generator, "D_X": build_discriminator, "D_Y": build_discriminator}
    nets = {}
    for i, name in enumerate(("G", "F", "D_X", "D_Y")):
        if name in model_cfgs:
            nets[name] = builders[name](model_cfgs[name], seeds[i])
    rng = torch.Generator().manual_seed(seeds[4]).get_state()
    return assemble_state(cfg, nets, model_cfgs, rng)


def set_lr(state: TrainState, lr: float) -> None:
    for opt in state.optimizers().values():
        for g in opt.param_groups:
            g["lr"] = lr


def current_lr(state: TrainState) -> float:
    return state.opt_gen.param_groups[0]["lr"]


def _match_size(out, ref):
    """Bring ``out`` and ``ref`` to the smaller of their two sizes by area pooling."""
    if out.shape == ref.shape:
        return out, ref
    if out.shape[-1] > ref.shape[-1]:
        return F.avg_pool2d(out, out.shape[-1] // ref.shape[-1]), ref
    return out, F.avg_pool2d(ref, ref.shape[-1] // out.shape[-1])


def _identity(G, Fn, x, y):
    Gy, y_ = _match_size(G(y), y)
    Fx, x_ = _match_size(Fn(x), x)
    return L.identity_loss(Gy, y_, Fx, x_)


def _check_finite(values: dict) -> None:
    for k, v in values.items():
        v = _scalar(v)
        if not math.isfinite(v):
            raise NonFiniteLossError(f"non-finite loss component {k!r} = {v}")


def _critic_update(critic, opt, real, fake, lambda_gp):
    opt.zero_grad(set_to_none=True)
    u = torch.rand(real.shape[0], dtype=real.dtype)
    gp = L.gradient_penalty(critic, real, fake, u) if lambda_gp > 0 else torch.zeros((), dtype=real.dtype)
    loss = L.critic_loss(critic(real), critic(fake), gp, lambda_gp)
    return loss, gp


def generator_losses(state: TrainState, x, y, paired: bool) -> dict:
    """Generator-side loss components as tensors (graph attached)."""
    cfg, w = state.cfg, state.cfg.weights
    G, Fn = state.G, state.F
    Gx = G(x)
    if cfg.variant == "g_forward":
        return {"sup": L.mae(Gx, y)}
    if cfg.variant == "g_adversarial":
        return {"adv_G": L.generator_adv_loss(state.D_Y(Gx)), "sup": L.mae(Gx, y)}
    Fy = Fn(y)
    comps = {
        "adv_G": L.generator_adv_loss(state.D_Y(Gx)),
        "adv_F": L.generator_adv_loss(state.D_X(Fy)),
        "cyc": L.cycle_loss(x, Fn(Gx), y, G(Fy)),
        "idt": _identity(G, Fn, x, y),
        "jst": L.jst_loss(Gx, y, w.tau),
    }
    if paired and cfg.mode != "unsupervised":
        comps["sup"] = L.supervision_loss(Gx, y, Fy, x)
    return comps


def _scalar(v) -> float:
    return float(v.detach()) if isinstance(v, torch.Tensor) else float(v)


def _bundle(comps: dict, state: TrainState, gp: dict):
    mode = state.cfg.mode if state.cfg.variant == "gan_circle" else "supervised"
    full = {k: comps.get(k, torch.zeros(())) for k in L.COMPONENTS if k not in ("gp_X", "gp_Y")}
    b = L.total_objective(full, state.cfg.weights, mode)
    total = b.total
    vals = {k: _scalar(getattr(b, k)) for k in L.COMPONENTS}
    vals.update({k: _scalar(v) for k, v in gp.items()})
    return LossBundle(**vals, total=_scalar(total)), total


def _set_train(state: TrainState, flag: bool) -> None:
    for net in state.networks().values():
        net.train(flag)


def train_step(state: TrainState, batch, mode: Optional[str] = None):
    """One round of critic updates followed by one generator update.

    Returns the mutated ``state`` and the LossBundle evaluated during the
    generator update (gp terms from the last critic update).
    """
    cfg = state.cfg
    if mode is not None and mode != cfg.mode:
        raise ValueError(f"batch mode {mode!r} does not match state mode {cfg.mode!r}")
    x = torch.from_numpy(np.asarray(batch.x, dtype=np.float32))
    y = torch.from_numpy(np.asarray(batch.y, dtype=np.float32))
    paired = batch.kind == "paired"
    if cfg.mode == "supervised" and not paired:
        raise ValueError("supervised training needs paired batches")
    with torch.random.fork_rng(devices=[]):
        torch.set_rng_state(state.rng_state)
        _set_train(state, True)
        gp_vals = {}
        lam = cfg.weights.lambda_gp
        critics = [(name, c, o) for name, c, o in
                   (("gp_Y", state.D_Y, state.opt_dy), ("gp_X", state.D_X, state.opt_dx)) if c is not None]
        for _ in range(cfg.critic_steps_per_gen_step if critics else 0):
            with torch.no_grad():
                fakes = {"gp_Y": state.G(x), "gp_X": state.F(y) if state.F is not None else None}
            reals = {"gp_Y": y, "gp_X": x}
            for name, critic, opt in critics:
                loss, gp = _critic_update(critic, opt, reals[name], fakes[name], lam)
                _check_finite({name: gp, f"critic loss ({name[-1]})": loss})
                loss.backward()
                opt.step()
                gp_vals[name] = gp.detach()
        state.opt_gen.zero_grad(set_to_none=True)
        comps = generator_losses(state, x, y, paired)
        bundle, total = _bundle(comps, state, gp_vals)
        _check_finite({k: getattr(bundle, k) for k in L.COMPONENTS + ("total",)})
        total.backward()
        state.opt_gen.step()
        for opt in (state.opt_dx, state.opt_dy):
            if opt is not None:
                opt.zero_grad(set_to_none=True)
        state.rng_state = torch.get_rng_state()
    state.step += 1
    return state, bundle


def evaluate_objective(state: TrainState, batch, training: bool = False) -> LossBundle:
    """Generator objective on ``batch`` without updating anything (dropout off by default)."""
    x = torch.from_numpy(np.asarray(batch.x, dtype=np.float32))
    y = torch.from_numpy(np.asarray(batch.y, dtype=np.float32))
    _set_train(state, training)
    try:
        with torch.no_grad():
            comps = generator_losses(state, x, y, batch.kind == "paired")
            bundle, _ = _bundle(comps, state, {})
    finally:
        _set_train(state, True)
    return bundle


def validate_datasets(cfg: TrainConfig, paired: list, unpaired: UnpairedSet) -> None:
    unpaired = unpaired or UnpairedSet()
    has_pools = bool(unpaired.x) and bool(unpaired.y)
    if cfg.mode == "supervised" and not paired:
        raise ValueError("supervised mode needs paired samples")
    if cfg.mode == "semi":
        if not paired:
            raise ValueError("semi-supervised mode needs paired samples")
        if not has_pools and cfg.paired_fraction < 1.0:
            raise ValueError("semi-supervised mode needs nonempty unpaired X and Y pools")
    if cfg.mode == "unsupervised" and not has_pools and not paired:
        raise ValueError("unsupervised mode needs unpaired X and Y pools")


def _row(state: TrainState, epoch: int, lr: float, b: LossBundle) -> dict:
    row = {"step": state.step, "epoch": epoch, "lr": lr}
    row.update({k: getattr(b, k) for k in L.COMPONENTS + ("total",)})
    return row


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def append_log(path, rows: list) -> None:
    path = Path(path)
    new = not path.exists()
    with path.open("a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in LOG_COLUMNS])


def read_log(path) -> list:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def train(cfg: TrainConfig, datasets, state: Optional[TrainState] = None, *, log_path=None,
          checkpoint_dir=None, max_steps: Optional[int] = None,
          on_step: Optional[Callable] = None, model_cfgs: Optional[dict] = None, hr_size: int = 64):
    """Run (or resume) training; returns (state, metric rows).

    ``datasets`` is a ``(paired, unpaired)`` tuple or a ready BatchStream.
    A checkpoint is written every ``checkpoint_period`` epochs and at the end
    when ``checkpoint_dir`` is given. ``max_steps`` stops early at that global step.
    """
    from .checkpoint import save_checkpoint

    if isinstance(datasets, BatchStream):
        stream = datasets
    else:
        paired, unpaired = datasets
        validate_datasets(cfg, paired, unpaired)
        stream = make_batches(paired, unpaired, cfg.batch_size, cfg.mode, cfg.seed, cfg.semi_ratio)
    if state is None:
        state = init_state(cfg, model_cfgs, hr_size)
    rows = []
    ckdir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    for epoch in range(state.epoch, cfg.total_epochs):
        lr = lr_schedule(epoch, cfg)
        set_lr(state, lr)
        batches = stream.epoch(epoch)
        for batch in batches[state.step_in_epoch:]:
            if max_steps is not None and state.step >= max_steps:
                break
            state, bundle = train_step(state, batch)
            state.step_in_epoch += 1
            row = _row(state, epoch, lr, bundle)
            rows.append(row)
            if log_path is not None:
                append_log(log_path, [row])
            if on_step is not None:
                on_step(state, row)
        else:
            state.epoch, state.step_in_epoch = epoch + 1, 0
            if ckdir is not None and (epoch + 1) % cfg.checkpoint_period == 0:
                save_checkpoint(state, ckdir / f"epoch_{epoch + 1:03d}.gcir")
            continue
        break
    if ckdir is not None:
        save_checkpoint(state, ckdir / "final.gcir")
    log.info("stopped at epoch %d, step %d", state.epoch, state.step)
    return state, rows
