"""Residual-prediction training: L1 objective, Adam, ablation variants, run loop."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, replace
import datetime as _dt
import logging
import math
from pathlib import Path

import numpy as np

from . import checkpoint, denoiser
from .degradations import TASKS, DatasetSpec, TaskSample, make_batch, make_split
from .diffusion import forward_closed_form, sample
from .errors import ConfigError, DimensionError, NonFiniteLossError
from .metrics import psnr, ssim
from .schedule import ScheduleTable, build_schedule, with_delta_bar

log = logging.getLogger(__name__)

ABLATION_MODES = ("full", "no_sdt", "no_ec_sdt", "no_ic_sdt")


@dataclass
class RunConfig:
    # schedule
    T: int = 50
    delta_bar_T: float = 0.9
    beta_bar_T: float = 1.0
    schedule_shape: str = "linear-increasing"
    # model
    base_width: int = 8
    multipliers: tuple = (1, 2)
    # optimizer
    lr: float = 8e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # training loop
    iterations: int = 5000
    batch_size: int = 10
    ablation_mode: str = "full"
    seed: int = 0
    flips: bool = True
    dtype: str = "float32"
    log_every: int = 100
    eval_every: int = 1000
    ckpt_every: int = 1000
    out_dir: str = "runs"
    resume: str = ""
    # sampling / evaluation
    sampling_steps: int = 3
    sampler: str = "ddim"
    eval_seed: int = 1234
    data: DatasetSpec = field(default_factory=DatasetSpec)

    def __post_init__(self):
        self.multipliers = tuple(int(m) for m in self.multipliers)
        if isinstance(self.data, dict):
            self.data = DatasetSpec(**self.data)
        if not self.lr > 0:
            raise ConfigError(f"optim.lr: must be positive, got {self.lr}")
        if self.iterations < 1:
            raise ConfigError(f"train.iterations: must be >= 1, got {self.iterations}")
        if self.batch_size < 1:
            raise ConfigError(f"train.batch_size: must be >= 1, got {self.batch_size}")
        if self.ablation_mode not in ABLATION_MODES:
            raise ConfigError(f"train.ablation_mode: expected one of {ABLATION_MODES}, "
                              f"got {self.ablation_mode!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"train.dtype: expected float32 or float64, got {self.dtype!r}")
        if self.sampler not in ("ddim", "ddpm"):
            raise ConfigError(f"sampling.sampler: expected ddim or ddpm, got {self.sampler!r}")
        if not 1 <= self.sampling_steps <= self.T:
            raise ConfigError(f"sampling.steps: must lie in [1, {self.T}]")

    def schedule(self) -> ScheduleTable:
        return build_schedule(self.T, self.delta_bar_T, self.beta_bar_T, self.schedule_shape)

    def to_dict(self):
        d = asdict(self)
        d["multipliers"] = list(self.multipliers)
        return d


@dataclass(frozen=True)
class Conditioning:
    """How the degraded image conditions the model.

    ``explicit``: the degraded image enters the diffusion algebra (residual target,
    impure endpoint).  ``implicit``: it is concatenated to the denoiser input.
    """
    explicit: bool = True
    implicit: bool = True


def apply_ablation(mode: str, sched: ScheduleTable, conditioning: Conditioning = Conditioning()):
    """Schedule and conditioning for one of the component-ablation modes."""
    if mode not in ABLATION_MODES:
        raise ConfigError(f"ablation_mode: expected one of {ABLATION_MODES}, got {mode!r}")
    if mode == "full":
        return sched, conditioning
    sched = with_delta_bar(sched, 0.0)
    if mode == "no_sdt":
        return sched, conditioning
    if mode == "no_ec_sdt":
        return sched, replace(conditioning, explicit=False)
    return sched, replace(conditioning, implicit=False)


def loss_l1(Ires_true, Ires_pred) -> float:
    if np.shape(Ires_true) != np.shape(Ires_pred):
        raise DimensionError(f"shape mismatch: {np.shape(Ires_true)} vs {np.shape(Ires_pred)}")
    return float(np.mean(np.abs(np.asarray(Ires_pred) - np.asarray(Ires_true))))


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params: denoiser.DenoiserParams):
        return cls({k: np.zeros_like(a) for k, a in params.arrays.items()},
                   {k: np.zeros_like(a) for k, a in params.arrays.items()}, 0)


def adam_update(params: denoiser.DenoiserParams, grads, state: AdamState, lr=8e-5,
                beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam step; returns new params and state (inputs untouched)."""
    step = state.step + 1
    c1, c2 = 1 - beta1**step, 1 - beta2**step
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.arrays.items():
        g = grads[k].astype(p.dtype, copy=False)
        m = beta1 * state.m[k] + (1 - beta1) * g
        v = beta2 * state.v[k] + (1 - beta2) * g * g
        new_p[k] = (p - lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)
        new_m[k], new_v[k] = m, v
    return denoiser.DenoiserParams(params.arch, new_p), AdamState(new_m, new_v, step)


def stack_batch(batch, dtype=np.float64):
    I0 = np.stack([s.I0 for s in batch]).astype(dtype)
    Iin = np.stack([s.Iin for s in batch]).astype(dtype)
    return I0, Iin


def random_flips(batch, rng):
    """Flip each pair horizontally and/or vertically with probability 1/2 each."""
    out = []
    for s in batch:
        I0, Iin = s.I0, s.Iin
        if rng.random() < 0.5:
            I0, Iin = I0[:, :, ::-1], Iin[:, :, ::-1]
        if rng.random() < 0.5:
            I0, Iin = I0[:, ::-1], Iin[:, ::-1]
        out.append(TaskSample.from_pair(s.task, np.ascontiguousarray(I0), np.ascontiguousarray(Iin)))
    return out


def train_step(params, opt_state: AdamState, sched: ScheduleTable, batch, rng, *,
               lr=8e-5, beta1=0.9, beta2=0.999, adam_eps=1e-8,
               conditioning: Conditioning = Conditioning(), net=denoiser, seed=None):
    """One optimisation step on a batch.

    Each sample gets its own ``t ~ U{1..T}`` and ``eps ~ N(0, I)``; the loss is the
    mean absolute residual error over elements and batch.  ``net`` is anything
    exposing ``forward(params, It, Iin, t, return_cache=True)`` and
    ``backward(params, cache, upstream)``.
    """
    if not batch:
        raise ConfigError("batch: must be nonempty")
    I0, Iin = stack_batch(batch, params.dtype)
    n = I0.shape[0]
    t = rng.integers(1, sched.T + 1, size=n)
    eps = rng.standard_normal(I0.shape).astype(params.dtype)
    cond = Iin if conditioning.explicit else np.zeros_like(Iin)
    It = forward_closed_form(sched, I0, cond, eps, t).astype(params.dtype, copy=False)
    target = cond - I0
    pred, cache = net.forward(params, It, Iin, t, return_cache=True)
    diff = pred - target
    loss = float(np.mean(np.abs(diff)))
    if not math.isfinite(loss):
        raise NonFiniteLossError(f"non-finite loss at step {opt_state.step + 1} (seed {seed})")
    grads = net.backward(params, cache, np.sign(diff) / diff.size)
    params, opt_state = adam_update(params, grads, opt_state, lr, beta1, beta2, adam_eps)
    return params, opt_state, loss


def make_denoiser_fn(params, conditioning: Conditioning = Conditioning()):
    def fn(It, Iin, t):
        return denoiser.forward(params, It.astype(params.dtype, copy=False),
                                Iin.astype(params.dtype, copy=False), t).astype(It.dtype)
    return fn


def restore(params, sched, Iin, *, steps=3, sampler="ddim", seed=0,
            conditioning: Conditioning = Conditioning()):
    """Run the reverse process on a batch (N, C, H, W) of degraded images."""
    return sample(sched, make_denoiser_fn(params, conditioning), np.asarray(Iin, dtype=np.float64),
                  steps, seed, sampler, explicit_condition=conditioning.explicit)


def evaluate(params, sched, samples, *, steps=3, sampler="ddim", seed=0,
             conditioning: Conditioning = Conditioning(), with_ssim=False):
    """Per-task mean PSNR (and optionally SSIM) of restored and degraded images vs. clean."""
    by_task = {}
    for s in samples:
        by_task.setdefault(s.task, []).append(s)
    out = {}
    for i, (task, group) in enumerate(by_task.items()):
        I0, Iin = stack_batch(group)
        restored = restore(params, sched, Iin, steps=steps, sampler=sampler, seed=seed + i,
                           conditioning=conditioning)
        out[task] = {
            "psnr_restored": float(np.mean([psnr(r, c) for r, c in zip(restored, I0)])),
            "psnr_degraded": float(np.mean([psnr(d, c) for d, c in zip(Iin, I0)])),
            "n": len(group),
        }
        if with_ssim:
            out[task]["ssim_restored"] = float(np.mean([ssim(r, c) for r, c in zip(restored, I0)]))
            out[task]["ssim_degraded"] = float(np.mean([ssim(d, c) for d, c in zip(Iin, I0)]))
    return out


def model_setup(cfg: RunConfig, image_channels: int = 3):
    """Schedule, conditioning and a fresh model for a run config (ablation applied)."""
    sched, cond = apply_ablation(cfg.ablation_mode, cfg.schedule())
    in_ch = 2 * image_channels if cond.implicit else image_channels
    params = denoiser.init_denoiser(cfg.seed, cfg.base_width, cfg.multipliers, in_ch,
                                    image_channels, cfg.T, np.dtype(cfg.dtype))
    return sched, cond, params


@dataclass
class TrainResult:
    run_dir: Path
    checkpoint: Path
    metrics: Path
    final_eval: dict
    losses: list


def _save(path, params, opt: AdamState, cfg: RunConfig):
    extra = {f"adam.m.{k}": a for k, a in opt.m.items()}
    extra.update({f"adam.v.{k}": a for k, a in opt.v.items()})
    meta = {"step": opt.step, "config": cfg.to_dict()}
    return checkpoint.save(path, params, meta, extra)


def load_training_state(path):
    params, meta, extra = checkpoint.load(path)
    m = {k: extra[f"adam.m.{k}"] for k in params.arrays if f"adam.m.{k}" in extra}
    v = {k: extra[f"adam.v.{k}"] for k in params.arrays if f"adam.v.{k}" in extra}
    if len(m) == len(params.arrays) and len(v) == len(params.arrays):
        opt = AdamState(m, v, int(meta.get("step", 0)))
    else:
        opt = AdamState.zeros_like(params)
        opt.step = int(meta.get("step", 0))
    return params, opt, meta


def new_run_dir(root, tag="train"):
    stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    d = Path(root) / f"{tag}-{stamp}"
    d.mkdir(parents=True, exist_ok=False)
    return d


def train(cfg: RunConfig, run_dir=None, progress=None) -> TrainResult:
    """Full training loop: batches, flips, steps, periodic eval/checkpoints, CSV log."""
    sched, cond, params = model_setup(cfg)
    opt = AdamState.zeros_like(params)
    if cfg.resume:
        params, opt, _ = load_training_state(cfg.resume)
        expected = model_setup(cfg)[2]
        if params.arch != expected.arch:
            from .errors import CheckpointError

            raise CheckpointError(f"{cfg.resume}: architecture {params.arch} does not match "
                                  f"config {expected.arch}")
        params = params.astype(np.dtype(cfg.dtype))
    run_dir = Path(run_dir) if run_dir is not None else new_run_dir(cfg.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    test = make_split(cfg.data, "test")
    start = opt.step
    rng = np.random.default_rng([cfg.seed, start])
    data_seeds = np.random.default_rng([cfg.seed, start, 1])
    metrics_path = run_dir / "metrics.csv"
    header = ["iter", "loss"] + [f"psnr_{t}" for t in TASKS]
    losses, window = [], []
    final_eval = {}
    with open(metrics_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for it in range(start + 1, start + cfg.iterations + 1):
            batch = make_batch(cfg.data, cfg.batch_size, int(data_seeds.integers(2**63)))
            if cfg.flips:
                batch = random_flips(batch, rng)
            params, opt, loss = train_step(params, opt, sched, batch, rng, lr=cfg.lr,
                                           beta1=cfg.beta1, beta2=cfg.beta2, adam_eps=cfg.adam_eps,
                                           conditioning=cond, seed=cfg.seed)
            losses.append(loss)
            window.append(loss)
            last = it == start + cfg.iterations
            do_eval = last or (cfg.eval_every and it % cfg.eval_every == 0)
            if do_eval or last or it % cfg.log_every == 0:
                row = [it, f"{np.mean(window):.6g}"]
                window = []
                if do_eval:
                    final_eval = evaluate(params, sched, test, steps=cfg.sampling_steps,
                                          sampler=cfg.sampler, seed=cfg.eval_seed, conditioning=cond)
                    row += [f"{final_eval[t]['psnr_restored']:.4f}" if t in final_eval else ""
                            for t in TASKS]
                else:
                    row += [""] * len(TASKS)
                writer.writerow(row)
                fh.flush()
                if progress:
                    progress(it, row)
            if cfg.ckpt_every and it % cfg.ckpt_every == 0 and not last:
                _save(run_dir / f"ckpt-{it:07d}.dfui", params, opt, cfg)
    ckpt = _save(run_dir / "final.dfui", params, opt, cfg)
    return TrainResult(run_dir, ckpt, metrics_path, final_eval, losses)


def mean_psnr(eval_result) -> float:
    return float(np.mean([v["psnr_restored"] for v in eval_result.values()]))
