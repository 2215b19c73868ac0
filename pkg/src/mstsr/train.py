"""Supervised training on pseudo-pairs: L1 loss, Adam, step LR schedule.

The loss choice (L1), Adam betas/eps and the milestone schedule are
conventions of this architecture family, not fixed by the method itself;
all are overridable through TrainConfig.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import metrics as mx
from . import model as M
from . import tensor as T
from .augment import AugmentationSpec, make_rng, pair_at_index
from .tensor import TensorF


class TrainError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    total_iters: int = 2000
    batch_size: int = 4
    lr0: float = 2e-3
    milestones: tuple[int, ...] = ()  # default: {50, 80, 90, 95}% of total
    lr_decay: float = 0.5
    seed: int = 0
    eval_every: int = 500
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_eps: float = 1e-8
    precision: str = "float32"

    def __post_init__(self):
        if not self.milestones:
            self.milestones = tuple(sorted({
                m for m in (int(self.total_iters * f) for f in (0.5, 0.8, 0.9, 0.95))
                if 0 < m < self.total_iters
            }))
        self.milestones = tuple(self.milestones)
        if list(self.milestones) != sorted(set(self.milestones)):
            raise TrainError("milestones must be strictly increasing")
        if self.milestones and self.milestones[-1] >= self.total_iters:
            raise TrainError("milestones must be < total_iters")
        if not (0.0 < self.lr_decay < 1.0):
            raise TrainError("lr_decay must be in (0, 1)")

    @classmethod
    def paper(cls) -> "TrainConfig":
        return cls(total_iters=500_000, batch_size=16, lr0=2e-3)

    def to_dict(self):
        return asdict(self)


def lr_at(config: TrainConfig, iteration: int) -> float:
    """Piecewise-constant LR: lr0 * decay^(milestones passed)."""
    if not (0 <= iteration < config.total_iters):
        raise TrainError(f"iteration {iteration} out of range")
    passed = sum(1 for m in config.milestones if iteration >= m)
    return config.lr0 * config.lr_decay**passed


def l1_loss(pred: TensorF, target: TensorF) -> TensorF:
    if pred.shape != target.shape:
        raise TrainError(f"loss shape mismatch: {pred.shape} vs {target.shape}")
    return T.mean(T.abs_(pred - target))


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, TensorF], state: AdamState, lr: float
) -> None:
    """Bias-corrected Adam update; zeroes gradients afterwards."""
    missing = [k for k, t in params.items() if t.grad is None]
    if missing:
        raise TrainError(f"missing gradient for {missing[0]}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name in params:
        t = params[name]
        g = t.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(t.data, dtype=np.float64)
            state.v[name] = np.zeros_like(t.data, dtype=np.float64)
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        mhat = state.m[name] / c1
        vhat = state.v[name] / c2
        t.data = (t.data - lr * mhat / (np.sqrt(vhat) + state.eps)).astype(t.dtype)
        t.zero_grad()


def _batch_tensors(samples, dtype):
    lr = np.stack([s.pseudo_lr for s in samples]).astype(dtype) / 255.0
    hr = np.stack([s.pseudo_hr for s in samples]).astype(dtype) / 255.0
    return (
        TensorF(lr.transpose(0, 3, 1, 2)),
        TensorF(hr.transpose(0, 3, 1, 2)),
    )


def evaluate_psnr(
    params: dict[str, TensorF],
    model_config: M.ModelConfig,
    holdout_images: list[np.ndarray],
) -> float:
    """Mean held-out Y-PSNR: model SR of the bicubic-downscaled holdout vs HR."""
    from . import resample as rs

    s = model_config.sr_factor
    vals = []
    for hr in holdout_images:
        H, W = hr.shape[:2]
        hr_c = np.ascontiguousarray(hr[: H - H % s, : W - W % s])
        lr = rs.downscale_by_int(hr_c, s)
        sr = M.upscale_image(params, model_config, lr)
        vals.append(mx.psnr_y(hr_c, sr, shave=s))
    finite = [v for v in vals if np.isfinite(v)]
    return float(np.mean(finite)) if finite else float("inf")


def train(
    train_config: TrainConfig,
    model_config: M.ModelConfig,
    aug_spec: AugmentationSpec,
    train_images: list,
    holdout_images: list[np.ndarray],
    out_dir: str,
    log_every: int = 50,
    quiet: bool = False,
) -> dict:
    """Full training run; writes checkpoints and an NDJSON metrics log.

    Returns a summary dict with final/best checkpoint paths and eval PSNRs.
    """
    if not train_images:
        raise TrainError("empty training manifest")
    os.makedirs(out_dir, exist_ok=True)
    dtype = np.float64 if train_config.precision == "float64" else np.float32
    rng = make_rng(train_config.seed, 0xA11CE)
    params = M.init_params(model_config, rng, dtype=dtype)
    state = AdamState(
        beta1=train_config.adam_beta1,
        beta2=train_config.adam_beta2,
        eps=train_config.adam_eps,
    )
    log_path = os.path.join(out_dir, "metrics.ndjson")
    best_psnr = -np.inf
    best_path = os.path.join(out_dir, "checkpoint_best.bin")
    final_path = os.path.join(out_dir, "checkpoint_final.bin")
    loss_hist = []
    t_start = time.time()
    with open(log_path, "w") as log:
        for it in range(train_config.total_iters):
            samples = [
                pair_at_index(
                    train_images,
                    aug_spec,
                    train_config.seed,
                    it * train_config.batch_size + j,
                )
                for j in range(train_config.batch_size)
            ]
            lr_t, hr_t = _batch_tensors(samples, dtype)
            with T.Tape() as tape:
                pred = M.forward(params, model_config, lr_t)
                loss = l1_loss(pred, hr_t)
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                prov = samples[0].provenance
                raise TrainError(
                    f"non-finite loss at iteration {it} (first sample: {prov})"
                )
            T.backward(tape, loss)
            lr_now = lr_at(train_config, it)
            adam_step(params, state, lr_now)
            loss_hist.append(loss_val)
            record = {"iter": it, "loss": loss_val, "lr": lr_now}
            do_eval = (
                train_config.eval_every
                and ((it + 1) % train_config.eval_every == 0
                     or it + 1 == train_config.total_iters)
            )
            if do_eval and holdout_images:
                psnr = evaluate_psnr(params, model_config, holdout_images)
                record["eval_psnr_y"] = psnr
                ck = os.path.join(out_dir, f"checkpoint_{it + 1:07d}.bin")
                M.save_checkpoint(params, model_config, ck)
                if psnr > best_psnr:
                    best_psnr = psnr
                    M.save_checkpoint(params, model_config, best_path)
                if not quiet:
                    print(
                        f"iter {it + 1}/{train_config.total_iters} "
                        f"loss {np.mean(loss_hist[-log_every:]):.5f} "
                        f"lr {lr_now:.2e} eval Y-PSNR {psnr:.3f} dB"
                    )
            elif not quiet and log_every and (it + 1) % log_every == 0:
                print(
                    f"iter {it + 1}/{train_config.total_iters} "
                    f"loss {np.mean(loss_hist[-log_every:]):.5f} lr {lr_now:.2e}"
                )
            log.write(json.dumps(record) + "\n")
    M.save_checkpoint(params, model_config, final_path)
    if best_psnr == -np.inf:
        M.save_checkpoint(params, model_config, best_path)
    summary = {
        "final_checkpoint": final_path,
        "best_checkpoint": best_path,
        "best_eval_psnr_y": None if best_psnr == -np.inf else best_psnr,
        "final_loss": loss_hist[-1],
        "seconds": time.time() - t_start,
        "log": log_path,
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2)
    _plot_loss(loss_hist, train_config, os.path.join(out_dir, "loss_curve.png"))
    return summary


def _plot_loss(loss_hist, config, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(loss_hist, lw=0.4, alpha=0.4, color="C0")
    if len(loss_hist) > 50:
        k = np.ones(50) / 50
        ax.plot(
            np.arange(49, len(loss_hist)),
            np.convolve(loss_hist, k, mode="valid"),
            color="C1",
            label="50-iter mean",
        )
        ax.legend()
    ax.set_xlabel("iteration")
    ax.set_ylabel("L1 loss")
    ax.set_yscale("log")
    for m in config.milestones:
        ax.axvline(m, color="gray", ls=":", lw=0.7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
