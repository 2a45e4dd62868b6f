"""Minibatch optimization of the Winners-Take-All sampling objective.

Three modes share one loop:

  * "wta":   beta * KL + mean pose error over the alpha-fraction of Monte
             Carlo samples closest to the label.  Selection is re-made at
             every loss evaluation and treated as a constant during
             differentiation, so gradients flow only through the winners.
  * "elbo":  beta * KL + mean pose error over all samples (the full
             expectation; collapses multimodal targets).
  * "ablation": single deterministic decode, no KL - a plain regressor.

Training is deterministic given (dataset, config): initialization, shuffling
and per-image Monte Carlo draws all derive from the config seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import diffnet, model as model_lib
from .geometry import PoseDistanceWeights
from .model import Architecture, PoseRegressor, build_regressor
from .scenes import Dataset, LabeledSample

MODES = ("wta", "elbo", "ablation")

# Seed-stream tags keeping init/shuffle/sampling draws independent.
_INIT_STREAM = 11
_SHUFFLE_STREAM = 13
_SAMPLE_STREAM = 17


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries (epoch, batch, term values)."""

    def __init__(self, epoch, batch_index, terms):
        self.epoch = epoch
        self.batch_index = batch_index
        self.terms = terms
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch_index}: {terms}"
        )


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.20
    beta: float | None = None  # None -> 0.01 for wta, 1.0 for elbo
    weights: PoseDistanceWeights = field(default_factory=PoseDistanceWeights)
    M: int = 1000
    batch_size: int = 4
    epochs: int = 500
    lr0: float = 1e-4
    n_lr_decay: int = 50
    weight_decay: float = 0.0
    mode: str = "wta"
    seed: int = 0
    arch: Architecture = field(default_factory=Architecture)

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.M < 1 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("M, batch_size and epochs must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.weight_decay < 0.0:
            raise ValueError("weight_decay must be nonnegative")
        if (self.beta is not None and self.beta < 0.0) or self.lr0 <= 0.0:
            raise ValueError("beta must be nonnegative and lr0 positive")

    @property
    def resolved_beta(self) -> float:
        if self.beta is not None:
            return self.beta
        return 1.0 if self.mode == "elbo" else 0.01


@dataclass
class EpochStats:
    epoch: int
    err: float  # mean selected-set prediction error
    kl: float
    loss: float
    lr: float
    seconds: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    checkpoint_path: str | None = None

    def to_csv(self) -> str:
        lines = ["epoch,err,kl,loss,lr,seconds"]
        for s in self.epochs:
            lines.append(
                f"{s.epoch},{s.err:.10g},{s.kl:.10g},{s.loss:.10g},"
                f"{s.lr:.10g},{s.seconds:.4f}"
            )
        return "\n".join(lines) + "\n"


def select_winners(distances, alpha):
    """Indices of the m = max(1, floor(alpha * M)) smallest distances.

    Stable ordering breaks ties at the selection boundary toward the lower
    index; the result is sorted by (distance, index).
    """
    distances = np.asarray(distances)
    if distances.size == 0:
        raise ValueError("distances must be nonempty")
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    # Tiny epsilon cancels float representation error in alpha * M (e.g.
    # 0.3 * 10 = 2.9999...), keeping the floor at its exact-arithmetic value.
    m = max(1, int(np.floor(alpha * distances.size + 1e-9)))
    return np.argsort(distances, kind="stable")[:m]


def _safe_unit(v, norms):
    """v / norms row-wise, with zero rows (norm ~ 0) mapped to zero gradient."""
    out = np.zeros_like(v)
    ok = norms > 1e-12
    shape = (-1,) + (1,) * (v.ndim - 1)
    out[ok] = v[ok] / norms[ok].reshape(shape)
    return out


def _batch_terms(m: PoseRegressor, samples, cfg: TrainConfig, rngs, with_grads):
    """Loss terms (and parameter gradients) for a minibatch of labeled images.

    Per image j, Monte Carlo draws come from rngs[j].  The whole batch runs
    through the networks as stacked matrices; gradients correspond to the
    batch-mean loss.  Returns (mean loss, per-image diagnostics, enc_tape,
    pm_tape); the tapes are None when with_grads is false.
    """
    B = len(samples)
    beta = cfg.resolved_beta
    d = m.d
    ablation = cfg.mode == "ablation"
    if ablation != (m.mode == "ablation"):
        raise ValueError(f"model mode {m.mode!r} does not match config mode {cfg.mode!r}")
    obs = np.stack([s.obs for s in samples])
    label_t = np.stack([s.pose.t for s in samples])
    label_R = np.stack([s.pose.R for s in samples])

    enc_out, enc_cache = diffnet.forward(m.encoder, obs)
    mu = enc_out[:, :d]
    if ablation:
        M = 1
        Z = mu[:, None, :]
        kl = np.zeros(B)
    else:
        M = cfg.M
        lv = np.clip(enc_out[:, d:], -model_lib.LOG_VAR_CLAMP, model_lib.LOG_VAR_CLAMP)
        sig = np.exp(0.5 * lv)
        eps = np.stack([rng.standard_normal((M, d)) for rng in rngs])
        Z = mu[:, None, :] + sig[:, None, :] * eps
        kl = 0.5 * np.sum(mu**2 + np.exp(lv) - 1.0 - lv, axis=1)

    T, R, u_used, pm_cache = model_lib.decode_batch_cached(m, Z.reshape(B * M, d))
    dt = T.reshape(B, M, 3) - label_t[:, None, :]
    dt_norm = np.sqrt(np.sum(dt * dt, axis=2))
    dRm = R.reshape(B, M, 3, 3) - label_R[:, None, :, :]
    fro = np.sqrt(np.sum(dRm * dRm, axis=(2, 3)))
    dists = cfg.weights.lam_t * dt_norm + cfg.weights.lam_r * fro  # (B, M)

    if cfg.mode == "wta":
        msel = max(1, int(np.floor(cfg.alpha * M + 1e-9)))
        order = np.argsort(dists, axis=1, kind="stable")[:, :msel]
        err = np.take_along_axis(dists, order, axis=1).mean(axis=1)
        order = np.sort(order, axis=1)  # ascending gathers are cheaper
        flat = (order + np.arange(B)[:, None] * M).reshape(-1)
    else:
        msel = M
        err = dists.mean(axis=1)
        flat = np.arange(B * M)

    losses = err if ablation else beta * kl + err
    diagnostics = [
        {"loss": float(l), "err": float(e), "kl": float(k), "n_selected": msel}
        for l, e, k in zip(losses, err, kl)
    ]
    loss = float(np.mean(losses))
    if not with_grads:
        return loss, diagnostics, None, None

    # Winner rows only; each carries weight 1/(B * msel) toward the batch mean.
    w = 1.0 / (B * msel)
    dT = (cfg.weights.lam_t * w) * _safe_unit(
        dt.reshape(B * M, 3)[flat], dt_norm.reshape(-1)[flat]
    )
    dR = (cfg.weights.lam_r * w) * _safe_unit(
        dRm.reshape(B * M, 3, 3)[flat], fro.reshape(-1)[flat]
    )
    dU = model_lib.decode_head_backward(m, u_used[flat], dT, dR)
    pm_tape, dZ = diffnet.backward(m.posemap, diffnet.slice_cache(pm_cache, flat), dU)

    dZb = dZ.reshape(B, msel, d)  # flat is per-image contiguous blocks
    dmu = dZb.sum(axis=1)
    if ablation:
        dlv = np.zeros((B, d))
    else:
        # z = mu + exp(lv/2) * eps  =>  dz/dlv = sigma * eps / 2
        eps_sel = eps.reshape(B * M, d)[flat].reshape(B, msel, d)
        dlv = np.sum(dZb * (0.5 * sig[:, None, :] * eps_sel), axis=1)
        dmu = dmu + (beta / B) * mu
        dlv = dlv + (beta / B) * 0.5 * (np.exp(lv) - 1.0)
        dlv = dlv * (np.abs(lv) < model_lib.LOG_VAR_CLAMP)

    enc_tape, _ = diffnet.backward(
        m.encoder, enc_cache, np.concatenate([dmu, dlv], axis=1)
    )
    return loss, diagnostics, enc_tape, pm_tape


def per_image_loss(m: PoseRegressor, sample: LabeledSample, cfg: TrainConfig, rng):
    """Loss for one image under the configured mode; returns (loss, diagnostics)."""
    loss, diagnostics, _, _ = _batch_terms(m, [sample], cfg, [rng], with_grads=False)
    return loss, diagnostics[0]


def image_rng(cfg_seed, epoch, dataset_index):
    """Per-image Monte Carlo stream; fresh draws at every loss evaluation."""
    return np.random.default_rng([cfg_seed, _SAMPLE_STREAM, epoch, int(dataset_index)])


def train(dataset: Dataset, cfg: TrainConfig):
    """Optimize a fresh regressor on the dataset's train split.

    Returns (model, report).  Weight decay, when set, penalizes the encoder
    weights only.  Aborts with TrainingDiverged on a non-finite batch loss.
    """
    split = dataset.train
    n = len(split)
    if n < 1:
        raise ValueError("training split is empty")

    mode = "ablation" if cfg.mode == "ablation" else "variational"
    m = build_regressor(
        split.observations.shape[1], dataset.spec.bounds, cfg.arch,
        mode=mode, seed=[cfg.seed, _INIT_STREAM],
    )
    enc_state = diffnet.AdamState.for_network(
        m.encoder, lr=cfg.lr0, weight_decay=cfg.weight_decay
    )
    pm_state = diffnet.AdamState.for_network(m.posemap, lr=cfg.lr0)

    report = TrainReport()
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = diffnet.lr_schedule(epoch, cfg.lr0, cfg.n_lr_decay)
        enc_state.lr = pm_state.lr = lr

        order = np.random.default_rng([cfg.seed, _SHUFFLE_STREAM, epoch]).permutation(n)
        err_sum = kl_sum = loss_sum = 0.0
        for batch_index, start in enumerate(range(0, n, cfg.batch_size)):
            batch = order[start : start + cfg.batch_size]
            batch_samples = [split.sample(int(i)) for i in batch]
            rngs = [image_rng(cfg.seed, epoch, i) for i in batch]
            batch_loss, diags, enc_tape, pm_tape = _batch_terms(
                m, batch_samples, cfg, rngs, with_grads=True
            )
            for diag in diags:
                err_sum += diag["err"]
                kl_sum += diag["kl"]
                loss_sum += diag["loss"]
            if not np.isfinite(batch_loss):
                raise TrainingDiverged(epoch, batch_index, diags)
            diffnet.adam_step(m.encoder, enc_tape, enc_state)
            diffnet.adam_step(m.posemap, pm_tape, pm_state)

        report.epochs.append(
            EpochStats(
                epoch=epoch,
                err=err_sum / n,
                kl=kl_sum / n,
                loss=loss_sum / n,
                lr=lr,
                seconds=time.perf_counter() - t0,
            )
        )
    return m, report


def with_overrides(cfg: TrainConfig, **kwargs) -> TrainConfig:
    """Convenience wrapper around dataclasses.replace for config overlays."""
    return replace(cfg, **kwargs)
