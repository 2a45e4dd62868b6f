"""Observation -> Gaussian latent -> SE(3) pose sampling pipeline.

Two dense networks: an encoder predicting a diagonal Gaussian posterior over
a d-dimensional latent space, and a pose map turning latent samples into
poses (bounded translation via a sigmoid-affine head, rotation via the
continuous 6D representation).  An "ablation" mode collapses the latent to a
single point so the pipeline degenerates to a plain pose regressor.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import diffnet
from .diffnet import Network, sigmoid
from .geometry import (
    Pose,
    PoseSampleSet,
    RotationRecoveryError,
    rotation_from_6d,
    rotation_from_6d_backward,
)

LOG_VAR_CLAMP = 20.0

_KIND_MODEL = 2
_MODE_TAG = {"variational": 0, "ablation": 1}
_MODE_NAME = {v: k for k, v in _MODE_TAG.items()}


def _as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _tagged_seed(seed, tag):
    """Extend a seed (int or flat entropy list) with a stream tag."""
    if isinstance(seed, (list, tuple)):
        return [*seed, tag]
    return [seed, tag]


@dataclass(frozen=True)
class GaussianLatent:
    """Diagonal Gaussian posterior parameters (mu, log sigma^2).

    deterministic=True marks the point-mass latent of the ablation mode:
    sampling returns mu exactly and the KL term is undefined.
    """

    mu: np.ndarray
    log_var: np.ndarray
    deterministic: bool = False

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        lv = np.clip(np.asarray(self.log_var, dtype=np.float64), -LOG_VAR_CLAMP, LOG_VAR_CLAMP)
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(lv))):
            raise ValueError("latent parameters must be finite")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "log_var", lv)

    @property
    def sigma(self):
        if self.deterministic:
            return np.zeros_like(self.mu)
        return np.exp(0.5 * self.log_var)


@dataclass(frozen=True)
class SceneBounds:
    """Per-axis metric translation range (meters)."""

    mins: np.ndarray  # (3,)
    maxs: np.ndarray  # (3,)

    def __post_init__(self):
        mins = np.asarray(self.mins, dtype=np.float64).reshape(3)
        maxs = np.asarray(self.maxs, dtype=np.float64).reshape(3)
        if not np.all(mins < maxs):
            raise ValueError("bounds must satisfy min < max on every axis")
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)

    @property
    def extent(self):
        return self.maxs - self.mins

    @property
    def scale(self) -> float:
        """Largest axis extent; used for scene-relative thresholds."""
        return float(np.max(self.extent))

    def contains(self, t, margin=0.0) -> bool:
        t = np.asarray(t, dtype=np.float64)
        return bool(np.all(t >= self.mins - margin) and np.all(t <= self.maxs + margin))


@dataclass(frozen=True)
class Architecture:
    """Network shape knobs: latent dim, pose-map depth/width, encoder widths."""

    d: int = 16
    n_layers: int = 3
    posemap_width: int = 128
    encoder_hidden: tuple = (256, 256)


@dataclass
class PoseRegressor:
    encoder: Network  # obs_dim -> 2d
    posemap: Network  # d -> 9
    bounds: SceneBounds
    d: int
    mode: str = "variational"

    def __post_init__(self):
        if self.mode not in _MODE_TAG:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.encoder.output_dim != 2 * self.d:
            raise ValueError("encoder must output 2*d values (mu, log_var)")
        if self.posemap.input_dim != self.d or self.posemap.output_dim != 9:
            raise ValueError("pose map must be d -> 9")

    @property
    def obs_dim(self):
        return self.encoder.input_dim

    def copy(self) -> "PoseRegressor":
        return PoseRegressor(
            self.encoder.copy(), self.posemap.copy(), self.bounds, self.d, self.mode
        )


def build_regressor(
    obs_dim, bounds: SceneBounds, arch: Architecture = Architecture(),
    mode="variational", seed=0,
) -> PoseRegressor:
    """Fresh regressor with seeded initialization.

    Encoder: obs_dim -> encoder_hidden (relu) -> 2d (linear).
    Pose map: d -> width (relu) -> width x n_layers (relu) -> 9 (linear);
    the sigmoid on the translation head is applied in decode().
    """
    enc_dims = [obs_dim, *arch.encoder_hidden, 2 * arch.d]
    enc_acts = ["relu"] * len(arch.encoder_hidden) + ["linear"]
    pm_dims = [arch.d] + [arch.posemap_width] * (arch.n_layers + 1) + [9]
    pm_acts = ["relu"] * (arch.n_layers + 1) + ["linear"]
    encoder = diffnet.init_network(enc_dims, enc_acts, seed=_tagged_seed(seed, 1))
    posemap = diffnet.init_network(pm_dims, pm_acts, seed=_tagged_seed(seed, 2))
    return PoseRegressor(encoder, posemap, bounds, arch.d, mode)


# ---------------------------------------------------------------------------
# Forward pipeline
# ---------------------------------------------------------------------------


def encode(m: PoseRegressor, obs) -> GaussianLatent:
    """Observation -> latent posterior (point mass in ablation mode)."""
    latent, _ = encode_cached(m, obs)
    return latent


def encode_cached(m: PoseRegressor, obs):
    """encode() variant that also returns the forward cache for backprop."""
    out, cache = diffnet.forward(m.encoder, obs)
    mu, log_var = out[: m.d], out[m.d :]
    if m.mode == "ablation":
        return GaussianLatent(mu, np.zeros_like(mu), deterministic=True), cache
    return GaussianLatent(mu, log_var), cache


def sample_latent(g: GaussianLatent, M, seed):
    """Draw M reparameterized samples; returns an (M, d) array (rows are samples)."""
    z, _ = sample_latent_with_eps(g, M, seed)
    return z


def sample_latent_with_eps(g: GaussianLatent, M, seed):
    """Reparameterized draws plus the standard-normal noise that produced them.

    z_j = mu + sigma * eps_j with eps_j ~ N(0, I) from the seeded generator;
    eps is what backprop treats as constant.
    """
    if M < 1:
        raise ValueError("need at least one sample")
    d = g.mu.shape[0]
    if g.deterministic:
        eps = np.zeros((M, d))
        return np.tile(g.mu, (M, 1)), eps
    rng = _as_rng(seed)
    eps = rng.standard_normal((M, d))
    return g.mu + g.sigma * eps, eps


def decode(m: PoseRegressor, z) -> Pose:
    """Map one latent sample to a pose."""
    T, R, _, _ = decode_batch_cached(m, np.asarray(z, dtype=np.float64)[None, :])
    return Pose(T[0], R[0])


def _recover_rotations(raw9):
    """Rotations from the 6D block of raw head outputs, with degeneracy fallback.

    Degenerate rows (norm or orthogonal residual < 1e-12) get their offending
    3-vector block perturbed by 1e-8 and one retry; persistent failure raises.
    Returns (rotations, raw9_used) where raw9_used reflects any perturbation.
    """
    u = np.array(raw9, dtype=np.float64)
    a, b = u[:, 3:6], u[:, 6:9]
    na = np.linalg.norm(a, axis=1)
    bad_a = na < 1e-12
    if np.any(bad_a):
        # Distinct offsets per entry so an all-zero row cannot stay parallel.
        u[bad_a, 3:6] += np.array([1e-8, 2e-8, 3e-8])
        a = u[:, 3:6]
        na = np.linalg.norm(a, axis=1)
    a1 = a / na[:, None]
    w = b - np.sum(a1 * b, axis=1, keepdims=True) * a1
    bad_b = np.linalg.norm(w, axis=1) < 1e-12
    if np.any(bad_b):
        u[bad_b, 6:9] += np.array([3e-8, -1e-8, 2e-8])
    try:
        return rotation_from_6d(u[:, 3:]), u
    except RotationRecoveryError as err:
        raise RotationRecoveryError(f"6D recovery failed after perturbation: {err}") from err


def decode_batch_cached(m: PoseRegressor, Z):
    """Pose-map forward for an (M, d) batch of latent samples.

    Returns (translations (M,3), rotations (M,3,3), raw head outputs used
    (M,9), pose-map forward cache).
    """
    U, cache = diffnet.forward(m.posemap, Z)
    T = m.bounds.mins + sigmoid(U[:, :3]) * m.bounds.extent
    R, u_used = _recover_rotations(U)
    return T, R, u_used, cache


def decode_head_backward(m: PoseRegressor, u_used, dT, dR):
    """Gradient through the decode head: (dL/dT, dL/dR) -> dL/d(raw 9-vector)."""
    dU = np.empty_like(u_used[:, :9])
    s = sigmoid(u_used[:, :3])
    dU[:, :3] = dT * m.bounds.extent * s * (1.0 - s)
    dU[:, 3:] = rotation_from_6d_backward(u_used[:, 3:], dR)
    return dU


def predict_posterior(m: PoseRegressor, obs, M=1000, seed=0) -> PoseSampleSet:
    """Simulate the pose posterior: encode, draw M latents, decode each.

    Bit-for-bit reproducible given (parameters, obs, seed).  In ablation mode
    the M poses are identical copies of the single prediction.
    """
    latent = encode(m, obs)
    Z = sample_latent(latent, M, seed)
    T, R, _, _ = decode_batch_cached(m, Z)
    return PoseSampleSet(T, R, seed=seed if isinstance(seed, int) else None)


def kl_to_standard_normal(g: GaussianLatent) -> float:
    """Closed-form KL(q || N(0, I)) for a diagonal Gaussian.

    0.5 * sum(mu^2 + sigma^2 - 1 - log sigma^2); nonnegative, zero iff the
    posterior equals the prior.
    """
    if g.deterministic:
        raise ValueError("KL to the prior is undefined for a point-mass latent")
    var = np.exp(g.log_var)
    return float(0.5 * np.sum(g.mu**2 + var - 1.0 - g.log_var))


def kl_gradients(g: GaussianLatent):
    """d(KL)/d(mu), d(KL)/d(log_var) for the closed form above."""
    return g.mu.copy(), 0.5 * (np.exp(g.log_var) - 1.0)


# ---------------------------------------------------------------------------
# Model checkpoints (shared "VAPR" container, model-level header)
# ---------------------------------------------------------------------------


def save_checkpoint(path, m: PoseRegressor, scene_id=""):
    """Write both networks plus bounds, latent dim, mode and scene id."""
    sid = scene_id.encode("utf-8")
    parts = [
        diffnet._MAGIC,
        struct.pack("<IB", diffnet._FORMAT_VERSION, _KIND_MODEL),
        struct.pack("<BIH", _MODE_TAG[m.mode], m.d, len(sid)),
        sid,
        np.ascontiguousarray(
            np.concatenate([m.bounds.mins, m.bounds.maxs]), dtype="<f8"
        ).tobytes(),
        diffnet._pack_network(m.encoder),
        diffnet._pack_network(m.posemap),
    ]
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def load_checkpoint(path):
    """Read a model checkpoint; returns (PoseRegressor, scene_id)."""
    with open(path, "rb") as f:
        r = diffnet._Reader(f.read())
    if r.take(4) != diffnet._MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    version, kind = r.unpack("<IB")
    if version != diffnet._FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    if kind != _KIND_MODEL:
        raise ValueError("checkpoint does not hold a pose-regressor model")
    mode_tag, d, sid_len = r.unpack("<BIH")
    scene_id = r.take(sid_len).decode("utf-8")
    box = r.array((6,))
    bounds = SceneBounds(box[:3], box[3:])
    encoder = diffnet._unpack_network(r)
    posemap = diffnet._unpack_network(r)
    return PoseRegressor(encoder, posemap, bounds, d, _MODE_NAME[mode_tag]), scene_id
