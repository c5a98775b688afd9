"""Conditional velocity field over 7-D grasp vectors and its flow-matching training loop.

Training pairs a rigid grasp ``g0`` with its soft correction ``g1`` under a
shared condition ``c``. For a progression time ``t ~ U(0, 1)`` the regression
input is the straight-line point ``(1 - t) g0 + t g1`` and the target is the
constant displacement ``g1 - g0``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (Adam, Affine, BatchNorm, Destandardize, GradTape, Identity, NumericalError, ReLU, Sequential,
                       SiLU, Standardize, mse)
from .encoder import LATENT_DIM
from .pose import interpolate_pose, target_velocity

log = logging.getLogger(__name__)

POSE_DIM = 7
INPUT_DIM = POSE_DIM + 1 + LATENT_DIM
HIDDEN = (128, 256, 256, 128)
OUTPUT_ACTIVATIONS = ("identity", "relu")


class TrainingError(NumericalError):
    def __init__(self, epoch: int, message: str):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    split: float = 0.8
    output_activation: str = "identity"
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    # independent t draws per pair per epoch; raise it for tiny datasets
    draws_per_pair: int = 1
    # std of Gaussian noise added to training conditions, per latent entry, in
    # units of the standardized latent block
    condition_noise: float = 0.0
    # std (meters) of Gaussian shifts applied to the rigid start position of each
    # drawn pair, with the corrected pose held fixed; 0 disables it
    start_jitter: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.split < 1.0:
            raise ValueError("split fraction must lie strictly between 0 and 1")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 2:
            raise ValueError("batch norm needs batch_size >= 2")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"output_activation must be one of {OUTPUT_ACTIVATIONS}")
        if self.draws_per_pair < 1:
            raise ValueError("draws_per_pair must be at least 1")
        if self.condition_noise < 0:
            raise ValueError("condition_noise must be non-negative")
        if self.start_jitter < 0:
            raise ValueError("start_jitter must be non-negative")


class VelocityNet:
    """MLP ``v(g, t, c)``: four hidden blocks of affine + batch norm + SiLU, then affine + output activation.

    Inputs pass through a fixed standardization and the final affine output
    through a fixed per-component rescaling, both fitted once from the
    training pairs so that every pose component trains at a comparable scale.
    """

    def __init__(self, seed: int = 0, output_activation: str = "identity", hidden=HIDDEN,
                 bn_momentum: float = 0.1, bn_eps: float = 1e-5, rng: np.random.Generator | None = None):
        if output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"output_activation must be one of {OUTPUT_ACTIVATIONS}")
        rng = rng if rng is not None else np.random.default_rng(seed)
        self.hidden = tuple(hidden)
        self.output_activation = output_activation
        self.bn_momentum, self.bn_eps = bn_momentum, bn_eps
        self.input_norm = Standardize(INPUT_DIM)
        layers = [self.input_norm]
        n_in = INPUT_DIM
        for i, n_out in enumerate(self.hidden):
            layers += [Affine(n_in, n_out, rng, name=f"fc{i}"),
                       BatchNorm(n_out, bn_momentum, bn_eps, name=f"bn{i}"),
                       SiLU()]
            n_in = n_out
        layers.append(Affine(n_in, POSE_DIM, rng, name="out"))
        self.output_scale = Destandardize(POSE_DIM)
        layers.append(self.output_scale)
        layers.append(ReLU() if output_activation == "relu" else Identity())
        self.net = Sequential(layers)

    def params(self):
        return self.net.params()

    def fit_data_stats(self, g0, g1, c, scale_output: bool = True):
        """Set the fixed input standardization and (optionally) output scaling from the training pairs."""
        g = np.vstack([g0, g1])
        cc = np.vstack([c, c])
        t = np.concatenate([np.zeros(len(g0)), np.ones(len(g1))])
        self.input_norm.fit(np.hstack([g, t[:, None], cc]))
        # one shared scale for the latent block keeps its geometry (low-variance
        # directions stay small) and gives the block unit total variance
        spread = np.sqrt(np.sum(np.var(c, axis=0)))
        self.input_norm.scale[POSE_DIM + 1:] = spread if spread > 1e-8 else 1.0
        if scale_output:
            self.output_scale.fit(g1 - g0)

    @property
    def condition_spread(self) -> float:
        return float(self.input_norm.scale[POSE_DIM + 1])

    def zero_grad(self):
        self.net.zero_grad()

    def forward(self, g, t, c, train: bool = False, tape: GradTape | None = None) -> np.ndarray:
        """Velocities for a batch: ``g`` (n, 7), ``t`` (n,) or scalar, ``c`` (n, 128)."""
        g = np.atleast_2d(np.asarray(g, dtype=np.float64))
        c = np.atleast_2d(np.asarray(c, dtype=np.float64))
        if g.shape[1] != POSE_DIM:
            raise ValueError(f"pose block must have {POSE_DIM} columns, got {g.shape}")
        if c.shape[1] != LATENT_DIM:
            raise ValueError(f"condition must have {LATENT_DIM} entries, got {c.shape[1]}")
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (g.shape[0],))
        if c.shape[0] != g.shape[0]:
            c = np.broadcast_to(c, (g.shape[0], LATENT_DIM))
        return self.net.forward(np.hstack([g, t[:, None], c]), train=train, tape=tape)

    __call__ = forward

    def velocity(self, g, t: float, c) -> np.ndarray:
        """Eval-mode velocity of a single 7-vector."""
        return self.forward(g, t, c)[0]

    def get_flat(self):
        return self.net.get_flat()

    def set_flat(self, flat):
        self.net.set_flat(flat)

    def architecture(self) -> dict:
        return {"kind": "velocity_net", "input": INPUT_DIM, "hidden": list(self.hidden), "output": POSE_DIM,
                "activation": "silu", "batchnorm": True, "output_activation": self.output_activation,
                "bn_momentum": self.bn_momentum, "bn_eps": self.bn_eps}


@dataclass
class FlowSample:
    """One training pair under a shared condition."""

    g_rigid: np.ndarray
    g_soft: np.ndarray
    condition: np.ndarray

    def at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """(interpolated state, target velocity) at progression ``t``."""
        return interpolate_pose(self.g_rigid, self.g_soft, t), target_velocity(self.g_rigid, self.g_soft)


def stack_samples(samples) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    samples = list(samples)
    if not samples:
        raise ValueError("empty dataset")
    g0 = np.vstack([s.g_rigid for s in samples])
    g1 = np.vstack([s.g_soft for s in samples])
    c = np.vstack([s.condition for s in samples])
    return g0, g1, c


def sample_tc(rng: np.random.Generator, size=None):
    """Progression time(s) drawn uniformly from [0, 1)."""
    return rng.random(size)


def flow_batch(g0, g1, tc):
    """Interpolated states and target velocities for a batch of pairs."""
    tc = np.asarray(tc, dtype=np.float64)[:, None]
    return (1.0 - tc) * g0 + tc * g1, g1 - g0


def cfm_batch_loss(net, g_t, tc, c, u, train: bool = True, backward: bool = True) -> float:
    """Mean squared velocity error over the batch and the 7 components.

    With ``backward`` the network's parameter gradients are reset and filled.
    """
    if len(g_t) == 0:
        raise ValueError("empty batch")
    tape = GradTape() if backward else None
    pred = net.forward(g_t, tc, c, train=train, tape=tape)
    loss, grad = mse(pred, u)
    if backward:
        net.zero_grad()
        tape.backward(grad)
    return loss


def split_indices(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint train/validation index sets, a pure function of (n, fraction, seed)."""
    perm = np.random.default_rng([seed, 0x5EED]).permutation(n)
    n_train = min(n, max(1, int(round(fraction * n))))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


@dataclass
class FitResult:
    net: VelocityNet
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    train_idx: np.ndarray | None = None
    val_idx: np.ndarray | None = None


def _batches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        # a lone trailing sample cannot be batch-normalized; fold it into the previous batch
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return chunks


def fit(samples, cfg: TrainConfig | None = None, net: VelocityNet | None = None, fit_stats: bool = True,
        scale_output: bool = True) -> FitResult:
    """Train a velocity net on paired samples; validation losses are recorded but never used for updates.

    ``fit_stats=False`` leaves the input standardization and output scaling
    as they are (identity for a fresh net); ``scale_output=False`` fits only
    the input side. A target component that never varies gets output scale 0
    and is predicted exactly, so single-pair overfit checks should pass
    ``scale_output=False`` to make the optimizer do the work.
    """
    cfg = cfg or TrainConfig()
    g0, g1, c = stack_samples(samples)
    rng = np.random.default_rng(cfg.seed)
    if net is None:
        net = VelocityNet(output_activation=cfg.output_activation, bn_momentum=cfg.bn_momentum,
                          bn_eps=cfg.bn_eps, rng=rng)
    train_idx, val_idx = split_indices(len(g0), cfg.split, cfg.seed)
    if fit_stats:
        net.fit_data_stats(g0[train_idx], g1[train_idx], c[train_idx], scale_output)
    pool = np.repeat(train_idx, cfg.draws_per_pair)
    if len(pool) < 2:
        raise ValueError("training needs at least two (pair, t) draws per epoch; raise draws_per_pair")
    opt = Adam(net.params(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)

    val_tc = sample_tc(rng, len(val_idx))
    val_gt, val_u = flow_batch(g0[val_idx], g1[val_idx], val_tc)

    result = FitResult(net, train_idx=train_idx, val_idx=val_idx)
    for epoch in range(cfg.epochs):
        order = pool[rng.permutation(len(pool))]
        tc = sample_tc(rng, len(order))
        total = 0.0
        for chunk in _batches(np.arange(len(order)), cfg.batch_size):
            idx = order[chunk]
            start = g0[idx]
            if cfg.start_jitter > 0:
                start = start.copy()
                start[:, 4:] += cfg.start_jitter * rng.standard_normal((len(idx), 3))
            g_t, u = flow_batch(start, g1[idx], tc[chunk])
            cb = c[idx]
            if cfg.condition_noise > 0:
                cb = cb + cfg.condition_noise * net.condition_spread * rng.standard_normal(cb.shape)
            try:
                loss = cfm_batch_loss(net, g_t, tc[chunk], cb, u)
                opt.step()
            except NumericalError as exc:
                raise TrainingError(epoch, str(exc)) from exc
            if not np.isfinite(loss):
                raise TrainingError(epoch, "non-finite training loss")
            total += loss * len(idx)
        result.train_loss.append(total / len(order))
        if len(val_idx):
            result.val_loss.append(cfm_batch_loss(net, val_gt, val_tc, c[val_idx], val_u,
                                                  train=False, backward=False))
        if epoch % 500 == 0 or epoch == cfg.epochs - 1:
            log.info("epoch %d train %.3e val %s", epoch, result.train_loss[-1],
                     f"{result.val_loss[-1]:.3e}" if result.val_loss else "-")
    return result
