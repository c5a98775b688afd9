"""Dataset generation, two-stage training, and evaluation wired together from a RunConfig.

Each stage draws from its own generator seeded by ``(seed, stage)`` so a
stage's output does not depend on how many draws an earlier stage made.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .config import RunConfig
from .encoder import DepthAutoencoder, train_autoencoder
from .evaluation import ModelBundle, SuccessTable, evaluate, make_eval_scenes
from .ode import integrate_flow
from .pose import hemisphere_align
from .scene import TRAIN_TEMPLATES, UNSEEN_TEMPLATES, PairedGrasp, generate_dataset, synth_rigid_grasp, render_depth
from .velocity import FitResult, FlowSample, fit

log = logging.getLogger(__name__)

STAGE_DATA, STAGE_AE, STAGE_EVAL, STAGE_FLOW = 1, 2, 3, 4

DATA_DIR = "data"
ENCODER_FILE = "encoder.cfmg"
VELOCITY_FILE = "velocity.cfmg"
TRAIN_REPORT = "train_report"
EVAL_REPORT = "eval_report"
FLOW_FILE = "flows.txt"


def stage_rng(seed: int, stage: int) -> np.random.Generator:
    return np.random.default_rng([seed, stage])


def make_dataset(cfg: RunConfig) -> list[PairedGrasp]:
    pairs, _ = generate_dataset(TRAIN_TEMPLATES, cfg.pairs_per_object, stage_rng(cfg.seed, STAGE_DATA))
    return pairs


def flow_samples(pairs, conditions) -> list[FlowSample]:
    """Training pairs for the velocity net; each target quaternion is put on the rigid pose's hemisphere."""
    out = []
    for p, c in zip(pairs, conditions):
        g0 = p.g_rigid.to_vec7()
        out.append(FlowSample(g0, hemisphere_align(g0, p.g_soft.to_vec7()), np.asarray(c)))
    return out


@dataclass
class Trained:
    encoder: DepthAutoencoder
    ae_loss: list[float]
    flow: FitResult
    samples: list[FlowSample]

    def bundle(self, cfg: RunConfig) -> ModelBundle:
        return ModelBundle(self.encoder, self.flow.net, cfg.integrator_config())


def train(pairs, cfg: RunConfig) -> Trained:
    """Stage 1 fits the depth autoencoder on the dataset images and freezes it; stage 2 fits the flow."""
    images = np.stack([p.image for p in pairs])
    encoder = DepthAutoencoder(seed=int(stage_rng(cfg.seed, STAGE_AE).integers(2**63)))
    ae_loss = train_autoencoder(encoder, images, cfg.ae_epochs, seed=cfg.seed, lr=cfg.ae_lr,
                                batch_size=cfg.ae_batch_size)
    log.info("autoencoder: %d epochs, final loss %.3e", cfg.ae_epochs, ae_loss[-1])
    samples = flow_samples(pairs, encoder.encode(images))
    flow = fit(samples, cfg.train_config())
    return Trained(encoder, ae_loss, flow, samples)


def eval_scenes(cfg: RunConfig, rng: np.random.Generator):
    return (make_eval_scenes(TRAIN_TEMPLATES, cfg.eval_trials, "seen", rng)
            + make_eval_scenes(UNSEEN_TEMPLATES, cfg.eval_trials, "unseen", rng))


def run_eval(bundle: ModelBundle, cfg: RunConfig) -> SuccessTable:
    rng = stage_rng(cfg.seed, STAGE_EVAL)
    scenes = eval_scenes(cfg, rng)
    return evaluate(bundle, scenes, rng=rng)


def flow_trajectories(bundle: ModelBundle, cfg: RunConfig, n: int):
    """Integrate the flow from mid-rank rigid grasps on the first ``n`` seen evaluation scenes."""
    rng = stage_rng(cfg.seed, STAGE_FLOW)
    scenes = make_eval_scenes(TRAIN_TEMPLATES, n, "seen", rng)
    out = []
    for scene, _, _ in scenes:
        g0 = synth_rigid_grasp(scene, int(rng.integers(8, 14)), rng)
        c = bundle.condition(render_depth(scene).astype(np.float32))
        _, traj = integrate_flow(bundle.velocity, g0.to_vec7(), c, bundle.integrator)
        out.append(traj)
    return out


# file-level stages used by the command line ---------------------------------

def write_gen_data(cfg: RunConfig) -> Path:
    pairs = make_dataset(cfg)
    return io.write_dataset(Path(cfg.out) / DATA_DIR, pairs, cfg.to_dict())


def write_train(cfg: RunConfig) -> Trained:
    out = Path(cfg.out)
    pairs = io.read_dataset(out / DATA_DIR).pairs
    trained = train(pairs, cfg)
    meta = {"config": cfg.to_dict(), "seed": cfg.seed}
    io.save_checkpoint(out / ENCODER_FILE, trained.encoder,
                       {**meta, "epochs": cfg.ae_epochs, "final_loss": trained.ae_loss[-1]})
    flow = trained.flow
    io.save_checkpoint(out / VELOCITY_FILE, flow.net,
                       {**meta, "epochs": cfg.epochs, "final_train_loss": flow.train_loss[-1],
                        "final_val_loss": flow.val_loss[-1] if flow.val_loss else None,
                        "optimizer": {"name": "adam", "lr": cfg.lr, "beta1": cfg.beta1, "beta2": cfg.beta2,
                                      "eps": cfg.adam_eps, "batch_size": cfg.batch_size}})
    records = [{"stage": "autoencoder", "epoch": i, "train_loss": v} for i, v in enumerate(trained.ae_loss)]
    for i, v in enumerate(flow.train_loss):
        rec = {"stage": "velocity", "epoch": i, "train_loss": v}
        if flow.val_loss:
            rec["val_loss"] = flow.val_loss[i]
        records.append(rec)
    text = [f"autoencoder epochs {cfg.ae_epochs} final loss {trained.ae_loss[-1]:.6e}",
            f"velocity epochs {cfg.epochs} train pairs {len(flow.train_idx)} validation pairs {len(flow.val_idx)}",
            f"{'epoch':>6} {'train':>13} {'validation':>13}"]
    for i, v in enumerate(flow.train_loss):
        val = f"{flow.val_loss[i]:13.6e}" if flow.val_loss else f"{'-':>13}"
        text.append(f"{i:>6} {v:13.6e} {val}")
    io.write_report(out / TRAIN_REPORT, "\n".join(text) + "\n", records, cfg.to_dict())
    return trained


def load_bundle(cfg: RunConfig) -> ModelBundle:
    out = Path(cfg.out)
    encoder, _ = io.load_checkpoint(out / ENCODER_FILE)
    velocity, _ = io.load_checkpoint(out / VELOCITY_FILE)
    if not isinstance(encoder, DepthAutoencoder) or isinstance(velocity, DepthAutoencoder):
        raise io.FormatError("checkpoint kinds do not match their file roles")
    return ModelBundle(encoder, velocity, cfg.integrator_config())


def write_eval(cfg: RunConfig) -> SuccessTable:
    table = run_eval(load_bundle(cfg), cfg)
    io.write_report(Path(cfg.out) / EVAL_REPORT, table.format(), table.rows(), cfg.to_dict())
    return table
