"""Geometric grasp-success oracle, seen/unseen success tables, and trajectory export."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import NumericalError
from .ode import IntegrationError, IntegratorConfig, integrate_flow
from .pose import GraspPose, tilt_angle
from .scene import SHAPES, SceneSpec, render_depth, synth_rigid_grasp

METHODS = ("baseline", "cfm")
SPLITS = ("seen", "unseen")
MID_RANKS = (8, 13)

TILTED = "excessively tilted"
OFF_CENTER = "off-center"
SHALLOW = "too shallow"
DEEP = "too deep"


@dataclass(frozen=True)
class SuccessCriteria:
    max_tilt: float = np.deg2rad(10.0)
    # lateral offset allowed, as a fraction of the object half-extent per axis
    max_offset: float = 0.25
    min_depth: float = 0.01
    # cylinders and boxes: deepest allowed grasp, as a multiple of the object height
    max_depth_frac: float = 1.0
    sphere_band: float = 0.01
    # flats: depth must lie in [flat_min_frac * thickness, thickness + flat_max_extra]
    flat_min_frac: float = 1.0
    flat_max_extra: float = 0.02

    def __post_init__(self):
        values = (self.max_tilt, self.max_offset, self.min_depth, self.max_depth_frac,
                  self.sphere_band, self.flat_min_frac, self.flat_max_extra)
        if min(values) <= 0:
            raise ValueError("success thresholds must be strictly positive")

    def loosened(self, factor: float = 2.0) -> "SuccessCriteria":
        return replace(self, max_tilt=self.max_tilt * factor, max_offset=self.max_offset * factor,
                       min_depth=self.min_depth / factor, max_depth_frac=self.max_depth_frac * factor,
                       sphere_band=self.sphere_band * factor, flat_min_frac=self.flat_min_frac / factor,
                       flat_max_extra=self.flat_max_extra * factor)


def lateral_offset(scene: SceneSpec, pose: GraspPose) -> float:
    """Offset from the object center as a fraction of its half-extent (worst axis)."""
    u, v = scene.to_object_frame(pose.position[0], pose.position[1])
    hx, hy = scene.half_extents
    if scene.shape in ("cylinder", "sphere"):
        return float(np.hypot(u, v) / hx)
    return float(max(abs(u) / hx, abs(v) / hy))


def success_oracle(scene: SceneSpec, pose: GraspPose,
                   criteria: SuccessCriteria = SuccessCriteria()) -> tuple[bool, str | None]:
    """Pass/fail plus the first violated criterion, checked as tilt, offset, depth."""
    if tilt_angle(pose.orientation) > criteria.max_tilt:
        return False, TILTED
    if lateral_offset(scene, pose) > criteria.max_offset:
        return False, OFF_CENTER
    depth = scene.top_z - pose.position[2]
    if scene.shape == "sphere":
        equator_depth = scene.dims[0]
        if depth < equator_depth - criteria.sphere_band:
            return False, SHALLOW
        if depth > equator_depth + criteria.sphere_band:
            return False, DEEP
    elif scene.shape == "flat":
        thickness = scene.dims[2]
        if depth < criteria.flat_min_frac * thickness:
            return False, SHALLOW
        if depth > thickness + criteria.flat_max_extra:
            return False, DEEP
    else:
        if depth < criteria.min_depth:
            return False, SHALLOW
        if depth > criteria.max_depth_frac * scene.height:
            return False, DEEP
    return True, None


@dataclass
class Trial:
    scene: SceneSpec
    split: str
    template: str
    rank: int
    method: str
    success: bool
    reason: str | None
    pose: GraspPose | None = None


@dataclass
class SuccessTable:
    """Trial and success counts per (method, split, shape)."""

    counts: dict = field(default_factory=lambda: {
        (m, s, sh): [0, 0] for m in METHODS for s in SPLITS for sh in SHAPES})
    trials: list[Trial] = field(default_factory=list)

    def add(self, trial: Trial):
        cell = self.counts[(trial.method, trial.split, trial.scene.shape)]
        cell[0] += 1
        cell[1] += int(trial.success)
        self.trials.append(trial)

    def rate(self, method: str, split: str | None = None, shape: str | None = None) -> float:
        n = s = 0
        for (m, sp, sh), (t, k) in self.counts.items():
            if m == method and split in (None, sp) and shape in (None, sh):
                n += t
                s += k
        return s / n if n else float("nan")

    def n_trials(self, method: str, split: str | None = None) -> int:
        return sum(t for (m, sp, _), (t, _) in self.counts.items() if m == method and split in (None, sp))

    def rows(self) -> list[dict]:
        out = []
        for (m, sp, sh), (t, k) in self.counts.items():
            out.append({"method": m, "split": sp, "shape": sh, "trials": t, "successes": k,
                        "rate": k / t if t else None})
        return out

    def format(self) -> str:
        lines = [f"{'method':<9} {'split':<7} {'shape':<9} {'trials':>6} {'success':>7} {'rate':>7}"]
        for r in self.rows():
            rate = f"{r['rate']:.3f}" if r["rate"] is not None else "-"
            lines.append(f"{r['method']:<9} {r['split']:<7} {r['shape']:<9} {r['trials']:>6} "
                         f"{r['successes']:>7} {rate:>7}")
        lines.append("")
        for m in METHODS:
            parts = [f"{sp} {self.rate(m, sp):.3f}" for sp in SPLITS]
            lines.append(f"{m:<9} overall {self.rate(m):.3f} ({', '.join(parts)})")
        return "\n".join(lines) + "\n"


@dataclass
class ModelBundle:
    encoder: object
    velocity: object
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)

    def condition(self, depth_image) -> np.ndarray:
        return self.encoder.encode(depth_image)

    def correct(self, g_rigid: GraspPose, condition) -> GraspPose:
        g, _ = integrate_flow(self.velocity, g_rigid.to_vec7(), condition, self.integrator)
        return GraspPose(g.orientation, g.position, g_rigid.width)


def make_eval_scenes(templates, n_trials: int, split: str, rng: np.random.Generator) -> list[tuple[SceneSpec, str, str]]:
    """``n_trials`` jittered scenes cycling through ``templates``, tagged with split and template name."""
    templates = list(templates)
    out = []
    for i in range(n_trials):
        t = templates[i % len(templates)]
        out.append((t.sample(rng), split, t.name))
    return out


def evaluate(bundle: ModelBundle, scenes, criteria: SuccessCriteria = SuccessCriteria(),
             rng: np.random.Generator | None = None, conditions=None, ranks=MID_RANKS) -> SuccessTable:
    """Score a mid-rank rigid grasp raw and after the learned correction on every scene.

    ``conditions`` overrides the encoder output per scene (used to probe how
    much the flow relies on its condition).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    table = SuccessTable()
    for k, (scene, split, template) in enumerate(scenes):
        rank = int(rng.integers(ranks[0], ranks[1] + 1))
        g_rigid = synth_rigid_grasp(scene, rank, rng)
        ok, reason = success_oracle(scene, g_rigid, criteria)
        table.add(Trial(scene, split, template, rank, "baseline", ok, reason, g_rigid))
        c = bundle.condition(render_depth(scene).astype(np.float32)) if conditions is None else conditions[k]
        try:
            g_cfm = bundle.correct(g_rigid, c)
            ok, reason = success_oracle(scene, g_cfm, criteria)
        except (IntegrationError, NumericalError) as exc:
            g_cfm, ok, reason = None, False, f"integrator failure: {exc}"
        table.add(Trial(scene, split, template, rank, "cfm", ok, reason, g_cfm))
    return table


TRAJECTORY_VERSION = 1
TRAJECTORY_COLUMNS = ("t", "qw", "qx", "qy", "qz", "px", "py", "pz")


class TrajectoryFormatError(ValueError):
    pass


def export_flow_trajectories(trajectories, path) -> Path:
    """Write accepted steps as whitespace-separated rows, one blank line between trajectories."""
    trajectories = list(trajectories)
    if not trajectories:
        raise ValueError("no trajectories to export")
    path = Path(path)
    lines = [f"# graspflow-trajectories version {TRAJECTORY_VERSION}", " ".join(TRAJECTORY_COLUMNS)]
    for i, traj in enumerate(trajectories):
        if i:
            lines.append("")
        for row in traj.as_array():
            lines.append(" ".join(repr(float(v)) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_flow_trajectories(path) -> list[np.ndarray]:
    """Parse an exported file back into one (n, 8) array per trajectory."""
    text = Path(path).read_text().split("\n")
    if not text or not text[0].startswith("# graspflow-trajectories version "):
        raise TrajectoryFormatError("missing trajectory format header")
    version = int(text[0].rsplit(" ", 1)[1])
    if version != TRAJECTORY_VERSION:
        raise TrajectoryFormatError(f"unsupported trajectory format version {version}")
    if tuple(text[1].split()) != TRAJECTORY_COLUMNS:
        raise TrajectoryFormatError(f"unexpected column header {text[1]!r}")
    out, block = [], []
    for line in text[2:]:
        if line.strip():
            block.append([float(v) for v in line.split()])
        elif block:
            out.append(np.array(block))
            block = []
    if block:
        out.append(np.array(block))
    return out
