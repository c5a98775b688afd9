"""Synthetic grasp scenes: primitive objects on a table, top-down orthographic
depth rendering, a ranked rigid-grasp proxy generator, and the deterministic
soft-gripper correction that labels each rigid grasp.

Units are meters and radians. The workspace is a 0.30 m square centered on
the table origin; the virtual camera plane sits 0.5 m above the table.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .pose import GraspPose, grasp_yaw, hemisphere_align, quat_from_axis_angle, quat_mul, top_down_quat

SHAPES = ("cylinder", "sphere", "box", "flat")
WORKSPACE = 0.30
CAMERA_HEIGHT = 0.5
Z_MAX = 1.0
IMAGE_SIZE = 32

DEPTH_STEP = 0.01
MIN_GRASP_DEPTH = 0.01
MAX_GRASP_DEPTH = 0.07
MAX_FLAT_THICKNESS = 0.02
N_RANKS = 20

# rigid proxy noise at rank 1 and rank 20
TILT_RANK1 = np.deg2rad(5.0)
TILT_RANK20 = np.deg2rad(30.0)
OFFSET_RANK1 = 0.005
OFFSET_FRAC_RANK20 = 0.4
RIGID_MAX_DEPTH = 0.01
RIGID_YAW_NOISE = np.deg2rad(15.0)

_DIM_NAMES = {
    "cylinder": ("radius", "height"),
    "sphere": ("radius",),
    "box": ("size_x", "size_y", "height"),
    "flat": ("size_x", "size_y", "thickness"),
}


@dataclass(frozen=True)
class SceneSpec:
    """One primitive object resting on the table.

    ``base_z`` lowers the object into a depression (negative values); the
    table itself stays at z = 0.
    """

    shape: str
    dims: tuple[float, ...]
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    base_z: float = 0.0
    name: str = ""

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        dims = tuple(float(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) != len(_DIM_NAMES[self.shape]):
            raise ValueError(f"{self.shape} needs dims {_DIM_NAMES[self.shape]}, got {dims}")
        if min(dims) <= 0:
            raise ValueError(f"dimensions must be positive: {dims}")
        if self.shape == "flat" and dims[2] > MAX_FLAT_THICKNESS:
            raise ValueError(f"flat objects are at most {MAX_FLAT_THICKNESS} m thick")
        if self.shape in ("cylinder", "box") and dims[-1] < 1.5 * MIN_GRASP_DEPTH:
            raise ValueError("cylinders and boxes must be at least 1.5 cm tall")
        if self.shape == "sphere" and dims[0] > MAX_GRASP_DEPTH + DEPTH_STEP:
            raise ValueError("sphere radius above 8 cm puts the equator out of gripper reach")
        if self.top_z <= 0:
            raise ValueError("object top must be above the table")
        if np.hypot(self.x, self.y) + self.footprint_radius > WORKSPACE / 2:
            raise ValueError("object does not fit inside the workspace window")

    @property
    def height(self) -> float:
        """Vertical extent of the object itself (ignores ``base_z``)."""
        if self.shape == "sphere":
            return 2 * self.dims[0]
        return self.dims[-1]

    @property
    def top_z(self) -> float:
        return self.base_z + self.height

    @property
    def half_extents(self) -> tuple[float, float]:
        if self.shape in ("cylinder", "sphere"):
            return self.dims[0], self.dims[0]
        return self.dims[0] / 2, self.dims[1] / 2

    @property
    def footprint_radius(self) -> float:
        hx, hy = self.half_extents
        return self.dims[0] if self.shape in ("cylinder", "sphere") else float(np.hypot(hx, hy))

    def to_object_frame(self, px: float, py: float) -> tuple[float, float]:
        dx, dy = px - self.x, py - self.y
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        return c * dx + s * dy, -s * dx + c * dy

    def to_dict(self) -> dict:
        return {"shape": self.shape, "dims": list(self.dims), "x": self.x, "y": self.y,
                "yaw": self.yaw, "base_z": self.base_z, "name": self.name}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(shape=d["shape"], dims=tuple(d["dims"]), x=d.get("x", 0.0), y=d.get("y", 0.0),
                   yaw=d.get("yaw", 0.0), base_z=d.get("base_z", 0.0), name=d.get("name", ""))


def pixel_centers(size: int = IMAGE_SIZE) -> np.ndarray:
    return -WORKSPACE / 2 + (np.arange(size) + 0.5) * (WORKSPACE / size)


def surface_height(scene: SceneSpec | None, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Height of the first surface seen from above at each (x, y); table is 0."""
    z = np.zeros(np.broadcast(xs, ys).shape)
    if scene is None:
        return z
    if scene.shape == "sphere":
        r = scene.dims[0]
        d2 = (xs - scene.x) ** 2 + (ys - scene.y) ** 2
        inside = d2 < r * r
        cap = scene.base_z + r + np.sqrt(np.where(inside, r * r - d2, 0.0))
        z = np.where(inside, np.maximum(cap, 0.0), z)
    elif scene.shape == "cylinder":
        inside = (xs - scene.x) ** 2 + (ys - scene.y) ** 2 <= scene.dims[0] ** 2
        z = np.where(inside, max(scene.top_z, 0.0), z)
    else:
        u, v = scene.to_object_frame(xs, ys)
        hx, hy = scene.half_extents
        inside = (np.abs(u) <= hx) & (np.abs(v) <= hy)
        z = np.where(inside, max(scene.top_z, 0.0), z)
    return z


def render_depth(scene: SceneSpec | None, size: int = IMAGE_SIZE) -> np.ndarray:
    """Orthographic top-down depth image (rows follow +y, columns +x), meters from the camera plane."""
    c = pixel_centers(size)
    xs, ys = np.meshgrid(c, c)
    depth = CAMERA_HEIGHT - surface_height(scene, xs, ys)
    return np.clip(depth, 0.0, Z_MAX)


def quantized_depth(value: float) -> float:
    steps = np.floor(value / DEPTH_STEP + 0.5)
    return float(np.clip(steps * DEPTH_STEP, MIN_GRASP_DEPTH, MAX_GRASP_DEPTH))


def soft_grasp_depth(scene: SceneSpec) -> float:
    """Depth below the object top that the soft gripper is driven to, on a 1 cm grid in [1, 7] cm."""
    if scene.shape == "sphere":
        target = min(scene.dims[0], MAX_GRASP_DEPTH)
    elif scene.shape == "flat":
        target = min(scene.dims[2] + 0.01, MAX_GRASP_DEPTH)
    else:
        target = min(0.7 * scene.height, MAX_GRASP_DEPTH)
    return quantized_depth(target)


def correction_oracle(scene: SceneSpec, g_rigid: GraspPose) -> GraspPose:
    """Soft-gripper version of a rigid grasp: top-down, centered, deeper.

    Keeps the heading of the closing axis, moves the gripper over the object
    center, and sets the depth from :func:`soft_grasp_depth`.
    """
    q = top_down_quat(grasp_yaw(g_rigid.orientation))
    q = hemisphere_align(g_rigid.orientation, q)
    position = np.array([scene.x, scene.y, scene.top_z - soft_grasp_depth(scene)])
    return GraspPose(q, position, g_rigid.width)


def rank_fraction(rank: int) -> float:
    if not 1 <= rank <= N_RANKS:
        raise ValueError(f"rank must lie in [1, {N_RANKS}], got {rank}")
    return (rank - 1) / (N_RANKS - 1)


def rigid_noise_bounds(scene: SceneSpec, rank: int) -> tuple[float, float]:
    """(max tilt, max lateral offset) of the rigid proxy at this rank."""
    f = rank_fraction(rank)
    tilt = TILT_RANK1 + (TILT_RANK20 - TILT_RANK1) * f
    offset = OFFSET_RANK1 + (OFFSET_FRAC_RANK20 * min(scene.half_extents) - OFFSET_RANK1) * f
    return tilt, offset


def synth_rigid_grasp(scene: SceneSpec, rank: int, rng: np.random.Generator) -> GraspPose:
    """Rigid-gripper style grasp: shallow, and more tilted and off-center at worse ranks."""
    max_tilt, max_offset = rigid_noise_bounds(scene, rank)
    tilt = rng.uniform(0.0, max_tilt)
    tilt_dir = rng.uniform(0.0, 2 * np.pi)
    yaw = scene.yaw + rng.uniform(-RIGID_YAW_NOISE, RIGID_YAW_NOISE)
    q = quat_mul(top_down_quat(yaw), quat_from_axis_angle([np.cos(tilt_dir), np.sin(tilt_dir), 0.0], tilt))
    radius = max_offset * np.sqrt(rng.uniform())
    heading = rng.uniform(0.0, 2 * np.pi)
    depth = rng.uniform(0.0, RIGID_MAX_DEPTH)
    position = [scene.x + radius * np.cos(heading), scene.y + radius * np.sin(heading), scene.top_z - depth]
    return GraspPose(q, position)


@dataclass(frozen=True)
class SceneTemplate:
    """A nominal object plus the jitter applied to each instance drawn from it."""

    base: SceneSpec
    dim_jitter: float = 0.03
    position_jitter: float = 0.001
    yaw_jitter: float = np.deg2rad(10.0)

    @property
    def name(self) -> str:
        return self.base.name

    def dim_range(self) -> list[tuple[float, float]]:
        return [(d * (1 - self.dim_jitter), d * (1 + self.dim_jitter)) for d in self.base.dims]

    def sample(self, rng: np.random.Generator) -> SceneSpec:
        b = self.base
        dims = tuple(d * (1 + rng.uniform(-self.dim_jitter, self.dim_jitter)) for d in b.dims)
        return replace(
            b,
            dims=dims,
            x=b.x + rng.uniform(-self.position_jitter, self.position_jitter),
            y=b.y + rng.uniform(-self.position_jitter, self.position_jitter),
            yaw=b.yaw + rng.uniform(-self.yaw_jitter, self.yaw_jitter),
        )


TRAIN_TEMPLATES = (
    SceneTemplate(SceneSpec("cylinder", (0.030, 0.12), name="tall_cylinder")),
    SceneTemplate(SceneSpec("cylinder", (0.025, 0.06), yaw=0.3, name="short_cylinder")),
    SceneTemplate(SceneSpec("sphere", (0.040,), name="large_sphere")),
    SceneTemplate(SceneSpec("sphere", (0.030,), yaw=-0.4, name="small_sphere")),
    SceneTemplate(SceneSpec("box", (0.06, 0.04, 0.10), yaw=0.2, name="tall_box")),
    SceneTemplate(SceneSpec("box", (0.08, 0.05, 0.06), yaw=-0.3, name="short_box")),
    SceneTemplate(SceneSpec("flat", (0.15, 0.08, 0.010), yaw=0.1, name="wide_flat")),
    SceneTemplate(SceneSpec("flat", (0.10, 0.06, 0.018), yaw=-0.2, name="small_flat")),
)

# apart from the sunken sphere, every dimension sits at least 20% outside the
# jitter range of each same-shape training template; the sunken sphere keeps a
# training radius but rests in a depression, like a fruit placed upside down
UNSEEN_TEMPLATES = (
    SceneTemplate(SceneSpec("cylinder", (0.018, 0.09), yaw=0.1, name="thin_cylinder")),
    SceneTemplate(SceneSpec("sphere", (0.022,), name="tiny_sphere")),
    SceneTemplate(SceneSpec("sphere", (0.040,), base_z=-0.015, name="sunken_sphere")),
    SceneTemplate(SceneSpec("box", (0.11, 0.07, 0.13), yaw=0.15, name="big_box")),
    SceneTemplate(SceneSpec("flat", (0.20, 0.12, 0.005), yaw=0.05, name="thin_flat")),
)


@dataclass
class PairedGrasp:
    scene: SceneSpec
    g_rigid: GraspPose
    g_soft: GraspPose
    rank: int
    depth_offset: float
    template: str = ""
    image: np.ndarray | None = field(default=None, repr=False)


def spread_ranks(n: int) -> list[int]:
    """``n`` ranks spread evenly over 1..20 so each object mixes good and poor grasps."""
    if n == 1:
        return [1]
    return [int(r) for r in np.floor(np.linspace(1, N_RANKS, n) + 0.5)]


def make_pair(scene: SceneSpec, rank: int, rng: np.random.Generator, template: str = "") -> PairedGrasp:
    g_rigid = synth_rigid_grasp(scene, rank, rng)
    g_soft = correction_oracle(scene, g_rigid)
    # stored as float32, the on-disk image precision, so reloaded datasets match exactly
    return PairedGrasp(scene, g_rigid, g_soft, rank, soft_grasp_depth(scene), template or scene.name,
                       render_depth(scene).astype(np.float32))


def generate_dataset(templates, pairs_per_object: int, rng: np.random.Generator) -> tuple[list[PairedGrasp], list[np.ndarray]]:
    """Paired grasps on jittered instances of each template, plus the matching depth corpus."""
    if pairs_per_object < 1:
        raise ValueError("pairs_per_object must be at least 1")
    pairs = []
    for template in templates:
        for rank in spread_ranks(pairs_per_object):
            scene = template.sample(rng)
            pairs.append(make_pair(scene, rank, rng, template.name))
    return pairs, [p.image for p in pairs]


def render_corpus(templates, n_images: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Depth images of ``n_images`` jittered scenes cycling through ``templates``."""
    templates = list(templates)
    return [render_depth(templates[i % len(templates)].sample(rng)) for i in range(n_images)]
