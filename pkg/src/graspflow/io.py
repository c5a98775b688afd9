"""On-disk formats: depth images, paired-grasp datasets, checkpoints, reports.

Every format carries a version and readers reject versions they do not know.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoder import DepthAutoencoder
from .pose import GraspPose
from .scene import PairedGrasp, SceneSpec
from .velocity import VelocityNet


class FormatError(ValueError):
    """A file is missing, malformed, or written by an unknown format version."""


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# depth images ---------------------------------------------------------------

DIMG_MAGIC = b"DIMG"
DIMG_VERSION = 1
_DIMG_HEADER = struct.Struct("<4sIII")


def write_depth_image(path, img) -> None:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("depth image must be 2-D")
    height, width = img.shape
    data = np.ascontiguousarray(img, dtype="<f4")
    Path(path).write_bytes(_DIMG_HEADER.pack(DIMG_MAGIC, DIMG_VERSION, width, height) + data.tobytes())


def read_depth_image(path) -> np.ndarray:
    """Image as float32 (height, width), exactly as stored."""
    raw = Path(path).read_bytes()
    if len(raw) < _DIMG_HEADER.size:
        raise FormatError(f"{path}: truncated depth image")
    magic, version, width, height = _DIMG_HEADER.unpack_from(raw)
    if magic != DIMG_MAGIC:
        raise FormatError(f"{path}: not a depth image (magic {magic!r})")
    if version != DIMG_VERSION:
        raise FormatError(f"{path}: unsupported depth image version {version}")
    n = width * height
    if len(raw) != _DIMG_HEADER.size + 4 * n:
        raise FormatError(f"{path}: expected {n} pixels")
    return np.frombuffer(raw, dtype="<f4", offset=_DIMG_HEADER.size).reshape(height, width).copy()


# paired-grasp datasets ------------------------------------------------------

DATASET_FORMAT = "graspflow-pairs"
DATASET_VERSION = 1


def write_dataset(directory, pairs: list[PairedGrasp], config: dict) -> Path:
    """``pairs.jsonl`` (header line, then one record per pair) plus ``images/*.dimg``."""
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    lines = [_dumps({"format": DATASET_FORMAT, "version": DATASET_VERSION, "count": len(pairs), "config": config})]
    for i, p in enumerate(pairs):
        image_ref = f"images/{i:05d}.dimg"
        write_depth_image(directory / image_ref, p.image)
        lines.append(_dumps({
            "index": i,
            "template": p.template,
            "scene": p.scene.to_dict(),
            "rank": p.rank,
            "depth_offset": p.depth_offset,
            "g_rigid": p.g_rigid.to_vec7().tolist(),
            "g_soft": p.g_soft.to_vec7().tolist(),
            "width": p.g_rigid.width,
            "image": image_ref,
        }))
    path = directory / "pairs.jsonl"
    path.write_text("\n".join(lines) + "\n")
    return path


@dataclass
class Dataset:
    pairs: list[PairedGrasp]
    header: dict


def _pose(vec, width) -> GraspPose:
    # the constructor only renormalizes off-unit quaternions, so stored values come back bit for bit
    vec = np.array(vec, dtype=np.float64)
    if vec.shape != (7,):
        raise FormatError(f"expected a 7-vector pose, got {len(vec)} values")
    return GraspPose(vec[:4], vec[4:], width)


def read_dataset(directory) -> Dataset:
    directory = Path(directory)
    path = directory / "pairs.jsonl"
    if not path.exists():
        raise FormatError(f"no dataset at {path}")
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    header = json.loads(lines[0])
    if header.get("format") != DATASET_FORMAT:
        raise FormatError(f"{path}: not a paired-grasp dataset")
    if header.get("version") != DATASET_VERSION:
        raise FormatError(f"{path}: unsupported dataset version {header.get('version')}")
    pairs = []
    for line in lines[1:]:
        rec = json.loads(line)
        width = rec.get("width", 0.08)
        pairs.append(PairedGrasp(
            scene=SceneSpec.from_dict(rec["scene"]),
            g_rigid=_pose(rec["g_rigid"], width),
            g_soft=_pose(rec["g_soft"], width),
            rank=rec["rank"],
            depth_offset=rec["depth_offset"],
            template=rec["template"],
            image=read_depth_image(directory / rec["image"]),
        ))
    if len(pairs) != header.get("count", len(pairs)):
        raise FormatError(f"{path}: header announces {header['count']} records, found {len(pairs)}")
    return Dataset(pairs, header)


# checkpoints ----------------------------------------------------------------

CKPT_MAGIC = b"CFMG"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sII")


def save_checkpoint(path, model, metadata: dict | None = None) -> None:
    """Magic, version, JSON header (architecture + metadata), then the float64 parameter blob.

    The blob lists every array in forward layer order; within an affine +
    batch-norm block that is weights (row-major), bias, gamma, beta, running
    mean, running variance.
    """
    flat = model.get_flat()
    header = _dumps({"architecture": model.architecture(), "optimizer_state": False,
                     "n_values": int(flat.size), "metadata": metadata or {}}).encode()
    blob = np.ascontiguousarray(flat, dtype="<f8").tobytes()
    Path(path).write_bytes(_CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, len(header)) + header + blob)


def load_checkpoint(path):
    """Return ``(model, header)``; the model class is chosen from the stored architecture."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"no checkpoint at {path}")
    raw = path.read_bytes()
    if len(raw) < _CKPT_HEADER.size:
        raise FormatError(f"{path}: truncated checkpoint")
    magic, version, n_header = _CKPT_HEADER.unpack_from(raw)
    if magic != CKPT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {magic!r}")
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[_CKPT_HEADER.size:_CKPT_HEADER.size + n_header])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint header") from exc
    arch = header["architecture"]
    model = model_from_architecture(arch)
    blob = raw[_CKPT_HEADER.size + n_header:]
    flat = np.frombuffer(blob, dtype="<f8")
    if flat.size != header["n_values"] or flat.size != model.get_flat().size:
        raise FormatError(f"{path}: parameter blob does not match the declared architecture")
    model.set_flat(flat.astype(np.float64))
    return model, header


def model_from_architecture(arch: dict):
    kind = arch.get("kind")
    if kind == "velocity_net":
        return VelocityNet(output_activation=arch["output_activation"], hidden=tuple(arch["hidden"]),
                           bn_momentum=arch["bn_momentum"], bn_eps=arch["bn_eps"])
    if kind == "depth_autoencoder":
        return DepthAutoencoder(image_size=arch["image_size"], hidden=tuple(arch["hidden"]))
    raise FormatError(f"unknown model kind {kind!r}")


# reports --------------------------------------------------------------------

REPORT_VERSION = 1


def write_report(stem, text: str, records: list[dict], config: dict) -> tuple[Path, Path]:
    """Plain-text report plus a line-delimited JSON twin; both embed the producing config."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    txt = stem.with_suffix(".txt")
    jsonl = stem.with_suffix(".jsonl")
    cfg_line = " ".join(f"{k}={v}" for k, v in sorted(config.items()))
    txt.write_text(f"# report version {REPORT_VERSION}\n# config: {cfg_line}\n{text}")
    lines = [_dumps({"format": "graspflow-report", "version": REPORT_VERSION, "config": config})]
    lines += [_dumps(r) for r in records]
    jsonl.write_text("\n".join(lines) + "\n")
    return txt, jsonl


def read_report_records(path) -> tuple[dict, list[dict]]:
    lines = [json.loads(ln) for ln in Path(path).read_text().splitlines() if ln.strip()]
    header = lines[0]
    if header.get("format") != "graspflow-report" or header.get("version") != REPORT_VERSION:
        raise FormatError(f"{path}: unsupported report format")
    return header, lines[1:]
