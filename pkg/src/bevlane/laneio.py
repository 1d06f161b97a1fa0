"""JSON interchange for scenes, lanes, and anchor tensors.

One file carries a camera block, lanes in any mix of the three
representations, and optionally an anchor tensor.  Serialization is
deterministic byte for byte: floats are rounded to 9 significant digits
(idempotent under re-reading), keys are sorted, lanes are emitted in the
canonical kind order 3d, bev, image.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .anchors import AnchorGridSpec, AnchorTensor
from .errors import InvalidInputError
from .geometry import CameraPose, Intrinsics, Lane3D, LaneBEV
from .scenes import SceneSample

FORMAT_VERSION = 1


@dataclass
class LaneFile:
    """In-memory form of one lane file."""

    intrinsics: Intrinsics | None = None
    pose: CameraPose | None = None
    true_pitch_deg: float | None = None
    lanes3d: list[Lane3D] = field(default_factory=list)
    lanes_bev: list[LaneBEV] = field(default_factory=list)
    lanes_image: list[np.ndarray] = field(default_factory=list)
    anchors: AnchorTensor | None = None
    meta: dict = field(default_factory=dict)


def lane_file_from_sample(sample: SceneSample) -> LaneFile:
    """Package a generated scene; the pose block records the true pitch."""
    r = sample.resolved
    meta = {
        "profile": r.profile,
        "seed": sample.spec.seed,
        "grade": list(r.grade),
        "lateral_shift": r.lateral_shift,
    }
    if r.bend_radius is not None:
        meta["bend_radius_m"] = r.bend_radius
        meta["bend_direction"] = r.bend_direction
    if r.gap_m is not None:
        meta["gap_m"] = r.gap_m
        meta["branch_of"] = r.branch_of
    return LaneFile(
        intrinsics=sample.intrinsics,
        pose=sample.pose,
        true_pitch_deg=math.degrees(sample.pose.pitch_rad),
        lanes3d=list(sample.lanes3d),
        lanes_bev=list(sample.lanes_bev),
        lanes_image=[np.asarray(uv, dtype=float) for uv in sample.lanes_2d],
        meta=meta,
    )


def _round_sig(x: float) -> float:
    if not math.isfinite(x):
        raise InvalidInputError("refusing to serialize a non-finite number")
    return float(f"{x:.9g}")


def _canonical(obj):
    """Recursively convert to JSON-able values with 9-significant-digit floats."""
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _canonical(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _round_sig(float(obj))
    if obj is None or isinstance(obj, str):
        return obj
    raise InvalidInputError(f"cannot serialize value of type {type(obj).__name__}")


def _intrinsics_doc(intr: Intrinsics) -> dict:
    return {
        "fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
        "image_w": intr.image_w, "image_h": intr.image_h,
    }


def _grid_doc(grid: AnchorGridSpec) -> dict:
    return {
        "x_centers": list(grid.x_centers),
        "y_steps": list(grid.y_steps),
        "y_ref": grid.y_ref,
        "x_range": list(grid.x_range),
        "y_range": list(grid.y_range),
    }


def _lane_docs(lf: LaneFile) -> list[dict]:
    docs = []
    for lane in lf.lanes3d:
        docs.append({"kind": "3d", "points": lane.points})
    for lane in lf.lanes_bev:
        doc = {"kind": "bev", "points": lane.points, "visibility": lane.visibility}
        if lane.z is not None:
            doc["z"] = lane.z
        docs.append(doc)
    for uv in lf.lanes_image:
        docs.append({"kind": "image", "points": np.asarray(uv, dtype=float)})
    return docs


def dumps_lane_file(lf: LaneFile) -> str:
    doc: dict = {"version": FORMAT_VERSION, "lanes": _lane_docs(lf)}
    camera: dict = {}
    if lf.intrinsics is not None:
        camera["intrinsics"] = _intrinsics_doc(lf.intrinsics)
    if lf.pose is not None:
        camera["pose"] = {
            "pitch_deg": math.degrees(lf.pose.pitch_rad),
            "height_m": lf.pose.height_m,
        }
    if lf.true_pitch_deg is not None:
        camera["true_pitch_deg"] = lf.true_pitch_deg
    if camera:
        doc["camera"] = camera
    if lf.anchors is not None:
        doc["anchors"] = {
            "grid": _grid_doc(lf.anchors.grid),
            "prob": lf.anchors.prob,
            "x_offsets": lf.anchors.x_offsets,
            "z": lf.anchors.z,
            "vis": lf.anchors.vis,
        }
    if lf.meta:
        doc["meta"] = lf.meta
    return json.dumps(_canonical(doc), indent=2, sort_keys=True) + "\n"


def write_lane_file(path, lf: LaneFile) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_lane_file(lf))


def _parse_camera(doc: dict, lf: LaneFile) -> None:
    camera = doc.get("camera")
    if camera is None:
        return
    if "intrinsics" in camera:
        d = camera["intrinsics"]
        lf.intrinsics = Intrinsics(
            fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"],
            image_w=d.get("image_w", 480), image_h=d.get("image_h", 360),
        )
    if "pose" in camera:
        d = camera["pose"]
        lf.pose = CameraPose(pitch_rad=math.radians(d["pitch_deg"]), height_m=d["height_m"])
    if "true_pitch_deg" in camera:
        lf.true_pitch_deg = float(camera["true_pitch_deg"])


def _parse_lane(entry: dict, lf: LaneFile) -> None:
    kind = entry.get("kind")
    pts = np.asarray(entry.get("points", []), dtype=float)
    if kind == "3d":
        lf.lanes3d.append(Lane3D(pts))
    elif kind == "bev":
        vis = np.asarray(entry.get("visibility", np.ones(len(pts), dtype=bool)), dtype=bool)
        z = entry.get("z")
        lf.lanes_bev.append(
            LaneBEV(pts, visibility=vis, z=None if z is None else np.asarray(z, dtype=float))
        )
    elif kind == "image":
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise InvalidInputError("image lane points must be an (N, 2) array")
        lf.lanes_image.append(pts)
    else:
        raise InvalidInputError(f"unknown lane kind {kind!r}")


def _parse_anchors(doc: dict, lf: LaneFile) -> None:
    block = doc.get("anchors")
    if block is None:
        return
    g = block["grid"]
    grid = AnchorGridSpec(
        x_centers=tuple(float(v) for v in g["x_centers"]),
        y_steps=tuple(float(v) for v in g["y_steps"]),
        y_ref=float(g["y_ref"]),
        x_range=tuple(g["x_range"]),
        y_range=tuple(g["y_range"]),
    )
    lf.anchors = AnchorTensor(
        grid=grid,
        prob=np.asarray(block["prob"], dtype=float),
        x_offsets=np.asarray(block["x_offsets"], dtype=float),
        z=np.asarray(block["z"], dtype=float),
        vis=np.asarray(block["vis"], dtype=float),
    )


def loads_lane_file(text: str) -> LaneFile:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise InvalidInputError("top level must be a JSON object")
    version = doc.get("version")
    if version != FORMAT_VERSION:
        raise InvalidInputError(f"unsupported file version {version!r}")
    lf = LaneFile()
    _parse_camera(doc, lf)
    for entry in doc.get("lanes", []):
        _parse_lane(entry, lf)
    _parse_anchors(doc, lf)
    lf.meta = doc.get("meta", {})
    return lf


def read_lane_file(path) -> LaneFile:
    with open(path, "r", encoding="utf-8") as fh:
        return loads_lane_file(fh.read())
