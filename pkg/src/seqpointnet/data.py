"""Datasets: depth back-projection, synthetic motions, augmentation, on-disk formats."""

from __future__ import annotations

import logging
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import FRAME_POINTS, normalize_sequence, presample

log = logging.getLogger(__name__)

SEQ_MAGIC = b"PCSQ"
SEQ_VERSION = 1
CLASS_NAMES = ("translate-x", "rotate-y", "oscillate-z", "expand-contract")
PRIMITIVES = ("sphere", "box", "cylinder", "two-blob")


@dataclass(frozen=True)
class SequenceRecord:
    frames: np.ndarray  # (T, n, 3)
    label: int
    source: str = ""
    split: str = "train"


@dataclass
class DepthFrame:
    depth: np.ndarray  # (H, W) uint16 millimetres, 0 = missing
    fx: float
    fy: float
    cx: float
    cy: float


# ---------------------------------------------------------------------------
# depth maps


def depth_to_points(frame: DepthFrame) -> np.ndarray:
    """Pinhole back-projection of every non-zero pixel, in metres."""
    if min(frame.fx, frame.fy) <= 0:
        raise ValueError("depth_to_points: focal lengths must be positive")
    depth = np.asarray(frame.depth)
    v, u = np.nonzero(depth)
    if len(u) == 0:
        raise ValueError("depth_to_points: frame has no valid depth pixels")
    z = depth[v, u].astype(np.float64) / 1000.0
    x = (u - frame.cx) * z / frame.fx
    y = (v - frame.cy) * z / frame.fy
    return np.stack([x, y, z], axis=1)


def read_pgm(path) -> np.ndarray:
    """Binary P5 PGM, 8- or 16-bit (16-bit samples are big-endian)."""
    buf = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        m = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)").match(buf, pos)
        if m is None:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(m.group(2))
        pos = m.end()
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    width, height, maxval = (int(t) for t in tokens[1:])
    pos += 1  # single whitespace byte before the raster
    dtype = ">u2" if maxval > 255 else "u1"
    data = np.frombuffer(buf, dtype=dtype, count=width * height, offset=pos)
    return data.reshape(height, width).astype(np.uint16)


def write_pgm(path, depth: np.ndarray):
    depth = np.asarray(depth, dtype=np.uint16)
    h, w = depth.shape
    header = f"P5\n{w} {h}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + depth.astype(">u2").tobytes())


def temporal_indices(length: int, frames: int) -> np.ndarray:
    """Uniformly spaced frame indices, repeating frames when the video is short."""
    if length < 1:
        raise ValueError("empty video")
    return np.floor(np.linspace(0, length, frames, endpoint=False)).astype(int)


def convert_depth_video(depth_maps: Sequence[np.ndarray], intrinsics, frames: int, rng,
                        num_points=FRAME_POINTS) -> np.ndarray:
    """Depth frames -> normalised ``(frames, num_points, 3)`` sequence."""
    fx, fy, cx, cy = intrinsics
    picked = [depth_maps[i] for i in temporal_indices(len(depth_maps), frames)]
    clouds = [presample(depth_to_points(DepthFrame(d, fx, fy, cx, cy)), rng, out=num_points)
              for d in picked]
    return normalize_sequence(np.stack(clouds))


# ---------------------------------------------------------------------------
# synthetic actions


def _primitive(kind: str, n: int, size: float, rng) -> np.ndarray:
    if kind == "sphere":
        v = rng.normal(size=(n, 3))
        return size * v / np.linalg.norm(v, axis=1, keepdims=True)
    if kind == "box":
        p = rng.uniform(-size, size, (n, 3))
        face = rng.integers(0, 3, n)
        p[np.arange(n), face] = size * rng.choice([-1.0, 1.0], n)
        return p
    if kind == "cylinder":
        a = rng.uniform(0, 2 * np.pi, n)
        return np.stack([size * 0.6 * np.cos(a), rng.uniform(-size, size, n),
                         size * 0.6 * np.sin(a)], axis=1)
    if kind == "two-blob":
        centre = np.where(rng.random(n) < 0.5, -1.0, 1.0)[:, None] * np.array([size * 0.6, 0, 0])
        return centre + rng.normal(scale=size * 0.3, size=(n, 3))
    raise ValueError(f"unknown primitive {kind!r}")


def _rot_y(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def _rot_x(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def synth_sequence(label: int, rng, frames=20, points=FRAME_POINTS, noise=0.01) -> np.ndarray:
    """One raw (un-normalised, metres) sequence of the given motion class.

    translate-x   primitive slides 0.6-1.0 m along +x
    rotate-y      primitive orbits the vertical axis at 0.5 m radius, 90-150 degrees
    oscillate-z   primitive bobs along z, 0.3-0.5 m amplitude, one full period
    expand-contract  primitive swells to 2-2.4x its size and shrinks back
    """
    if not 0 <= label < len(CLASS_NAMES):
        raise ValueError(f"label {label} outside the {len(CLASS_NAMES)} synthetic classes")
    kind = PRIMITIVES[rng.integers(len(PRIMITIVES))]
    size = rng.uniform(0.2, 0.3)
    base = _primitive(kind, points, size, rng) @ _rot_y(rng.uniform(0, 2 * np.pi)).T
    amp = rng.uniform(*_AMPLITUDE[label])
    s = np.linspace(0.0, 1.0, frames)
    out = np.empty((frames, points, 3))
    for t in range(frames):
        if label == 0:
            out[t] = base + [amp * s[t], 0, 0]
        elif label == 1:
            out[t] = (base + [0.5, 0, 0]) @ _rot_y(np.radians(amp) * s[t]).T
        elif label == 2:
            out[t] = base + [0, 0, amp * np.sin(2 * np.pi * s[t])]
        else:
            out[t] = base * (1 + amp * np.sin(np.pi * s[t]))
    return out + rng.normal(scale=noise, size=out.shape)


_AMPLITUDE = {0: (0.6, 1.0), 1: (90.0, 150.0), 2: (0.3, 0.5), 3: (1.0, 1.4)}


def synth_dataset(per_class: int, seed: int, frames=20, points=FRAME_POINTS, split="train",
                  normalize=True, classes=len(CLASS_NAMES)) -> list[SequenceRecord]:
    """Balanced synthetic set; class-major order, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    records = []
    for label in range(classes):
        for i in range(per_class):
            seq = synth_sequence(label, rng, frames, points)
            if normalize:
                seq = normalize_sequence(seq)
            records.append(SequenceRecord(seq, label, f"synth-{split}-{label}-{i:04d}", split))
    return records


def centroid_trajectory_baseline(train: Sequence[SequenceRecord], test: Sequence[SequenceRecord]):
    """Nearest class-mean centroid trajectory (relative to frame 0). Returns accuracy."""
    def feature(r):
        c = r.frames.mean(axis=1)
        return (c - c[0]).ravel()

    labels = sorted({r.label for r in train})
    means = {k: np.mean([feature(r) for r in train if r.label == k], axis=0) for k in labels}
    hits = 0
    for r in test:
        f = feature(r)
        pred = min(labels, key=lambda k: float(np.sum((f - means[k]) ** 2)))
        hits += pred == r.label
    return hits / len(test)


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class Augmentation:
    enabled: bool = True
    rotate_y_deg: float = 15.0
    rotate_x_deg: float = 10.0
    jitter_sigma: float = 0.01
    jitter_clip: float = 0.05
    dropout_max: float = 0.2


def augment(frames: np.ndarray, rng, aug: Augmentation = Augmentation()) -> np.ndarray:
    """Sequence-level random rotation, per-point jitter and point dropout."""
    if not aug.enabled:
        return frames
    ay = np.radians(rng.uniform(-aug.rotate_y_deg, aug.rotate_y_deg))
    ax = np.radians(rng.uniform(-aug.rotate_x_deg, aug.rotate_x_deg))
    out = frames @ (_rot_x(ax) @ _rot_y(ay)).T
    if aug.jitter_sigma > 0:
        out = out + np.clip(rng.normal(scale=aug.jitter_sigma, size=out.shape),
                            -aug.jitter_clip, aug.jitter_clip)
    if aug.dropout_max > 0:
        out = np.stack([dropout_points(f, rng.uniform(0, aug.dropout_max), rng) for f in out])
    return out


def dropout_points(frame: np.ndarray, ratio: float, rng) -> np.ndarray:
    """Replace a ``ratio`` fraction of points with copies of random survivors."""
    n = len(frame)
    drop = rng.random(n) < ratio
    if drop.all() or not drop.any():
        return frame
    keep = np.flatnonzero(~drop)
    out = frame.copy()
    out[drop] = frame[rng.choice(keep, int(drop.sum()))]
    return out


# ---------------------------------------------------------------------------
# files


def write_sequence(path, frames: np.ndarray, label: int):
    frames = np.asarray(frames)
    T, n, _ = frames.shape
    header = SEQ_MAGIC + struct.pack("<IIII", SEQ_VERSION, T, n, label)
    Path(path).write_bytes(header + np.ascontiguousarray(frames, dtype="<f4").tobytes())


def read_sequence(path) -> tuple[np.ndarray, int]:
    buf = Path(path).read_bytes()
    if buf[:4] != SEQ_MAGIC:
        raise ValueError(f"{path}: not a PCSQ sequence file")
    version, T, n, label = struct.unpack_from("<IIII", buf, 4)
    if version != SEQ_VERSION:
        raise ValueError(f"{path}: unsupported sequence version {version}")
    expected = 20 + 12 * T * n
    if len(buf) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(buf)}")
    frames = np.frombuffer(buf, dtype="<f4", offset=20).reshape(T, n, 3).astype(np.float32)
    return frames, label


def write_dataset(directory, records: Iterable[SequenceRecord]):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = ["filename\tlabel\tsplit"]
    for r in records:
        name = f"{r.source}.pcsq"
        write_sequence(directory / name, r.frames, r.label)
        lines.append(f"{name}\t{r.label}\t{r.split}")
    (directory / "manifest.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_dataset(directory, split: str | None = None, dtype=np.float64) -> list[SequenceRecord]:
    directory = Path(directory)
    records = []
    for line in (directory / "manifest.tsv").read_text(encoding="utf-8").splitlines():
        fields = line.split("\t")
        if not line.strip() or fields[0] == "filename":
            continue
        name, label, rec_split = fields[0], int(fields[1]), fields[2]
        if split is not None and rec_split != split:
            continue
        frames, stored = read_sequence(directory / name)
        if stored != label:
            raise ValueError(f"{name}: manifest label {label} != file label {stored}")
        records.append(SequenceRecord(frames.astype(dtype), label, Path(name).stem, rec_split))
    return records
