"""Gameplay trajectories and their on-disk directory format.

A trajectory directory holds three files:

  meta        JSON: game id, fps, frame geometry, text spans, loss-mask
              run-lengths, pseudo-label provenance
  frames.bin  raw RGB24 frames concatenated, row-major
  actions     one text record per frame: key codes, mouse deltas, buttons

The format is bit-exact on round trip and inspectable with standard tools.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .actions import RawAction

DEFAULT_FPS = 20


class TrajectoryFormatError(Exception):
    """Raised when a trajectory directory is missing, corrupt or truncated."""


@dataclass(frozen=True)
class TextSpan:
    """Instruction id active over [start_frame, end_frame]. id 0 is t_null."""

    instruction_id: int
    start_frame: int
    end_frame: int

    def __post_init__(self):
        if self.instruction_id < 0:
            raise ValueError("instruction_id must be >= 0")
        if not 0 <= self.start_frame <= self.end_frame:
            raise ValueError("need 0 <= start_frame <= end_frame")


@dataclass(frozen=True)
class Trajectory:
    """Frames, raw actions, text spans and the per-frame loss mask at 20 Hz."""

    frames: np.ndarray  # [T, H, W, 3] uint8, H == W
    actions: tuple  # T RawActions
    loss_mask: np.ndarray  # [T] bool; True = human-authored, contributes loss
    text_spans: tuple = ()
    fps: int = DEFAULT_FPS
    game_id: str = "unknown"
    pseudo_labeled: bool = False

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim != 4 or f.shape[3] != 3 or f.dtype != np.uint8:
            raise ValueError("frames must be [T, H, W, 3] uint8")
        if f.shape[1] != f.shape[2]:
            raise ValueError("frames must be square")
        if not (len(f) == len(self.actions) == len(self.loss_mask)):
            raise ValueError("frames, actions and loss_mask lengths must match")
        if self.fps != DEFAULT_FPS:
            raise ValueError(f"trajectories are recorded at {DEFAULT_FPS} Hz")
        for span in self.text_spans:
            if span.end_frame >= len(f):
                raise ValueError("text span exceeds trajectory length")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def resolution(self) -> int:
        return int(self.frames.shape[1])

    def instruction_ids(self) -> np.ndarray:
        """Per-frame instruction id (0 where no span applies; later spans win)."""
        ids = np.zeros(len(self), dtype=np.int64)
        for span in self.text_spans:
            ids[span.start_frame : span.end_frame + 1] = span.instruction_id
        return ids


def _mask_run_lengths(mask: np.ndarray) -> list:
    """Encode a bool mask as [first_value, run, run, ...]."""
    if len(mask) == 0:
        return [1]
    runs = [int(mask[0])]
    count = 1
    for i in range(1, len(mask)):
        if mask[i] == mask[i - 1]:
            count += 1
        else:
            runs.append(count)
            count = 1
    runs.append(count)
    return runs


def _mask_from_run_lengths(encoded: list, n: int) -> np.ndarray:
    value = bool(encoded[0])
    out = np.zeros(n, dtype=bool)
    pos = 0
    for run in encoded[1:]:
        out[pos : pos + run] = value
        pos += run
        value = not value
    if pos != n:
        raise TrajectoryFormatError(f"mask run-lengths cover {pos} frames, expected {n}")
    return out


def _format_action(a: RawAction) -> str:
    keys = ";".join(str(k) for k in sorted(a.keys))
    return (f"{keys} {float(a.mouse_dx)!r} {float(a.mouse_dy)!r} "
            f"{int(a.left_btn)} {int(a.right_btn)}")


def _parse_action(line: str) -> RawAction:
    parts = line.split(" ")
    if len(parts) != 5:
        raise TrajectoryFormatError(f"malformed action record: {line!r}")
    keys = frozenset(int(k) for k in parts[0].split(";") if k)
    return RawAction(
        keys=keys,
        mouse_dx=float(parts[1]),
        mouse_dy=float(parts[2]),
        left_btn=bool(int(parts[3])),
        right_btn=bool(int(parts[4])),
    )


def save_trajectory(traj: Trajectory, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {
        "game_id": traj.game_id,
        "fps": traj.fps,
        "num_frames": len(traj),
        "resolution": traj.resolution,
        "text_spans": [
            [s.instruction_id, s.start_frame, s.end_frame] for s in traj.text_spans
        ],
        "loss_mask_runs": _mask_run_lengths(traj.loss_mask),
        "pseudo_labeled": traj.pseudo_labeled,
    }
    (path / "meta").write_text(json.dumps(meta, indent=1))
    (path / "frames.bin").write_bytes(np.ascontiguousarray(traj.frames).tobytes())
    (path / "actions").write_text(
        "".join(_format_action(a) + "\n" for a in traj.actions)
    )


def load_trajectory(path) -> Trajectory:
    path = Path(path)
    meta_file = path / "meta"
    if not meta_file.exists():
        raise TrajectoryFormatError(f"missing meta file in {path}")
    try:
        meta = json.loads(meta_file.read_text())
        n = int(meta["num_frames"])
        res = int(meta["resolution"])
        fps = int(meta["fps"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise TrajectoryFormatError(f"corrupt meta in {path}: {e}") from e

    raw = (path / "frames.bin").read_bytes()
    expected = n * res * res * 3
    if len(raw) != expected:
        raise TrajectoryFormatError(
            f"frames.bin holds {len(raw)} bytes, expected {expected}"
        )
    frames = np.frombuffer(raw, dtype=np.uint8).reshape(n, res, res, 3).copy()

    lines = (path / "actions").read_text().splitlines()
    if len(lines) != n:
        raise TrajectoryFormatError(f"{len(lines)} action records, expected {n}")
    actions = tuple(_parse_action(line) for line in lines)

    return Trajectory(
        frames=frames,
        actions=actions,
        loss_mask=_mask_from_run_lengths(meta["loss_mask_runs"], n),
        text_spans=tuple(TextSpan(*s) for s in meta.get("text_spans", [])),
        fps=fps,
        game_id=meta.get("game_id", "unknown"),
        pseudo_labeled=bool(meta.get("pseudo_labeled", False)),
    )
