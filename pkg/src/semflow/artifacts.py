"""Run directories, loss logs, sample files, filmstrip PNGs.

Every training or sampling command works inside `<root>/runs/<name>/` where
root comes from the SEMFLOW_ARTIFACTS environment variable (default
`./artifacts`). A run directory holds `config.json`, `ckpt_*.bin`,
`loss.csv`, and a `samples/` subdirectory with raw float32 clips plus
horizontal filmstrip PNGs for eyeballing.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np

from semflow.errors import ConfigError
from semflow.synthdata import Video

ENV_ROOT = "SEMFLOW_ARTIFACTS"


def artifact_root() -> str:
    return os.environ.get(ENV_ROOT, os.path.join(".", "artifacts"))


def run_dir(name: str, create: bool = True) -> str:
    d = os.path.join(artifact_root(), "runs", name)
    if create:
        os.makedirs(os.path.join(d, "samples"), exist_ok=True)
    return d


def write_config_snapshot(dir_path: str, cfg: dict) -> None:
    with open(os.path.join(dir_path, "config.json"), "w") as fh:
        json.dump(cfg, fh, indent=1, sort_keys=True)
        fh.write("\n")


class LossLog:
    """Loss curve held in memory and rewritten whole at every checkpoint.

    Rewriting (rather than appending) keeps loss.csv consistent with the
    latest checkpoint when a run is killed and resumed: rows past the resume
    step are regenerated, not duplicated.
    """

    def __init__(self, path: str, columns: tuple[str, ...] = ("step", "loss")):
        self.path = path
        self.columns = columns
        self.rows: list[tuple] = []

    def append(self, *values) -> None:
        if len(values) != len(self.columns):
            raise ConfigError(
                f"loss row has {len(values)} values, expected {self.columns}"
            )
        self.rows.append(tuple(values))

    def flush(self) -> None:
        tmp = self.path + ".tmp"
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            w.writerows((repr(v) if isinstance(v, float) else v for v in row)
                        for row in self.rows)
        os.replace(tmp, self.path)

    def load_upto(self, step: int) -> None:
        """Restore rows with step <= `step` from disk (resume path)."""
        self.rows = []
        if not os.path.exists(self.path):
            return
        with open(self.path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is not None and tuple(header) != self.columns:
                raise ConfigError(
                    f"{self.path} has columns {header}, expected {self.columns}"
                )
            for row in reader:
                if int(row[0]) <= step:
                    self.rows.append(tuple(
                        int(v) if c == "step" else float(v)
                        for c, v in zip(self.columns, row)
                    ))


def save_video_bin(path: str, video: Video) -> None:
    header = {
        "magic": "semflow-clip-v1",
        "shape": list(video.frames.shape),
        "fps": video.fps,
    }
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode())
        fh.write(b"\n")
        fh.write(video.frames.astype("<f4").tobytes())
    os.replace(tmp, path)


def load_video_bin(path: str) -> Video:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        blob = fh.read()
    if header.get("magic") != "semflow-clip-v1":
        raise ConfigError(f"{path} is not a clip file")
    shape = tuple(header["shape"])
    frames = np.frombuffer(blob, dtype="<f4").astype(np.float64).reshape(shape)
    return Video(frames=frames, fps=header["fps"])


def save_filmstrip(path: str, video: Video, max_frames: int = 16) -> None:
    """Horizontal strip PNG of up to max_frames evenly spaced frames."""
    from PIL import Image

    f = video.frames.shape[0]
    idx = np.linspace(0, f - 1, min(f, max_frames)).round().astype(int)
    frames = video.frames[idx]  # (k, 3, H, W)
    strip = np.concatenate(list(frames.transpose(0, 2, 3, 1)), axis=1)
    img = (np.clip(strip, 0.0, 1.0) * 255).round().astype(np.uint8)
    Image.fromarray(img).save(path)
