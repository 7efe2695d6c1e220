"""Shared fixtures: synthetic frames, annotation files and run configs."""

import json
from pathlib import Path

import numpy as np
import pytest
from scipy import ndimage

from degradebench import Image, save_image


def smooth_corpus(count=10, size=(64, 64), channels=3, seed=20260814):
    """Deterministic natural-ish test images: band-limited noise in [0.1, 0.9]."""
    rng = np.random.default_rng(seed)
    images = []
    for _ in range(count):
        raw = rng.uniform(0.0, 1.0, size=(size[0], size[1], channels))
        smooth = ndimage.gaussian_filter(raw, sigma=(3.0, 3.0, 0))
        lo, hi = smooth.min(), smooth.max()
        images.append(Image.from_array(0.1 + 0.8 * (smooth - lo) / (hi - lo)))
    return images


def single_object_rows(length):
    """One static ball, no attributes, no embedding."""
    lines = ["d=0"]
    for t in range(length):
        lines.append(f"{t},1,4.0,4.0,6.0,6.0,ball,")
    return "\n".join(lines) + "\n"


def two_object_rows(length, cup_until=3):
    """A static ball plus a cup that leaves the scene at ``cup_until``."""
    lines = ["d=2"]
    for t in range(length):
        lines.append(f"{t},1,4.0,4.0,6.0,6.0,ball,color=red,0.1,0.2")
        if t < cup_until:
            lines.append(f"{t},2,14.0,10.0,5.0,5.0,cup,color=blue,0.5,0.4")
    return "\n".join(lines) + "\n"


def write_frames(directory, length, width=32, height=24, seed=7):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    base = rng.uniform(0.2, 0.8, size=(height, width, 3))
    for t in range(length):
        arr = np.clip(base + 0.02 * t, 0.0, 1.0)
        save_image(Image.from_array(arr), directory / f"frame{t:03d}.png")


@pytest.fixture
def make_run_config(tmp_path):
    """Factory writing frames + annotations + a config file, returning its path."""

    def _build(length=6, annotations=None, config=None, name="config.json"):
        frames_dir = tmp_path / "frames"
        write_frames(frames_dir, length)
        ann_path = tmp_path / "annotations.txt"
        ann_path.write_text(annotations or single_object_rows(length))
        payload = {
            "schema_version": 1,
            "sequence": {"image_dir": "frames", "annotations": "annotations.txt"},
            "schedule": {"regime": "early", "length": length, "boundary": 2},
            "tasks": {"kinds": ["presence"]},
            "model": {"mock": "echo"},
            "episodes": 1,
            "master_seed": 11,
            "output": "run.jsonl",
        }
        for key, value in (config or {}).items():
            if value is None:
                payload.pop(key, None)
            else:
                payload[key] = value
        config_path = tmp_path / name
        config_path.write_text(json.dumps(payload))
        return config_path

    return _build
