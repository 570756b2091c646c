"""Detector response, integration volumes and shot datasets."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .source import EmissionEvent

FORMAT_TAG = "fourmode-dataset/1"


@dataclass(frozen=True)
class DetectorConfig:
    efficiency: float = 0.25
    resolution_sigma: tuple[float, float, float] = (0.3, 0.3, 0.15)

    def __post_init__(self):
        if not 0 <= self.efficiency <= 1:
            raise ValueError("efficiency must lie in [0, 1]")
        res = tuple(float(x) for x in self.resolution_sigma)
        if len(res) != 3 or any(not (r >= 0 and math.isfinite(r)) for r in res):
            raise ValueError("resolution_sigma must be three non-negative numbers")
        object.__setattr__(self, "resolution_sigma", res)


def detect(event: EmissionEvent | np.ndarray, config: DetectorConfig, seed) -> np.ndarray:
    """Thin the atoms with the detection efficiency, then blur the survivors.

    Returns the detected velocities as an ``(n, 3)`` array.
    """
    v = event.velocities if isinstance(event, EmissionEvent) else np.asarray(event, float).reshape(-1, 3)
    if len(v) == 0:
        return v.copy()
    rng = np.random.default_rng(seed)
    keep = rng.random(len(v)) < config.efficiency
    kept = v[keep]
    sigma = np.asarray(config.resolution_sigma)
    if np.any(sigma > 0) and len(kept):
        kept = kept + rng.standard_normal(kept.shape) * sigma
    return kept


class VolumeShape(enum.Enum):
    RECTANGULAR = "rectangular"
    CYLINDRICAL_Z = "cylindrical"


@dataclass(frozen=True)
class IntegrationVolume:
    """Closed counting region in velocity space.

    For cylinders ``dv = (diameter, diameter, length)`` with the axis along z.
    """

    shape: VolumeShape
    center: tuple[float, float, float]
    dv: tuple[float, float, float]

    def __post_init__(self):
        shape = self.shape if isinstance(self.shape, VolumeShape) else VolumeShape(self.shape)
        object.__setattr__(self, "shape", shape)
        center = tuple(float(x) for x in self.center)
        dv = tuple(float(x) for x in self.dv)
        if len(center) != 3 or len(dv) != 3:
            raise ValueError("center and dv need three components")
        if any(not (d > 0 and math.isfinite(d)) for d in dv):
            raise ValueError("volume extents must be positive")
        if shape is VolumeShape.CYLINDRICAL_Z and dv[0] != dv[1]:
            raise ValueError("a cylinder needs dv_x == dv_y (its diameter)")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "dv", dv)

    def at(self, center) -> "IntegrationVolume":
        return IntegrationVolume(self.shape, tuple(center), self.dv)

    def at_vz(self, vz: float) -> "IntegrationVolume":
        """Same volume centred on the z axis at ``vz``."""
        return self.at((0.0, 0.0, vz))

    def contains(self, velocities) -> np.ndarray:
        v = np.asarray(velocities, dtype=float).reshape(-1, 3)
        d = v - np.asarray(self.center)
        half = np.asarray(self.dv) / 2
        if self.shape is VolumeShape.RECTANGULAR:
            return np.all(np.abs(d) <= half, axis=1)
        radial = d[:, 0] ** 2 + d[:, 1] ** 2 <= half[0] ** 2
        return radial & (np.abs(d[:, 2]) <= half[2])

    def to_dict(self) -> dict:
        return {"shape": self.shape.value, "center": list(self.center), "dv": list(self.dv)}


def count(shot, vol: IntegrationVolume) -> int:
    """Number of detected atoms of one shot inside ``vol``."""
    return int(np.count_nonzero(vol.contains(shot)))


# Integration-volume sizes (mm/s) used for each figure
_TABLE_S1 = {
    "Fig2": (VolumeShape.RECTANGULAR, (9.2, 2.4, 0.9)),
    "Fig3": (VolumeShape.CYLINDRICAL_Z, (32.2, 32.2, 2.8)),
    "Fig4": (VolumeShape.CYLINDRICAL_Z, (4.0, 4.0, 2.0)),
    "FigS1_left": (VolumeShape.CYLINDRICAL_Z, (18.4, 18.4, 1.8)),
    "FigS1_right": (VolumeShape.CYLINDRICAL_Z, (18.4, 18.4, 0.9)),
    "FigS3": (VolumeShape.CYLINDRICAL_Z, (4.0, 4.0, 2.6)),
}
FIGURES = tuple(_TABLE_S1)


def table_s1_volume(figure: str, center=(0.0, 0.0, 0.0)) -> IntegrationVolume:
    try:
        shape, dv = _TABLE_S1[figure]
    except KeyError:
        raise ValueError(f"unknown figure {figure!r}; expected one of {', '.join(FIGURES)}") from None
    return IntegrationVolume(shape, center, dv)


@dataclass
class Dataset:
    """Detected velocities of many shots, stored flat.

    ``velocities`` holds every atom; ``offsets[i]:offsets[i+1]`` are the rows
    of shot ``i``.
    """

    velocities: np.ndarray
    offsets: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.velocities = np.asarray(self.velocities, dtype=float).reshape(-1, 3)
        self.offsets = np.asarray(self.offsets, dtype=np.int64)
        if self.offsets.ndim != 1 or len(self.offsets) < 1 or self.offsets[0] != 0:
            raise ValueError("offsets must start at 0")
        if np.any(np.diff(self.offsets) < 0) or self.offsets[-1] != len(self.velocities):
            raise ValueError("offsets must be non-decreasing and end at the atom count")
        if not np.all(np.isfinite(self.velocities)):
            raise ValueError("velocities must be finite")
        meta_n = self.metadata.get("n_shots")
        if meta_n is not None and meta_n != self.n_shots:
            raise ValueError(f"metadata says {meta_n} shots, data holds {self.n_shots}")

    @classmethod
    def from_shots(cls, shots, metadata=None) -> "Dataset":
        shots = [np.asarray(s, dtype=float).reshape(-1, 3) for s in shots]
        sizes = [len(s) for s in shots]
        offsets = np.concatenate([[0], np.cumsum(sizes, dtype=np.int64)])
        v = np.concatenate(shots) if shots else np.empty((0, 3))
        meta = dict(metadata or {})
        meta["n_shots"] = len(shots)
        return cls(v, offsets, meta)

    @property
    def n_shots(self) -> int:
        return len(self.offsets) - 1

    def __len__(self):
        return self.n_shots

    def shot(self, i: int) -> np.ndarray:
        return self.velocities[self.offsets[i]:self.offsets[i + 1]]

    @property
    def shots(self) -> list[np.ndarray]:
        return [self.shot(i) for i in range(self.n_shots)]

    def shot_of_atom(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_shots), np.diff(self.offsets))

    def counts(self, *volumes: IntegrationVolume) -> np.ndarray:
        """Per-shot atom numbers, shape ``(n_shots, len(volumes))``."""
        owner = self.shot_of_atom()
        out = np.empty((self.n_shots, len(volumes)), dtype=np.int64)
        for k, vol in enumerate(volumes):
            out[:, k] = np.bincount(owner[vol.contains(self.velocities)], minlength=self.n_shots)
        return out

    def take(self, indices) -> "Dataset":
        """Dataset made of the given shots (repeats allowed), in that order."""
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset.from_shots([self.shot(i) for i in indices], {**self.metadata, "n_shots": None})

    def thinned(self, efficiency: float, seed) -> "Dataset":
        """Keep every detected atom independently with probability ``efficiency``."""
        if not 0 <= efficiency <= 1:
            raise ValueError("efficiency must lie in [0, 1]")
        keep = np.random.default_rng(seed).random(len(self.velocities)) < efficiency
        owner = self.shot_of_atom()[keep]
        sizes = np.bincount(owner, minlength=self.n_shots)
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        return Dataset(self.velocities[keep], offsets, dict(self.metadata))

    def save(self, path) -> None:
        """Write newline-delimited JSON: a header line, then one line per shot.

        Floats are written with ``repr`` precision, so loading gives back the
        identical bits.
        """
        header = {"format": FORMAT_TAG, **self.metadata, "n_shots": self.n_shots}
        with open(path, "w") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for i in range(self.n_shots):
                flat = self.shot(i).ravel().tolist()
                fh.write(json.dumps({"shot": i, "v": flat}) + "\n")

    @classmethod
    def load(cls, path) -> "Dataset":
        with open(path) as fh:
            header = json.loads(fh.readline())
            if header.get("format") != FORMAT_TAG:
                raise ValueError(f"{path}: not a {FORMAT_TAG} file")
            shots = []
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                if rec["shot"] != len(shots):
                    raise ValueError(f"{path}: shot records out of order at {rec['shot']}")
                shots.append(np.asarray(rec["v"], dtype=float).reshape(-1, 3))
        meta = {k: v for k, v in header.items() if k != "format"}
        expected = meta.pop("n_shots", None)
        if expected is not None and expected != len(shots):
            raise ValueError(f"{path}: header says {expected} shots, found {len(shots)}")
        return cls.from_shots(shots, meta)


def save_path(out_dir, name) -> Path:
    p = Path(out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p / name
