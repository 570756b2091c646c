"""Shot-by-shot Monte Carlo: source, optional interferometer, detector."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .detection import Dataset, DetectorConfig, detect
from .interferometer import Interferometer, OpticsConfig
from .source import SourceConfig, config_digest, sample_shot, shot_seed


def simulate_shot(source: SourceConfig, detector: DetectorConfig, interferometer, master_seed, index):
    """Detected velocities of shot ``index``; one generator drives all stages."""
    rng = np.random.default_rng(shot_seed(master_seed, index))
    event = sample_shot(source, rng)
    if interferometer is not None:
        event = interferometer.apply(event, rng)
    return detect(event, detector, rng)


def _run_chunk(args):
    source, detector, optics, master_seed, start, stop = args
    interf = Interferometer(source, optics) if optics is not None else None
    return [simulate_shot(source, detector, interf, master_seed, i) for i in range(start, stop)]


def run_digest(source: SourceConfig, detector: DetectorConfig, optics: OpticsConfig | None) -> str:
    payload = {
        "source": source.to_dict(),
        "detector": {"efficiency": detector.efficiency, "resolution_sigma": list(detector.resolution_sigma)},
        "optics": None if optics is None else {
            "phases": [optics.phases.phi_D, optics.phases.phi_A, optics.phases.phi_B],
            "method": optics.method,
            "rabi_frequency": optics.rabi_frequency,
            "splitter_start": optics.splitter_start,
            "closing_time": optics.closing_time,
            "packet_sigma_v": optics.packet_sigma_v,
        },
    }
    return config_digest(payload)


def simulate_dataset(
    source: SourceConfig,
    detector: DetectorConfig,
    n_shots: int,
    master_seed: int,
    optics: OpticsConfig | None = None,
    workers: int = 1,
    chunk_size: int = 2048,
) -> Dataset:
    """Generate ``n_shots`` detected shots.

    Shot ``i`` depends only on ``(master_seed, i)``, so the result is the same
    for any ``workers`` count.  ``optics=None`` detects the emitted atoms
    directly (no interferometer).
    """
    if n_shots < 1:
        raise ValueError("n_shots must be >= 1")
    bounds = list(range(0, n_shots, chunk_size)) + [n_shots]
    jobs = [(source, detector, optics, master_seed, a, b) for a, b in zip(bounds[:-1], bounds[1:])]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_chunk, jobs))
    else:
        chunks = [_run_chunk(job) for job in jobs]
    shots = [s for chunk in chunks for s in chunk]
    meta = {"master_seed": int(master_seed), "config_digest": run_digest(source, detector, optics)}
    return Dataset.from_shots(shots, meta)
