"""Two-cluster synthetic traffic speeds with injected incidents.

Cluster 1 follows a smooth double-dip daily profile (rush hours at 08:00 and
20:00). Cluster 2 runs at a lower mean with a weaker daily profile plus an
hourly oscillation, which gives it the larger temporal variance. Incidents
scale one node's speed by ``1 - depth`` over their window.
"""
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import List, Optional

import numpy as np

from .data import TimeMatrix

MINUTES_PER_DAY = 24 * 60


@dataclass
class Incident:
    node: int
    start: int
    duration: int
    depth: float


@dataclass
class SyntheticSpec:
    n_nodes: int = 20
    steps: int = 2016
    interval_minutes: int = 5
    clusters: Optional[List[int]] = None  # 1 or 2 per node; default first half 1, rest 2
    incidents: List[Incident] = field(default_factory=list)
    noise_std: float = 1.0
    seed: int = 0
    cluster1_mean: float = 60.0
    cluster1_amplitude: float = 20.0
    cluster2_mean: float = 40.0
    cluster2_amplitude: float = 10.0
    hf_period_steps: int = 12
    node_jitter: float = 0.1
    start_time: str = "2021-10-01T00:00:00"

    def __post_init__(self):
        self.incidents = [i if isinstance(i, Incident) else Incident(**i) for i in self.incidents]
        if self.clusters is None:
            half = self.n_nodes // 2
            self.clusters = [1] * half + [2] * (self.n_nodes - half)
        self.validate()

    def validate(self):
        if self.n_nodes < 1 or self.steps < 1 or self.interval_minutes < 1:
            raise ValueError("n_nodes, steps and interval_minutes must be positive")
        if MINUTES_PER_DAY % self.interval_minutes:
            raise ValueError("interval_minutes must divide one day")
        if len(self.clusters) != self.n_nodes or not set(self.clusters) <= {1, 2}:
            raise ValueError("clusters must assign every node to cluster 1 or 2")
        if self.noise_std < 0 or not 0 <= self.node_jitter < 1:
            raise ValueError("noise_std must be >= 0 and node_jitter in [0, 1)")
        for inc in self.incidents:
            if not 0 <= inc.node < self.n_nodes:
                raise ValueError(f"incident node {inc.node} out of range")
            if inc.duration < 1 or not 0 <= inc.start or inc.start + inc.duration > self.steps:
                raise ValueError(f"incident {inc} does not fit inside [0, {self.steps})")
            if not 0 < inc.depth <= 1:
                raise ValueError(f"incident depth must be in (0, 1], got {inc.depth}")

    @property
    def day_steps(self):
        return MINUTES_PER_DAY // self.interval_minutes

    def hf_amplitude(self):
        # variance of the hourly term is twice that of cluster 1's daily term (a^2 / 8)
        return math.sqrt(2 * 2 * self.cluster1_amplitude ** 2 / 8)


def rush_hour_dip(time_of_day):
    """0 at free flow, 1 at the 08:00 and 20:00 rush hours; ``time_of_day`` in days."""
    return 0.5 * (1.0 - np.cos(4.0 * np.pi * (time_of_day - 1.0 / 12.0)))


def clean_signal(spec: SyntheticSpec):
    """Noise- and incident-free (T, N) speeds."""
    rng = np.random.default_rng(spec.seed)
    scale = 1.0 + spec.node_jitter * rng.uniform(-1.0, 1.0, spec.n_nodes)
    phase = rng.uniform(0.0, 2.0 * np.pi, spec.n_nodes)
    t = np.arange(spec.steps)
    dip = rush_hour_dip((t % spec.day_steps) / spec.day_steps)[:, None]
    clusters = np.asarray(spec.clusters)
    c1 = clusters == 1
    mean = np.where(c1, spec.cluster1_mean, spec.cluster2_mean)
    amp = np.where(c1, spec.cluster1_amplitude, spec.cluster2_amplitude) * scale
    values = mean - amp * dip
    # hourly oscillation, periodic in the day because hf_period divides it
    hf = spec.hf_amplitude() * np.sin(2.0 * np.pi * t[:, None] / spec.hf_period_steps + phase)
    values = values + np.where(c1, 0.0, 1.0) * hf
    return values, rng


def generate(spec: SyntheticSpec):
    """Return ``(TimeMatrix, labels)``; fully determined by ``spec.seed``."""
    spec.validate()
    values, rng = clean_signal(spec)
    for inc in spec.incidents:
        values[inc.start:inc.start + inc.duration, inc.node] *= 1.0 - inc.depth
    if spec.noise_std > 0:
        values = values + rng.normal(0.0, spec.noise_std, values.shape)
    values = np.maximum(values, 0.0)

    t0 = datetime.fromisoformat(spec.start_time)
    step = timedelta(minutes=spec.interval_minutes)
    timestamps = [(t0 + i * step).isoformat() for i in range(spec.steps)]
    tm = TimeMatrix(values, spec.interval_minutes, timestamps, [f"node{i}" for i in range(spec.n_nodes)])
    labels = {
        "clusters": {f"node{i}": c for i, c in enumerate(spec.clusters)},
        "incidents": [asdict(i) for i in spec.incidents],
        "spec": asdict(spec),
    }
    return tm, labels


def regime_switching_fixture(seed=0, noise_std=1.0):
    """N=20, T=2016 (one week at 5 min) fixture with one incident in the
    training span and one in the validation span of a 7:1:2 split."""
    return SyntheticSpec(
        n_nodes=20,
        steps=2016,
        interval_minutes=5,
        incidents=[
            Incident(node=3, start=900, duration=36, depth=0.6),
            Incident(node=14, start=1500, duration=36, depth=0.5),
        ],
        noise_std=noise_std,
        seed=seed,
    )


def save_labels(labels, path):
    path = Path(path)
    path.write_text(json.dumps(labels, indent=2))
    return path
