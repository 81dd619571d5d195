"""Trial containers and the line-oriented dataset format.

A dataset file holds one sample per line:

    trial_id,tick,s_0,...,s_{n_s-1},u_0,...,u_{n_u-1}

Floats are written with 17 significant digits so a round trip reproduces
every 64-bit value exactly.  Environment labels live in a JSON sidecar
manifest mapping trial id to label, since labels themselves may contain
commas.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np


def fmt(x):
    """Serialize a float with 17 significant digits (exact round trip)."""
    return format(float(x), ".17g")


@dataclass(frozen=True)
class TimedSample:
    """Measured state and commanded target at one tick."""

    s: np.ndarray
    u: np.ndarray
    tick: int

    def __post_init__(self):
        object.__setattr__(self, "s", np.asarray(self.s, dtype=np.float64))
        object.__setattr__(self, "u", np.asarray(self.u, dtype=np.float64))
        if not (np.all(np.isfinite(self.s)) and np.all(np.isfinite(self.u))):
            raise ValueError(f"sample at tick {self.tick} contains non-finite values")


@dataclass
class Trial:
    """One recorded run in a single environment."""

    trial_id: int
    label: str
    samples: list = field(default_factory=list)

    def __post_init__(self):
        ticks = [s.tick for s in self.samples]
        if any(b <= a for a, b in zip(ticks, ticks[1:])):
            raise ValueError(f"trial {self.trial_id}: ticks must be strictly increasing")

    def __len__(self):
        return len(self.samples)

    @property
    def states(self):
        return np.array([s.s for s in self.samples])

    @property
    def commands(self):
        return np.array([s.u for s in self.samples])


def manifest_path_for(data_path):
    return str(data_path) + ".manifest.json"


def save_trials(trials, data_path, manifest_path=None):
    """Write the dataset file and its label manifest."""
    if manifest_path is None:
        manifest_path = manifest_path_for(data_path)
    with open(data_path, "w") as fh:
        for trial in trials:
            for sample in trial.samples:
                fields = [str(trial.trial_id), str(sample.tick)]
                fields += [fmt(x) for x in sample.s]
                fields += [fmt(x) for x in sample.u]
                fh.write(",".join(fields) + "\n")
    labels = {str(t.trial_id): t.label for t in trials}
    with open(manifest_path, "w") as fh:
        json.dump({"format_version": 1, "labels": labels}, fh, indent=0, sort_keys=True)
        fh.write("\n")


def load_trials(data_path, manifest_path=None, n_s=2, n_u=2):
    """Read a dataset file back into Trial objects, labels attached."""
    if manifest_path is None:
        manifest_path = manifest_path_for(data_path)
    labels = {}
    if os.path.exists(manifest_path):
        with open(manifest_path) as fh:
            doc = json.load(fh)
        labels = doc.get("labels", {})
    per_trial = {}
    width = 2 + n_s + n_u
    with open(data_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != width:
                raise ValueError(
                    f"{data_path}:{lineno}: expected {width} fields, got {len(parts)}"
                )
            trial_id = int(parts[0])
            tick = int(parts[1])
            s = np.array([float(x) for x in parts[2:2 + n_s]])
            u = np.array([float(x) for x in parts[2 + n_s:]])
            per_trial.setdefault(trial_id, []).append(TimedSample(s, u, tick))
    trials = []
    for trial_id in sorted(per_trial):
        trials.append(Trial(
            trial_id=trial_id,
            label=labels.get(str(trial_id), ""),
            samples=per_trial[trial_id],
        ))
    return trials


def parse_env_label(label):
    """Read (alpha, beta) out of a label like 'alpha=0.4,beta=1.0'."""
    values = {}
    for part in label.split(","):
        if "=" in part:
            key, _, val = part.partition("=")
            values[key.strip()] = float(val)
    try:
        return values["alpha"], values["beta"]
    except KeyError:
        raise ValueError(f"label {label!r} does not encode alpha/beta") from None
