"""Procedural ECG-like recordings with class-dependent tone bursts.

Each subject gets its own heart rate, beat amplitude, burst gain and noise
level; the class of a stretch of signal is encoded only by the frequency band
of superimposed tone bursts. Used for toy-scale end-to-end checks and demos.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .signal_io import EcgRecord, write_csv_record

CLASS_NAMES = ("low", "medium", "high")
# (lo_hz, hi_hz) of the burst carrier per class
BANDS = ((12.0, 20.0), (36.0, 48.0), (64.0, 80.0))


def ecg_beats(n: int, rate: float, bpm: float, amplitude: float, rng: np.random.Generator) -> np.ndarray:
    """Sum of Gaussian P, QRS and T waves at jittered beat times."""
    t = np.arange(n) / rate
    x = np.zeros(n)
    period = 60.0 / bpm
    beat = rng.uniform(0, period)
    # (offset s, width s, relative height)
    waves = ((-0.2, 0.025, 0.12), (-0.03, 0.008, -0.15), (0.0, 0.012, 1.0), (0.03, 0.008, -0.25), (0.25, 0.05, 0.3))
    while beat < t[-1] + 0.5:
        for off, width, height in waves:
            x += amplitude * height * np.exp(-0.5 * ((t - beat - off) / width) ** 2)
        beat += period * rng.uniform(0.95, 1.05)
    return x


def tone_bursts(n: int, rate: float, band: tuple[float, float], gain: float, rng: np.random.Generator) -> np.ndarray:
    """Hann-enveloped sinusoid bursts, roughly three per second, carriers drawn from ``band``."""
    x = np.zeros(n)
    pos = int(rng.integers(0, rate // 4))
    while pos < n:
        length = int(rng.uniform(0.15, 0.3) * rate)
        f = rng.uniform(*band)
        k = np.arange(min(length, n - pos))
        env = np.sin(np.pi * k / length) ** 2
        x[pos : pos + k.size] += gain * env * np.sin(2 * np.pi * f * k / rate + rng.uniform(0, 2 * np.pi))
        pos += length + int(rng.uniform(0.02, 0.12) * rate)
    return x


def make_record(subject: str, seed: int, seconds_per_block: int = 10, repeats: int = 2, rate: float = 256.0) -> EcgRecord:
    """Blocks cycle low, medium, high ``repeats`` times, each ``seconds_per_block`` long."""
    rng = np.random.default_rng(seed)
    bpm = rng.uniform(58, 95)
    amp = rng.uniform(0.7, 1.4)
    gain = rng.uniform(0.25, 0.45)
    noise = rng.uniform(0.02, 0.06)
    block = int(seconds_per_block * rate)
    n = block * len(CLASS_NAMES) * repeats
    x = ecg_beats(n, rate, bpm, amp, rng) + noise * rng.standard_normal(n)
    labels = np.empty(n, dtype=object)
    for b in range(len(CLASS_NAMES) * repeats):
        c = b % len(CLASS_NAMES)
        sl = slice(b * block, (b + 1) * block)
        x[sl] += tone_bursts(block, rate, BANDS[c], gain, rng)
        labels[sl] = CLASS_NAMES[c]
    return EcgRecord(subject, rate, x, labels, source=f"synthetic:{subject}")


def label_spec() -> dict:
    return {"mode": "three_class", "class_names": list(CLASS_NAMES), "mapping": {c: i for i, c in enumerate(CLASS_NAMES)}}


def write_dataset(out_dir: str | Path, n_subjects: int = 4, seed: int = 0, seconds_per_block: int = 10,
                  repeats: int = 2, extra: dict | None = None) -> Path:
    """Write one CSV per subject plus ``manifest.json``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for s in range(n_subjects):
        sid = f"S{s + 1}"
        rec = make_record(sid, seed * 1000 + s, seconds_per_block, repeats)
        name = f"{sid}.csv"
        write_csv_record(out / name, rec.samples, rec.labels, rec.sampling_rate_hz)
        records.append({"path": name, "format": "csv", "subject_id": sid, "sampling_rate_hz": rec.sampling_rate_hz})
    manifest = {"records": records, "labels": label_spec(), "window_s": 1.0, "hop_s": 1.0}
    manifest.update(extra or {})
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path
