"""Evaluation over a manifest of generated (or reference) audible videos."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import AudibleVideoSample, load_samples
from .metrics import (
    DistributionStats,
    EmbeddingProvider,
    ToyAlignmentProvider,
    avh_score,
    check_unit,
    frechet_distance,
    kernel_distance,
    prompt_similarity,
)

METRICS = ("avh", "fvd", "kvd", "clipsim", "fad")
NEEDS_REFERENCE = {"fvd", "kvd", "fad"}


def parse_metrics(spec: str | list[str]) -> list[str]:
    names = [m.strip().lower() for m in (spec.split(",") if isinstance(spec, str) else spec) if m.strip()]
    unknown = [m for m in names if m not in METRICS]
    if unknown:
        raise ValueError(f"unknown metrics {unknown}; choose from {list(METRICS)}")
    if not names:
        raise ValueError("no metrics requested")
    return names


def _video_features(samples, p) -> np.ndarray:
    return np.stack([p.embed_video(s.video) for s in samples])


def _audio_features(samples, p) -> np.ndarray:
    return np.stack([check_unit(p.embed_audio(s.audio), p.dim, "audio embedding") for s in samples])


def evaluate_samples(
    samples: list[AudibleVideoSample],
    metrics: list[str],
    provider: EmbeddingProvider | None = None,
    reference: list[AudibleVideoSample] | None = None,
) -> dict:
    """
    Every sample counts once, in manifest order; nothing is filtered or reranked.
    'avh' also reports a mismatched control (each video scored against the next
    sample's audio) when there are at least two samples.
    """
    if not samples:
        raise ValueError("no samples to evaluate")
    metrics = parse_metrics(metrics)
    missing = sorted(NEEDS_REFERENCE.intersection(metrics))
    if missing and not reference:
        raise ValueError(f"metrics {missing} need a non-empty reference set")
    p = provider or ToyAlignmentProvider()
    out: dict[str, float] = {}
    if "avh" in metrics:
        scores = [avh_score(s.video, s.audio, p) for s in samples]
        out["avh"] = 100.0 * float(np.mean(scores))
        if len(samples) > 1:
            control = [avh_score(s.video, samples[(i + 1) % len(samples)].audio, p) for i, s in enumerate(samples)]
            out["avh_mismatched_control"] = 100.0 * float(np.mean(control))
    if "clipsim" in metrics:
        out["clipsim"] = float(np.mean([prompt_similarity(s.video, s.caption, p) for s in samples]))
    if {"fvd", "kvd"} & set(metrics):
        gen_v, ref_v = _video_features(samples, p), _video_features(reference, p)
        if "fvd" in metrics:
            out["fvd"] = frechet_distance(DistributionStats.from_samples(gen_v), DistributionStats.from_samples(ref_v))
        if "kvd" in metrics:
            out["kvd"] = kernel_distance(gen_v, ref_v)
    if "fad" in metrics:
        gen_a, ref_a = _audio_features(samples, p), _audio_features(reference, p)
        out["fad"] = frechet_distance(DistributionStats.from_samples(gen_a), DistributionStats.from_samples(ref_a))
    report = {"provider": p.provider_id, "count": len(samples), "metrics": out}
    if reference:
        report["reference_count"] = len(reference)
    return report


def _sample_metadata(manifest: Path) -> dict:
    """config_hash and seed from sampler metadata next to the manifest, if present."""
    meta = manifest.parent / "sample_000.json"
    if not meta.is_file():
        return {}
    raw = json.loads(meta.read_text())
    return {k: raw[k] for k in ("config_hash", "base_seed", "steps") if k in raw}


def evaluate_manifest(
    manifest: str | Path,
    metrics,
    reference: str | Path | None = None,
    provider: EmbeddingProvider | None = None,
    out_path: str | Path | None = None,
) -> dict:
    manifest = Path(manifest)
    if manifest.is_dir():
        manifest = manifest / "manifest.jsonl"
    if not manifest.is_file():
        raise FileNotFoundError(f"manifest not found: {manifest}")
    samples = load_samples(manifest)
    if not samples:
        raise ValueError(f"{manifest}: no samples to evaluate")
    ref = None
    if reference is not None:
        ref = load_samples(reference)
        if not ref:
            raise ValueError(f"{reference}: reference set is empty")
    report = evaluate_samples(samples, metrics, provider, ref)
    report.update(_sample_metadata(manifest))
    report["manifest"] = str(manifest)
    if out_path is not None:
        Path(out_path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report
