import json
import math

import numpy as np
import pytest
import torch

from avdiff.checkpoint import load_checkpoint, save_checkpoint
from avdiff.codecs import make_codec
from avdiff.config import RunConfig
from avdiff.data import make_corpus
from avdiff.model import AudibleVideoDiffusion
from avdiff.sample import generate
from avdiff.train import Codecs, TrainingDiverged, encode_corpus, load_model, save_run, text_encoder_for, train

TINY = dict(width=16, text_dim=16, heads=2, groups=4, batch_size=2, n_train=4, steps=3, duration=0.5)


@pytest.fixture(scope="module")
def tiny_samples():
    return make_corpus(4, "train", 0.5)


def _cfg(**kw):
    return RunConfig(**{**TINY, **kw})


@pytest.mark.parametrize("bridge,lam", [(True, 0.1), (False, 0.1), (True, 0.0), (False, 0.0)])
def test_step_one_diffusion_loss_independent_of_ablation(tiny_samples, bridge, lam):
    """Zero-init bridge and separately seeded components: the first step's diffusion loss is bit-identical."""
    ref = train(_cfg(steps=1), samples=tiny_samples).log[0]
    rec = train(_cfg(steps=1, bridge=bridge, eas_lambda=lam), samples=tiny_samples).log[0]
    assert rec["l_diff"] == ref["l_diff"]
    assert rec["t"] == ref["t"]


def test_component_weights_shared_across_ablations():
    full, none = AudibleVideoDiffusion(_cfg()), AudibleVideoDiffusion(_cfg(bridge=False, eas_lambda=0.0))
    for name, p in none.state_dict().items():
        assert torch.equal(p, full.state_dict()[name]), name
    assert none.bridge is None and none.weights is None


def test_training_deterministic(tiny_samples):
    a = train(_cfg(), samples=tiny_samples)
    b = train(_cfg(), samples=tiny_samples)
    assert a.log == b.log
    for (k, p), q in zip(a.model.state_dict().items(), b.model.state_dict().values()):
        assert torch.equal(p, q), k


def test_seed_changes_run(tiny_samples):
    a = train(_cfg(seed=0), samples=tiny_samples).log
    b = train(_cfg(seed=1), samples=tiny_samples).log
    assert a != b


def test_log_records(tiny_samples):
    log = train(_cfg(), samples=tiny_samples).log
    assert [r["step"] for r in log] == [1, 2, 3]
    for r in log:
        assert 1 <= r["t"] <= 1000
        assert r["total"] == pytest.approx(r["l_diff"] + 0.1 * r["l_eas"], rel=1e-6)
        assert r["l_diff"] == pytest.approx(r["l_a"] + r["l_v"], rel=1e-6)


def test_divergence_guard_on_nan_loss(tiny_samples, monkeypatch):
    import avdiff.model as M

    orig = M.noise_estimation_loss
    monkeypatch.setattr(M, "noise_estimation_loss", lambda pred, eps: orig(pred, eps) * float("nan"))
    cfg = _cfg()
    with pytest.raises(TrainingDiverged, match=cfg.config_hash):
        train(cfg, samples=tiny_samples)


def test_too_few_samples(tiny_samples):
    with pytest.raises(ValueError):
        train(_cfg(batch_size=8, n_train=8), samples=tiny_samples)


def test_checkpoint_round_trip(tmp_path, tiny_samples):
    result = train(_cfg(), samples=tiny_samples)
    ckpt = save_run(result, tmp_path)
    model, codecs, header = load_model(ckpt)
    assert header["config_hash"] == result.model.cfg.config_hash
    assert header["seed"] == 0
    for k, v in result.model.state_dict().items():
        assert torch.equal(model.state_dict()[k], v), k
    lines = [json.loads(x) for x in (tmp_path / "loss_log.jsonl").read_text().splitlines()]
    assert len(lines) == 3 and all(x["config_hash"] == header["config_hash"] for x in lines)


def test_checkpoint_tensor_dtypes(tmp_path):
    tensors = {"a": torch.arange(6, dtype=torch.float64).view(2, 3), "b": torch.tensor([1, 2], dtype=torch.int64)}
    save_checkpoint(tmp_path / "x.ckpt", tensors, RunConfig().to_dict(), {"note": 1})
    back, header = load_checkpoint(tmp_path / "x.ckpt")
    for k, v in tensors.items():
        assert back[k].dtype == v.dtype and torch.equal(back[k], v)
    assert header["meta"] == {"note": 1}


def test_incompatible_checkpoint_rejected(tmp_path, tiny_samples):
    result = train(_cfg(steps=1), samples=tiny_samples)
    ckpt = save_run(result, tmp_path)
    tensors, header = load_checkpoint(ckpt)
    cfg = dict(header["config"], width=32, heads=2)
    save_checkpoint(tmp_path / "bad.ckpt", tensors, cfg)
    with pytest.raises(ValueError, match="incompatible"):
        load_model(tmp_path / "bad.ckpt")


def test_learned_codec_persisted(tmp_path, tiny_samples):
    cfg = _cfg(steps=1, codec="learned", codec_steps=2)
    result = train(cfg, samples=tiny_samples)
    _, codecs, _ = load_model(save_run(result, tmp_path))
    for name in ("audio", "video"):
        a, b = getattr(result.codecs, name), getattr(codecs, name)
        for (k, p), q in zip(a.state_dict().items(), b.state_dict().values()):
            assert torch.equal(p, q), k


def test_feature_alignment_bounded(tiny_samples):
    model = AudibleVideoDiffusion(_cfg())
    codecs = Codecs(make_codec("analytic", "audio"), make_codec("analytic", "video"))
    enc = encode_corpus(tiny_samples, codecs, text_encoder_for(model.cfg))
    g = torch.Generator().manual_seed(0)
    score = model.feature_alignment(enc.z_a, enc.z_v, enc.text, [100, 500], generator=g)
    assert score.shape == (4,)
    assert torch.all(score.abs() <= 1 + 1e-6)


def test_sampling_shapes_and_determinism(tiny_samples):
    model = AudibleVideoDiffusion(_cfg()).eval()
    codecs = Codecs(make_codec("analytic", "audio"), make_codec("analytic", "video"))
    a = generate(model, codecs, "a red circle bounces with a rising tone", seed=3, steps=4)
    b = generate(model, codecs, "a red circle bounces with a rising tone", seed=3, steps=4)
    assert a == b
    assert a.video.shape == (5, 3, 64, 64)
    assert a.audio.shape[1] == 64
    assert np.all(np.abs(a.video.data) <= 1) and math.isfinite(float(a.audio.data.sum()))
