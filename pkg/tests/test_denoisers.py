import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from avdiff.denoisers import (
    Attention,
    AudioDenoiser,
    HashTextEncoder,
    MiniUNet,
    TextEmbedding,
    VideoDenoiser,
    audio_denoiser,
    embed_text,
    pooled_text,
    timestep_embedding,
    video_denoiser,
)
from avdiff.schedule import noise_estimation_loss

SMALL = dict(width=16, text_dim=16, groups=4, heads=2)


def _text(batch=1, dim=16, seed=0):
    enc = HashTextEncoder(dim=dim, max_tokens=6, seed=seed)
    caps = ["a red circle rises", "a low tone hums softly", "blue square slides", "high bright note"]
    return enc.batch(caps[:batch])


def _randomize(module: torch.nn.Module, seed: int = 0, scale: float = 0.2, skip_temporal: bool = False):
    """Give every zero-initialized output layer nonzero weights so the checks are not vacuous."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in module.named_parameters():
            if skip_temporal and (".temporal." in name or "tattn" in name):
                continue
            if "conv_out" in name or "to_out" in name:
                p.copy_(scale * torch.randn(p.shape, generator=g, dtype=p.dtype))


# ---------------------------------------------------------------- text


def test_text_deterministic():
    a, b = embed_text("A red circle"), embed_text("A red circle")
    assert torch.equal(a.tokens, b.tokens) and torch.equal(a.mask, b.mask)
    c = HashTextEncoder()("A red circle")
    assert torch.equal(a.tokens, c.tokens)


def test_text_disjoint_vocabulary_cosine():
    enc = HashTextEncoder()
    a = pooled_text(enc("red circle bounces near the top"))
    b = pooled_text(enc("blue square slides along bottom"))
    # measured value 0.067 with the default seed and width 128
    assert F.cosine_similarity(a, b, dim=0).item() < 0.2


@pytest.mark.parametrize("caption", ["", "   ", "\n\t", "!!!"])
def test_text_rejects_empty(caption):
    with pytest.raises(ValueError):
        embed_text(caption)


def test_text_mask_and_truncation():
    enc = HashTextEncoder(dim=8, max_tokens=4)
    e = enc("one two")
    assert e.mask.tolist() == [True, True, False, False]
    assert torch.all(e.tokens[2:] == 0)
    assert enc("a b c d e f").mask.all()


def test_timestep_embedding_shape():
    emb = timestep_embedding(torch.tensor([1, 500, 1000]), 9)
    assert emb.shape == (3, 9)
    np.testing.assert_allclose(emb[:, 0], torch.cos(torch.tensor([1.0, 500.0, 1000.0])), atol=1e-12)


def test_attention_ignores_masked_tokens():
    torch.manual_seed(0)
    attn = Attention(8, 6, heads=2)
    x = torch.randn(1, 5, 8)
    ctx = torch.randn(1, 4, 6)
    mask = torch.tensor([[True, True, False, False]])
    ctx2 = ctx.clone()
    ctx2[0, 2:] = 100 * torch.randn(2, 6)
    torch.testing.assert_close(attn(x, ctx, mask), attn(x, ctx2, mask), rtol=0, atol=0)


# ---------------------------------------------------------------- audio net


def test_audio_channel_contract():
    net = AudioDenoiser(**SMALL)
    c = _text()
    eps, f = audio_denoiser(net, torch.randn(1, 8, 8, 16), 10, c)
    assert eps.shape == (1, 8, 8, 16)
    assert f.shape == (1, 4 * 8, 16)
    with pytest.raises(ValueError, match="8"):
        net(torch.randn(1, 4, 8, 16), 10, c)
    with pytest.raises(ValueError):
        net(torch.randn(8, 8, 16), 10, c)


def test_fresh_output_is_zero():
    torch.manual_seed(0)
    a, v = AudioDenoiser(**SMALL), VideoDenoiser(**SMALL)
    c = _text(2)
    eps_a, _ = a(torch.randn(2, 8, 8, 16), 500, c)
    eps_v, _ = v(torch.randn(2, 3, 4, 8, 8), 500, c)
    assert torch.all(eps_a == 0) and torch.all(eps_v == 0)


def test_bottleneck_dims_at_toy_scale():
    torch.manual_seed(0)
    a, v = AudioDenoiser(), VideoDenoiser()
    c = HashTextEncoder().batch(["a tone"])
    _, f_a = a(torch.randn(1, 8, 8, 16), 3, c)
    _, f_v = v(torch.randn(1, 20, 4, 8, 8), 3, c)
    assert f_a.shape == (1, 32, 64)
    assert f_v.shape == (1, 320, 64)


def test_batch_permutation_equivariance():
    torch.manual_seed(1)
    net = AudioDenoiser(**SMALL)
    _randomize(net)
    z = torch.randn(4, 8, 8, 8)
    c = _text(4)
    perm = torch.tensor([2, 0, 3, 1])
    eps, f = net(z, 7, c)
    eps_p, f_p = net(z[perm], 7, TextEmbedding(c.tokens[perm], c.mask[perm]))
    torch.testing.assert_close(eps_p, eps[perm], rtol=1e-5, atol=1e-6)
    torch.testing.assert_close(f_p, f[perm], rtol=1e-5, atol=1e-6)


def test_per_sample_timesteps_match_scalar():
    torch.manual_seed(2)
    net = AudioDenoiser(**SMALL)
    _randomize(net)
    z, c = torch.randn(2, 8, 8, 8), _text(2)
    both = net(z, torch.tensor([5, 5]), c)[0]
    torch.testing.assert_close(both, net(z, 5, c)[0])


def test_conditioning_changes_prediction():
    torch.manual_seed(3)
    net = AudioDenoiser(**SMALL)
    _randomize(net)
    z = torch.randn(1, 8, 8, 8)
    e1 = net(z, 100, HashTextEncoder(16, 6).batch(["a high bright tone"]))[0]
    e2 = net(z, 100, HashTextEncoder(16, 6).batch(["a red square slides"]))[0]
    assert (e1 - e2).abs().max() > 1e-4


# ---------------------------------------------------------------- video net


def test_video_rank_and_channel_contract():
    net = VideoDenoiser(**SMALL)
    c = _text()
    with pytest.raises(ValueError):
        video_denoiser(net, torch.randn(1, 2, 8, 8, 8), 1, c)
    with pytest.raises(ValueError):
        video_denoiser(net, torch.randn(2, 4, 8, 8), 1, c)


def _frame_independent_net(seed=4):
    torch.manual_seed(seed)
    net = VideoDenoiser(**SMALL)
    _randomize(net, seed, skip_temporal=True)
    return net


def _two_d_path(net, z, t, c):
    net.use_temporal = False
    try:
        return net(z, t, c)[0]
    finally:
        net.use_temporal = True


def test_degenerate_temporal_layers_equal_2d_path():
    net = _frame_independent_net()
    z, c = torch.randn(2, 5, 4, 8, 8), _text(2)
    eps = net(z, 300, c)[0]
    assert eps.abs().max() > 0
    torch.testing.assert_close(eps, _two_d_path(net, z, 300, c), rtol=1e-5, atol=1e-6)


def test_single_frame_equals_2d_path():
    net = _frame_independent_net(5)
    z, c = torch.randn(2, 1, 4, 8, 8), _text(2)
    eps = net(z, 42, c)[0]
    torch.testing.assert_close(eps, _two_d_path(net, z, 42, c), rtol=1e-5, atol=1e-6)


def test_frame_shuffle_equivariance_at_init():
    net = _frame_independent_net(6)
    z, c = torch.randn(1, 6, 4, 8, 8), _text(1)
    perm = torch.tensor([3, 0, 5, 1, 4, 2])
    eps = net(z, 77, c)[0]
    eps_shuffled = net(z[:, perm], 77, c)[0]
    torch.testing.assert_close(eps_shuffled, eps[:, perm], rtol=1e-5, atol=1e-6)


def test_trained_temporal_layers_mix_frames():
    torch.manual_seed(7)
    net = VideoDenoiser(**SMALL)
    _randomize(net, 7)
    with torch.no_grad():
        for m in net.modules():
            if getattr(m, "temporal", None) is not None and isinstance(m.temporal, torch.nn.Conv1d):
                m.temporal.weight.add_(0.1 * torch.randn_like(m.temporal.weight))
    z, c = torch.randn(1, 4, 4, 8, 8), _text(1)
    z2 = z.clone()
    z2[:, 3] += 1.0
    delta = (net(z, 9, c)[0] - net(z2, 9, c)[0])[:, 0].abs().max()
    assert delta > 1e-5


def test_temporal_conv_matches_conv1d_reference():
    torch.manual_seed(8)
    net = VideoDenoiser(**SMALL)
    conv = net.conv_in
    with torch.no_grad():
        conv.temporal.weight.normal_()
        conv.temporal.bias.normal_()
    b, frames, c, h, w = 2, 5, 4, 8, 8
    x = torch.randn(b * frames, c, h, w)
    got = conv.temporal_mix(x, frames)
    seq = x.view(b, frames, c, h * w).permute(0, 3, 2, 1).reshape(b * h * w, c, frames)
    ref = conv.temporal(seq).view(b, h * w, c, frames).permute(0, 3, 2, 1).reshape(b * frames, c, h, w)
    torch.testing.assert_close(got, ref, rtol=1e-5, atol=1e-5)


@settings(max_examples=10, deadline=None)
@given(b=st.integers(1, 2), frames=st.integers(1, 3), h=st.integers(1, 3), w=st.integers(1, 3))
def test_property_shape_preservation(b, frames, h, w):
    torch.manual_seed(0)
    a, v = AudioDenoiser(**SMALL), VideoDenoiser(**SMALL)
    c = _text(b)
    za = torch.randn(b, 8, 2 * h, 2 * w)
    zv = torch.randn(b, frames, 4, 2 * h, 2 * w)
    with torch.no_grad():
        assert a(za, 1, c)[0].shape == za.shape
        assert v(zv, 1, c)[0].shape == zv.shape


# ---------------------------------------------------------------- gradients


def _fd_gradient_check(net: MiniUNet, z, c, eps_true, n_entries=24, h=1e-6, seed=0):
    net = net.double()
    z, eps_true = z.double(), eps_true.double()
    c = TextEmbedding(c.tokens.double(), c.mask)
    loss = noise_estimation_loss(net(z, 250, c)[0], eps_true)
    params = dict(net.named_parameters())
    grads = torch.autograd.grad(loss, list(params.values()))
    grads = dict(zip(params, grads))
    rng = np.random.default_rng(seed)
    names = sorted(params)
    analytic, numeric = [], []
    for _ in range(n_entries):
        name = names[rng.integers(len(names))]
        p = params[name]
        idx = tuple(int(rng.integers(s)) for s in p.shape)
        with torch.no_grad():
            orig = p[idx].item()
            p[idx] = orig + h
            up = noise_estimation_loss(net(z, 250, c)[0], eps_true).item()
            p[idx] = orig - h
            down = noise_estimation_loss(net(z, 250, c)[0], eps_true).item()
            p[idx] = orig
        analytic.append(grads[name][idx].item())
        numeric.append((up - down) / (2 * h))
    analytic, numeric = np.array(analytic), np.array(numeric)
    return np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)


def test_audio_gradient_finite_difference():
    torch.manual_seed(9)
    net = AudioDenoiser(width=8, text_dim=8, groups=2, heads=2)
    _randomize(net, 9, scale=0.5)
    c = HashTextEncoder(8, 4).batch(["tone rises"])
    rel = _fd_gradient_check(net, torch.randn(1, 8, 4, 4), c, torch.randn(1, 8, 4, 4))
    assert rel < 1e-4


def test_video_gradient_finite_difference():
    torch.manual_seed(10)
    net = VideoDenoiser(width=8, text_dim=8, groups=2, heads=2)
    _randomize(net, 10, scale=0.5)
    with torch.no_grad():
        for m in net.modules():
            if isinstance(m, torch.nn.Conv1d):
                m.weight.add_(0.2 * torch.randn_like(m.weight))
    c = HashTextEncoder(8, 4).batch(["circle bounces"])
    rel = _fd_gradient_check(net, torch.randn(1, 3, 4, 4, 4), c, torch.randn(1, 3, 4, 4, 4), seed=1)
    assert rel < 1e-4
