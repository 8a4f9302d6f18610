import numpy as np
import pytest

from mbdect.unroll.mixer import (GN_EPS, PARAM_NAMES, MixerConfig, NonFiniteActivation, group_norm,
                                 init_params, mixer_backward, mixer_forward)

CFG = MixerConfig()


def naive_conv(x, w, b):
    """Direct zero-padded cross-correlation, x (C, H, W)."""
    O, C, k, _ = w.shape
    _, H, W = x.shape
    p = k // 2
    out = np.zeros((O, H, W))
    for o in range(O):
        for i in range(H):
            for j in range(W):
                acc = b[o]
                for c in range(C):
                    for u in range(k):
                        for v in range(k):
                            ii, jj = i + u - p, j + v - p
                            if 0 <= ii < H and 0 <= jj < W:
                                acc += w[o, c, u, v] * x[c, ii, jj]
                out[o, i, j] = acc
    return out


def naive_gn(x, gamma, beta, groups):
    out = np.empty_like(x)
    per = x.shape[0] // groups
    for g in range(groups):
        blk = x[g * per:(g + 1) * per]
        out[g * per:(g + 1) * per] = (blk - blk.mean()) / np.sqrt(blk.var() + GN_EPS)
    return out * gamma[:, None, None] + beta[:, None, None]


def naive_mixer(x, p):
    h = np.maximum(naive_gn(naive_conv(x, p["conv1.w"], p["conv1.b"]), p["gn1.gamma"], p["gn1.beta"], 4), 0)
    h = np.maximum(naive_gn(naive_conv(h, p["conv2.w"], p["conv2.b"]), p["gn2.gamma"], p["gn2.beta"], 4), 0)
    return naive_conv(h, p["conv3.w"], p["conv3.b"])


def random_params(seed):
    rng = np.random.default_rng(seed)
    p = init_params(CFG, rng, zero_final=False)
    for name in PARAM_NAMES:
        if not name.endswith(".w"):
            p[name] = p[name] + 0.3 * rng.normal(size=p[name].shape)
    return p


def test_zero_final_layer_gives_zero_output():
    p = init_params(CFG, np.random.default_rng(0))
    y, _ = mixer_forward(np.random.default_rng(1).normal(size=(2, 4, 8, 8)), p)
    assert y.shape == (2, 2, 8, 8) and not y.any()


def test_input_gradient_zero_for_identity_init():
    p = init_params(CFG, np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(4, 8, 8))
    _, tape = mixer_forward(x, p)
    gx, grads = mixer_backward(tape, np.ones((2, 8, 8)), p)
    assert not gx.any()
    assert grads["conv3.b"].any()


def test_group_norm_constant_channel():
    x = np.full((4, 1, 5, 5), 3.25)
    y, _ = group_norm(x, np.ones(4), np.zeros(4), 2)
    assert not y.any()


def test_matches_naive_oracle():
    p = random_params(3)
    x = np.random.default_rng(4).normal(size=(4, 8, 8))
    y, _ = mixer_forward(x, p)
    np.testing.assert_allclose(y, naive_mixer(x, p), atol=1e-12)


def test_batch_equals_single():
    p = random_params(3)
    x = np.random.default_rng(4).normal(size=(3, 4, 6, 7))
    yb, _ = mixer_forward(x, p)
    for b in range(3):
        np.testing.assert_allclose(yb[b], mixer_forward(x[b], p)[0], atol=1e-13)


def test_zero_output_gradient():
    p = random_params(5)
    _, tape = mixer_forward(np.random.default_rng(0).normal(size=(4, 8, 8)), p)
    gx, grads = mixer_backward(tape, np.zeros((2, 8, 8)), p)
    assert not gx.any() and not any(g.any() for g in grads.values())


def test_backward_shape_mismatch():
    p = random_params(5)
    _, tape = mixer_forward(np.zeros((4, 8, 8)), p)
    with pytest.raises(ValueError):
        mixer_backward(tape, np.zeros((2, 8, 7)), p)


def test_nonfinite_named():
    p = random_params(5)
    x = np.zeros((4, 8, 8))
    x[0, 2, 2] = np.nan
    with pytest.raises(NonFiniteActivation, match="conv1"):
        mixer_forward(x, p)


def test_finite_difference_spot_checks():
    rng = np.random.default_rng(11)
    p = random_params(7)
    x = rng.normal(size=(4, 8, 8))
    r = rng.normal(size=(2, 8, 8))

    def loss(params, inp):
        return float(np.sum(mixer_forward(inp, params)[0] * r))

    _, tape = mixer_forward(x, p)
    gx, grads = mixer_backward(tape, r, p)
    eps = 1e-6
    for name in PARAM_NAMES:
        for flat in rng.choice(p[name].size, size=min(3, p[name].size), replace=False):
            idx = np.unravel_index(flat, p[name].shape)
            hi, lo = {k: v.copy() for k, v in p.items()}, {k: v.copy() for k, v in p.items()}
            hi[name][idx] += eps
            lo[name][idx] -= eps
            fd = (loss(hi, x) - loss(lo, x)) / (2 * eps)
            assert grads[name][idx] == pytest.approx(fd, rel=1e-4, abs=1e-8), name
    v = rng.normal(size=x.shape)
    fd = (loss(p, x + eps * v) - loss(p, x - eps * v)) / (2 * eps)
    assert np.vdot(gx, v) == pytest.approx(fd, rel=1e-5)
