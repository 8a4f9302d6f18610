import numpy as np
import pytest

from mbdect import forward_model as fm
from mbdect import phantom as ph
from mbdect import recon_baseline as rb
from mbdect import unroll as U
from mbdect.projector import Geometry
from mbdect.scenario import default_model
from mbdect.unroll import network as N
from mbdect.unroll.mixer import PARAM_NAMES

GEOM = Geometry(24, 24, 0.4, 16, 16, 0.4)


@pytest.fixture(scope="module")
def tiny_model():
    return default_model(GEOM)


def make_samples(m, count, seed=0):
    out = []
    for k, spec in enumerate(ph.make_specs(seed, count)):
        truth = ph.rasterize(spec, m.geometry.n_x)
        d = fm.simulate(fm.predict(truth, m), 100 + k)
        out.append(U.Sample(d, rb.fbp_decompose(d, m), truth))
    return out


@pytest.fixture(scope="module")
def samples(tiny_model):
    return make_samples(tiny_model, 8)


def randomize_final(net, seed=0, scale=0.05):
    rng = np.random.default_rng(seed)
    for p in net.blocks:
        p["conv3.w"] = scale * rng.normal(size=p["conv3.w"].shape)
    return net


@pytest.mark.parametrize("n_blocks", [1, 4])
def test_identity_init_is_bit_exact(tiny_model, samples, n_blocks):
    net = U.make_net(tiny_model, n_blocks, seed=3)
    s = samples[0]
    out, inter = U.infer(s.d, s.c_init, net)
    assert out.tobytes() == s.c_init.tobytes()
    assert len(inter) == n_blocks


def test_single_block_infer_equals_block_apply(tiny_model, samples):
    net = randomize_final(U.make_net(tiny_model, 1, seed=1))
    s = samples[1]
    out, _ = U.infer(s.d, s.c_init, net)
    assert out.tobytes() == U.block_apply(s.c_init, s.d, net.blocks[0], net).tobytes()


def test_fixed_point_block(tiny_model):
    c = np.full((2, 16, 16), 0.3)
    d = fm.predict(c, tiny_model)
    net = U.make_net(tiny_model, 1)
    np.testing.assert_array_equal(U.block_apply(c, d, net.blocks[0], net), c)


def test_weight_schedule():
    np.testing.assert_array_equal(N.weight_schedule(0, 20, 4), [1, 1, 1, 1])
    np.testing.assert_allclose(N.weight_schedule(5, 20, 4), [0.5, 0.5, 0.5, 1])
    np.testing.assert_array_equal(N.weight_schedule(10, 20, 4), [0, 0, 0, 1])
    np.testing.assert_array_equal(N.weight_schedule(19, 20, 4), [0, 0, 0, 1])


def test_perfect_init_is_a_fixed_point(tiny_model, samples):
    # noise-free data and c_init == c_truth: DC step vanishes, identity blocks keep the truth
    data = [U.Sample(fm.predict(s.c_truth, tiny_model), s.c_truth.copy(), s.c_truth) for s in samples[:4]]
    net = U.make_net(tiny_model, 2)
    before = [N.copy_params(p) for p in net.blocks]
    _, hist = U.train(data, net, U.TrainConfig(epochs=2, batch_size=2))
    assert hist[0]["loss"] < 1e-9
    for p, q in zip(before, net.blocks):
        for name in PARAM_NAMES:
            assert np.abs(p[name] - q[name]).max() < 1e-6


def test_final_only_weights(tiny_model, samples):
    net = randomize_final(U.make_net(tiny_model, 3, seed=2))
    batch = samples[:3]
    total, blocks, grads = N.loss_and_grads(batch, net, [0.0, 0.0, 1.0])
    assert total == blocks[-1]
    # earlier blocks still receive gradient through the composition
    assert np.abs(grads[0]["conv3.w"]).max() > 0


def test_single_intermediate_weight_matches_direct_evaluation(tiny_model, samples):
    net = randomize_final(U.make_net(tiny_model, 3, seed=2))
    batch = samples[:3]
    total, _, _ = N.loss_and_grads(batch, net, [0.0, 1.0, 0.0])
    direct = np.mean([N.rms_loss(U.infer(s.d, s.c_init, net)[1][1][None], s.c_truth[None])[0][0] for s in batch])
    assert total == pytest.approx(direct, rel=1e-12)


def test_end_to_end_gradient_fd():
    m = default_model(Geometry(12, 12, 0.8, 8, 8, 0.8))
    batch = make_samples(m, 2, seed=4)
    for s in batch:
        s.c_init = s.c_init + 0.1  # keep away from the clamp
    net = randomize_final(U.make_net(m, 2, seed=5), scale=0.1)
    w = [0.3, 1.0]
    _, _, grads = N.loss_and_grads(batch, net, w)
    rng = np.random.default_rng(0)
    eps = 1e-6
    for k in range(2):
        for name in ("conv1.w", "gn2.gamma", "conv3.b"):
            idx = np.unravel_index(rng.integers(net.blocks[k][name].size), net.blocks[k][name].shape)
            vals = []
            for sgn in (1, -1):
                net.blocks[k][name][idx] += sgn * eps
                vals.append(N.loss_and_grads(batch, net, w)[0])
                net.blocks[k][name][idx] -= sgn * eps
            fd = (vals[0] - vals[1]) / (2 * eps)
            assert grads[k][name][idx] == pytest.approx(fd, rel=1e-4, abs=1e-9), (k, name)


def test_training_is_deterministic(tiny_model, samples):
    cfg = U.TrainConfig(epochs=2, learning_rate=0.05, batch_size=4, seed=9)
    h1 = U.train(samples, U.make_net(tiny_model, 2, seed=1), cfg)[1]
    h2 = U.train(samples, U.make_net(tiny_model, 2, seed=1), cfg)[1]
    assert h1 == h2


def test_training_smoke_halves_loss(tiny_model):
    data = make_samples(tiny_model, 32, seed=21)
    net = U.make_net(tiny_model, 2, seed=0)
    _, hist = U.train(data, net, U.TrainConfig(epochs=20, learning_rate=0.1, batch_size=4))
    assert hist[-1]["loss"] < 0.5 * hist[0]["loss"]


def test_pretrain_zero_iters_returns_init(tiny_model, samples):
    net = U.make_net(tiny_model, 2, seed=0)
    got = U.pretrain_first_block(samples, net, U.TrainConfig(pretrain_iters=0))
    for name in PARAM_NAMES:
        assert got[name].tobytes() == net.blocks[0][name].tobytes()


def test_pretrain_reduces_block_loss(tiny_model, samples):
    net = U.make_net(tiny_model, 1, seed=0)
    before = U.evaluate_losses(samples, net)[0]
    theta = U.pretrain_first_block(samples, net, U.TrainConfig(pretrain_iters=60, learning_rate=0.1))
    U.broadcast(net, theta)
    assert U.evaluate_losses(samples, net)[0] < before


def test_broadcast_repeats_one_block(tiny_model, samples):
    net = randomize_final(U.make_net(tiny_model, 3, seed=0))
    U.broadcast(net, net.blocks[0])
    s = samples[0]
    c = s.c_init
    for _ in range(3):
        c = U.block_apply(c, s.d, net.blocks[0], net)
    assert U.infer(s.d, s.c_init, net)[0].tobytes() == c.tobytes()


def test_save_load_roundtrip(tmp_path, tiny_model, samples):
    net = randomize_final(U.make_net(tiny_model, 2, seed=0))
    U.save_net(net, tmp_path / "net")
    back = U.load_net(tmp_path / "net", tiny_model)
    s = samples[0]
    assert U.infer(s.d, s.c_init, back)[0].tobytes() == U.infer(s.d, s.c_init, net)[0].tobytes()
    assert N.config_hash(back) == N.config_hash(net)


def test_empty_dataset(tiny_model):
    with pytest.raises(ValueError):
        U.train([], U.make_net(tiny_model, 1))
