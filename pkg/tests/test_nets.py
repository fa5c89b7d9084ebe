import numpy as np
import pytest

import crlopf.autodiff as ad
from crlopf.env import ScenarioConfig, generate_scenario, initial_state
from crlopf.nets import (
    ActorNet, CriticNet, NetConfig, PredictorNet, clipped_target, critic_state_vector, soft_update,
)

SMALL = NetConfig(horizon=2, filter_taps=2, temporal_channels=2, graph_features=2, hidden=6, critic_hidden=6)


def random_features(case, rng, T, batch=None):
    shape = (case.n_bus, T) if batch is None else (batch, case.n_bus, T)
    v = (1 + 0.05 * rng.standard_normal(shape)) * np.exp(1j * 0.1 * rng.standard_normal(shape))
    soc = np.zeros(shape)
    soc[..., case.bess_buses, :] = rng.uniform(0.2, 0.8, size=soc[..., case.bess_buses, :].shape)
    return np.concatenate([v, soc.astype(complex)], axis=-1)


@pytest.fixture(scope="module")
def state14(ieee14):
    sc = generate_scenario(ieee14, ScenarioConfig(), 0)
    return initial_state(ieee14, sc, 4)


# --- actor ---

def test_zero_actor_outputs_half(ieee14, state14):
    actor = ActorNet(ieee14, NetConfig())
    actor.zero_()
    out = actor.act(state14)
    assert out.shape == (4, ieee14.action_dim)
    np.testing.assert_allclose(out, 0.5)


def test_actor_deterministic(ieee14, state14):
    a1 = ActorNet(ieee14, NetConfig(), seed=3).act(state14)
    a2 = ActorNet(ieee14, NetConfig(), seed=3).act(state14)
    np.testing.assert_array_equal(a1, a2)


def test_actor_output_strictly_inside_unit_interval(ieee14, rng):
    actor = ActorNet(ieee14, NetConfig(), seed=5)
    out = actor(random_features(ieee14, rng, 4, batch=16)).data
    assert out.min() > 0 and out.max() < 1


def test_actor_sensitive_to_soc(ieee14, state14):
    actor = ActorNet(ieee14, NetConfig(), seed=4)
    x = state14.features()
    base = actor(x).data
    bumped = x.copy()
    bumped[ieee14.bess_buses, 4:] += 1e-3
    assert np.abs(actor(bumped).data - base).max() > 0


def test_actor_rejects_wrong_shape(ieee14):
    actor = ActorNet(ieee14, NetConfig())
    with pytest.raises(ValueError):
        actor(np.zeros((ieee14.n_bus, 5), dtype=complex))


def test_parameter_counts_positive(ieee14):
    for net in (ActorNet(ieee14, NetConfig()), PredictorNet(ieee14, NetConfig()), CriticNet(ieee14, NetConfig())):
        assert 0 < net.parameter_count() < 10**7


# --- predictor ---

def test_zero_predictor_gives_midpoint(ieee14, state14):
    pred = PredictorNet(ieee14, NetConfig())
    pred.zero_()
    mag, v = pred.forward(state14.features())
    mid = (ieee14.v_min + ieee14.v_max) / 2
    mid[ieee14.slack_bus] = 1.0
    np.testing.assert_allclose(mag.data[0], np.tile(mid, (4, 1)))
    np.testing.assert_allclose(v.data[0], np.tile(mid, (4, 1)))


def test_predictor_within_bounds(ieee14, rng):
    pred = PredictorNet(ieee14, NetConfig(), seed=9)
    for scale in (1.0, 50.0):
        for p in pred.params.values():
            p.data *= scale
        mag = pred(random_features(ieee14, rng, 4, batch=8)).data
        assert np.all(mag >= ieee14.v_min - 1e-12) and np.all(mag <= ieee14.v_max + 1e-12)


def test_predictor_regression_smoke(ieee14, rng):
    pred = PredictorNet(ieee14, NetConfig(), seed=2)
    x = random_features(ieee14, rng, 4, batch=32)
    target = rng.uniform(0.96, 1.04, size=(32, 4, ieee14.n_bus))
    opt = ad.Adam(pred.params, lr=1e-4)
    maes = []
    for _ in range(100):
        opt.zero_grad()
        err = pred(x) - target
        maes.append(float(np.abs(err.data).mean()))
        ad.mean(ad.square_norm(err)).backward()
        opt.step()
    assert np.all(np.diff(maes) <= 0)
    assert maes[-1] < maes[0]


# --- critic ---

def test_zero_critic_outputs_zero(ieee14, rng):
    critic = CriticNet(ieee14, NetConfig())
    critic.zero_()
    feats = random_features(ieee14, rng, 4, batch=3)
    q = critic(critic_state_vector(feats, ieee14), rng.uniform(size=(3, 4, ieee14.action_dim)))
    np.testing.assert_array_equal(q.data, 0.0)


def test_critic_sensitive_to_action(ieee14, rng):
    critic = CriticNet(ieee14, NetConfig(), seed=1)
    sv = critic_state_vector(random_features(ieee14, rng, 4, batch=1), ieee14)
    a = rng.uniform(size=(1, 4, ieee14.action_dim))
    blk = ad.Tensor(a, requires_grad=True)
    critic(sv, blk).sum().backward()
    assert np.abs(blk.grad).max() > 0
    a2 = a.copy()
    a2[0, 0, 0] += 1e-3
    assert critic(sv, a2).data[0] != critic(sv, a).data[0]


def test_critic_batch_consistency(ieee14, rng):
    critic = CriticNet(ieee14, NetConfig(), seed=1)
    sv = critic_state_vector(random_features(ieee14, rng, 4, batch=5), ieee14)
    a = rng.uniform(size=(5, 4, ieee14.action_dim))
    batched = critic(sv, a).data
    single = [critic(sv[i:i + 1], a[i:i + 1]).data[0] for i in range(5)]
    np.testing.assert_allclose(batched, single, rtol=1e-12, atol=1e-12)


def test_critic_rejects_wrong_block(ieee14, rng):
    critic = CriticNet(ieee14, NetConfig())
    sv = critic_state_vector(random_features(ieee14, rng, 4, batch=2), ieee14)
    with pytest.raises(ValueError):
        critic(sv, rng.uniform(size=(2, 3, ieee14.action_dim)))


# --- targets ---

@pytest.mark.parametrize("r,gamma,q1,q2,expected", [
    (1.0, 0.99, 2.0, 3.0, 2.98),
    (1.0, 0.0, 2.0, 3.0, 1.0),
    (-0.5, 0.9, 4.0, 4.0, -0.5 + 0.9 * 4.0),
    (0.0, 0.5, -1.0, 2.0, -0.5),
])
def test_clipped_target_table(r, gamma, q1, q2, expected):
    assert clipped_target(r, gamma, q1, q2) == pytest.approx(expected, abs=1e-12)


def test_clipped_target_terminal_mask():
    np.testing.assert_allclose(clipped_target([1.0, 1.0], 0.9, [5.0, 5.0], [6.0, 6.0], [1.0, 0.0]), [5.5, 1.0])


def test_clipped_target_bounds(rng):
    r, q1, q2 = rng.standard_normal((3, 100))
    y = clipped_target(r, 0.99, q1, q2)
    assert np.all(y <= r + 0.99 * np.maximum(q1, q2) + 1e-12)
    np.testing.assert_allclose(y, r + 0.99 * np.minimum(q1, q2))


def test_soft_update_examples(two_bus):
    online = CriticNet(two_bus, SMALL, seed=0)
    target = online.copy()
    for p in target.params.values():
        p.data[...] = 0
    for p in online.params.values():
        p.data[...] = 1
    soft_update(target, online, 0.005)
    for p in target.params.values():
        np.testing.assert_allclose(p.data, 0.005)
    snapshot = {k: p.data.copy() for k, p in target.params.items()}
    soft_update(target, online, 0.0)
    for k, p in target.params.items():
        np.testing.assert_array_equal(p.data, snapshot[k])
    soft_update(target, online, 1.0)
    for k, p in target.params.items():
        np.testing.assert_array_equal(p.data, online.params[k].data)


def test_soft_update_contraction(two_bus):
    online = CriticNet(two_bus, SMALL, seed=0)
    target = CriticNet(two_bus, SMALL, seed=1)

    def dist():
        return np.sqrt(sum(np.sum((target.params[k].data - online.params[k].data) ** 2) for k in online.params))

    before = dist()
    soft_update(target, online, 0.3)
    assert dist() == pytest.approx(0.7 * before, rel=1e-12)


def test_soft_update_shape_mismatch(two_bus, ieee14):
    with pytest.raises(ValueError):
        soft_update(CriticNet(two_bus, SMALL), CriticNet(ieee14, SMALL), 0.5)


def test_target_copy_is_independent(two_bus):
    online = CriticNet(two_bus, SMALL, seed=0)
    target = online.copy()
    online.params["W0"].data[...] += 1
    assert not np.array_equal(online.params["W0"].data, target.params["W0"].data)


# --- end-to-end gradient checks ---

def jitter(net, rng):
    """Move zero-initialized biases off the ReLU kinks, where finite differences are meaningless."""
    for p in net.params.values():
        p.data = p.data + 0.1 * rng.standard_normal(p.shape) * (1 if p.data.dtype.kind == "f" else 1 + 1j)

@pytest.mark.parametrize("seed", range(20))
def test_actor_gradcheck(two_bus, seed):
    rng = np.random.default_rng(seed)
    actor = ActorNet(two_bus, SMALL, seed=seed)
    jitter(actor, rng)
    x = random_features(two_bus, rng, 2, batch=2)
    w = rng.standard_normal((2, 2, two_bus.action_dim))
    errs = ad.gradcheck(lambda: ad.tsum(actor(x) * w), actor.params)
    assert max(errs.values()) < 1e-5, errs


@pytest.mark.parametrize("seed", range(20))
def test_predictor_gradcheck(two_bus, seed):
    rng = np.random.default_rng(seed)
    pred = PredictorNet(two_bus, SMALL, seed=seed)
    jitter(pred, rng)
    x = random_features(two_bus, rng, 2, batch=2)
    w = rng.standard_normal((2, 2, two_bus.n_bus)) + 1j * rng.standard_normal((2, 2, two_bus.n_bus))

    def loss():
        mag, v = pred.forward(x)
        return ad.tsum(mag * w.real) + ad.tsum(ad.real_part(v * w.imag)) + ad.tsum(ad.square_norm(v))

    errs = ad.gradcheck(loss, pred.params)
    assert max(errs.values()) < 1e-5, errs


@pytest.mark.parametrize("seed", range(20))
def test_critic_gradcheck(two_bus, seed):
    rng = np.random.default_rng(seed)
    critic = CriticNet(two_bus, SMALL, seed=seed)
    jitter(critic, rng)
    sv = critic_state_vector(random_features(two_bus, rng, 2, batch=3), two_bus)
    blk = ad.Tensor(rng.uniform(size=(3, 2, two_bus.action_dim)), requires_grad=True)
    errs = ad.gradcheck(lambda: ad.tsum(ad.square_norm(critic(sv, blk))), {**critic.params, "block": blk})
    assert max(errs.values()) < 1e-5, errs
