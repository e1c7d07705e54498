import numpy as np
import pytest

from quadfly import dynamics as dyn
from quadfly.env import (
    ABLATIONS,
    Ablation,
    CurriculumSchedule,
    EnvConfig,
    InitialStateDistribution,
    QuadEnv,
    RewardWeights,
    action_to_rpm,
    curriculum_update,
    observe_actor,
    observe_critic,
    reward,
    rpm_to_action,
    sample_disturbance,
    sample_initial_state,
    terminate,
)

from conftest import random_states


@pytest.fixture
def cfg():
    return EnvConfig()


# -- initial states and disturbances -----------------------------------------------


def test_zero_bounds_give_level_state_at_origin():
    dist = InitialStateDistribution(0.0, 0.0, 0.0, 0.0, (1500.0, 1500.0))
    s = sample_initial_state(dist, np.random.default_rng(0))
    np.testing.assert_array_equal(s, dyn.make_state(rpm=(1500.0,) * 4))


def test_initial_state_bounds_and_means():
    dist = InitialStateDistribution(0.2, np.pi / 4, 0.5, 1.0, (1000.0, 2000.0))
    rng = np.random.default_rng(1)
    n = 100_000
    S = np.array([sample_initial_state(dist, rng) for _ in range(n)])
    for sl, bound in ((dyn.POS, 0.2), (dyn.VEL, 0.5), (dyn.ANG_VEL, 1.0)):
        block = S[:, sl]
        assert np.abs(block).max() <= bound
        sigma = bound / np.sqrt(3)  # std of U(-b, b)
        assert np.all(np.abs(block.mean(axis=0)) < 3 * sigma / np.sqrt(n))
    angle = 2 * np.arccos(np.clip(np.abs(S[:, 3]), 0, 1))
    assert angle.max() <= np.pi / 4 + 1e-12
    assert S[:, dyn.RPM].min() >= 1000.0 and S[:, dyn.RPM].max() <= 2000.0
    np.testing.assert_allclose(np.linalg.norm(S[:, dyn.QUAT], axis=1), 1.0, atol=1e-12)


def test_initial_state_seed_determinism():
    dist = InitialStateDistribution()
    a = sample_initial_state(dist, np.random.default_rng(7))
    b = sample_initial_state(dist, np.random.default_rng(7))
    assert np.array_equal(a, b)


def test_disturbance_bounds():
    rng = np.random.default_rng(2)
    np.testing.assert_array_equal(sample_disturbance(0.0, 0.0, rng), np.zeros(6))
    D = np.array([sample_disturbance(0.03, 2e-5, rng) for _ in range(10_000)])
    assert np.abs(D[:, :3]).max() <= 0.03
    assert np.abs(D[:, 3:]).max() <= 2e-5
    np.testing.assert_array_equal(sample_disturbance(0.03, 2e-5, rng, enabled=False), np.zeros(6))


# -- observations -------------------------------------------------------------------


def test_actor_observation_noise_free(params):
    rng = np.random.default_rng(3)
    s = random_states(rng, params, 1)[0]
    o = observe_actor(s, np.zeros((1, 0, 4)))
    assert o.shape == (18,)
    want = np.concatenate([s[dyn.POS], dyn.quat_to_rotmat(s[dyn.QUAT]).ravel(), s[dyn.VEL], s[dyn.ANG_VEL]])
    np.testing.assert_array_equal(o, want)


def test_actor_observation_at_hover(params):
    w, s = dyn.hover_equilibrium(params)
    hover_a = rpm_to_action(params, w)
    H = np.full((1, 3, 4), hover_a)
    o = observe_actor(s, H)
    want = np.concatenate([np.zeros(3), np.eye(3).ravel(), np.zeros(6), np.full(12, hover_a)])
    np.testing.assert_array_equal(o, want)


def test_actor_observation_noise_is_unbiased(params):
    rng = np.random.default_rng(4)
    s = random_states(rng, params, 1)[0]
    sigma = (0.01, 0.02, 0.03, 0.1)
    n = 10_000
    O = np.array([observe_actor(s, np.zeros((1, 2, 4)), sigma, rng) for _ in range(n)])
    truth = observe_actor(s, np.zeros((1, 2, 4)))
    scale = np.concatenate([np.full(3, 0.01), np.full(9, 0.02), np.full(3, 0.03), np.full(3, 0.1)])
    assert np.all(np.abs(O[:, :18].mean(axis=0) - truth[:18]) < 4 * scale / np.sqrt(n))
    # history is never perturbed
    assert np.all(O[:, 18:] == 0.0)


def test_critic_observation_at_hover(params):
    w, s = dyn.hover_equilibrium(params)
    o = observe_critic(s, np.zeros(6))
    want = np.concatenate([np.zeros(3), np.eye(3).ravel(), np.zeros(6), np.full(4, w), np.zeros(6)])
    np.testing.assert_array_equal(o, want)


def test_critic_observation_is_concatenation(params):
    rng = np.random.default_rng(5)
    S = random_states(rng, params, 20)
    D = rng.normal(size=(20, 6))
    O = observe_critic(S, D)
    assert O.shape == (20, 28)
    for i in range(20):
        want = np.concatenate([S[i, :3], dyn.quat_to_rotmat(S[i, 3:7]).ravel(), S[i, 7:10], S[i, 10:13], S[i, 13:17], D[i]])
        np.testing.assert_array_equal(O[i], want)


@pytest.mark.parametrize("nh", [0, 1, 4, 32])
def test_observation_dimensions(nh):
    cfg = EnvConfig(history_length=nh)
    env = QuadEnv(cfg, 2)
    obs = env.reset([0, 1])
    assert obs.shape == (2, 18 + 4 * nh)
    assert env.critic_obs(obs).shape == (2, 28)
    res = env.step(np.zeros((2, 4)))
    assert res.obs.shape == (2, 18 + 4 * nh)
    assert res.critic_obs.shape == (2, 28)


def test_symmetric_critic_sees_actor_observation():
    cfg = EnvConfig(ablation=Ablation.without("Asymmetric Actor-Critic"))
    env = QuadEnv(cfg, 1)
    obs = env.reset([0])
    assert np.array_equal(env.critic_obs(obs), obs)
    assert cfg.critic_obs_dim == cfg.actor_obs_dim


# -- reward ---------------------------------------------------------------------------


W = RewardWeights(2.0, 3.0, 0.5, 0.1, 0.7, 0.3, 1.25)


def test_reward_at_target_is_survival_bonus():
    s = dyn.make_state()
    assert reward(W, s, np.full(4, W.action_baseline)) == W.survival


def test_reward_upside_down_costs_orientation_weight():
    for axis in np.eye(3):
        s = dyn.make_state(q=(0.0, *axis))
        r = reward(W, s, np.full(4, W.action_baseline))
        assert r == pytest.approx(W.survival - W.orientation, abs=1e-15)


def test_reward_term_by_term(params):
    rng = np.random.default_rng(6)
    S = random_states(rng, params, 100)
    A = rng.uniform(-1, 1, (100, 4))
    got = reward(W, S, A)
    for i in range(100):
        p, q, v, om = S[i, :3], S[i, 3:7], S[i, 7:10], S[i, 10:13]
        want = (W.survival - W.position * sum(x * x for x in p) - W.orientation * (1 - q[0] ** 2)
                - W.linear_velocity * sum(x * x for x in v) - W.angular_velocity * sum(x * x for x in om)
                - W.action * sum((a - W.action_baseline) ** 2 for a in A[i]))
        assert got[i] == pytest.approx(want, rel=1e-12, abs=1e-12)


def test_reward_invariant_to_quaternion_sign_and_bounded(params):
    rng = np.random.default_rng(7)
    S = random_states(rng, params, 100)
    A = rng.uniform(-1, 1, (100, 4))
    neg = S.copy()
    neg[:, dyn.QUAT] *= -1
    assert np.array_equal(reward(W, S, A), reward(W, neg, A))
    assert np.all(reward(W, S, A) <= W.survival)


def test_reward_batch_equals_single(params):
    rng = np.random.default_rng(8)
    S = random_states(rng, params, 30)
    A = rng.uniform(-1, 1, (30, 4))
    batch = reward(W, S, A)
    for i in range(30):
        assert batch[i] == reward(W, S[i], A[i])


# -- actions and termination -----------------------------------------------------------


def test_action_mapping(params):
    np.testing.assert_array_equal(action_to_rpm(params, -np.ones(4)), np.full(4, params.rpm_min))
    np.testing.assert_array_equal(action_to_rpm(params, np.ones(4)), np.full(4, params.rpm_max))
    np.testing.assert_allclose(action_to_rpm(params, np.zeros(4)), np.full(4, (params.rpm_min + params.rpm_max) / 2))
    np.testing.assert_array_equal(action_to_rpm(params, np.full(4, 3.0)), np.full(4, params.rpm_max))


def test_termination(cfg):
    assert not terminate(dyn.make_state(), cfg)
    assert terminate(dyn.make_state(p=(cfg.position_limit + 1e-9, 0, 0)), cfg)
    assert not terminate(dyn.make_state(p=(0, -cfg.position_limit, 0)), cfg)
    assert terminate(dyn.make_state(v=(0, 0, cfg.velocity_limit + 1e-6)), cfg)
    assert terminate(dyn.make_state(omega=(cfg.angular_velocity_limit + 1e-6, 0, 0)), cfg)
    s = dyn.make_state()
    s[0] = np.nan
    assert terminate(s, cfg)


# -- curriculum ------------------------------------------------------------------------------


def test_curriculum_closed_form_and_clamp():
    sched = CurriculumSchedule(
        init=RewardWeights(1.0, 0.3, 0.1, 0.01, 0.01, 0.3, 2.0),
        target=RewardWeights(1e6, 1e6, 1e6, 1e6, 1e6, 0.3, 2.0),
        factors=RewardWeights(1.1, 1.3, 1.7, 1.9, 2.3, 1.0, 1.0),
        interval=100,
    )
    for k in range(1, 12):
        w = curriculum_update(sched, k * 100)
        assert w.position == 1.0 * 1.1**k
        assert w.orientation == 0.3 * 1.3**k
        assert w.action == 0.01 * 2.3**k
    # between boundaries the weights stay put
    assert curriculum_update(sched, 250) == curriculum_update(sched, 200)
    big = curriculum_update(sched, 10**6)
    assert big.position == 1e6 and big.action == 1e6


def test_curriculum_decreasing_weights_clamp_from_above():
    sched = CurriculumSchedule(RewardWeights(position=4.0), RewardWeights(position=1.0),
                               RewardWeights(position=0.5), interval=10)
    assert curriculum_update(sched, 10).position == 2.0
    assert curriculum_update(sched, 30).position == 1.0


def test_curriculum_unit_factor_and_disabled():
    cfg = EnvConfig()
    c = cfg.curriculum
    flat = CurriculumSchedule(c.init, c.target, RewardWeights(1, 1, 1, 1, 1, 1, 1), c.interval)
    assert curriculum_update(flat, 5 * c.interval) == c.init
    assert curriculum_update(c, 0, enabled=False) == c.target
    assert EnvConfig(ablation=Ablation.without("Curriculum")).initial_weights() == c.target


def test_default_curriculum_is_monotone():
    c = EnvConfig().curriculum
    prev = c.init
    for k in range(1, 20):
        w = c.weights_after(k)
        for name in RewardWeights.PENALTIES:
            lo, hi = sorted((getattr(c.init, name), getattr(c.target, name)))
            assert lo <= getattr(w, name) <= hi
            assert abs(getattr(w, name) - getattr(c.target, name)) <= abs(getattr(prev, name) - getattr(c.target, name))
        prev = w
    assert c.weights_after(50) == c.target


# -- environment stepping --------------------------------------------------------------------


def _quiet(cfg):
    return EnvConfig(params=cfg.params, ablation=Ablation(observation_noise=False, disturbances=False))


def test_hover_step_gives_survival_reward(cfg):
    env = QuadEnv(_quiet(cfg), 1)
    w, s = dyn.hover_equilibrium(cfg.params)
    env.reset([0], [s])
    env.weights = RewardWeights(1, 1, 1, 1, 1, float(rpm_to_action(cfg.params, w)), 1.0)
    a = np.full((1, 4), rpm_to_action(cfg.params, w))
    res = env.step(a)
    assert not res.done[0]
    assert res.reward[0] == pytest.approx(1.0, abs=1e-12)


def test_no_rotor_delay_sets_speed_immediately(cfg):
    c = EnvConfig(ablation=Ablation.without("Rotor Delay"))
    env = QuadEnv(c, 1)
    env.reset([0])
    a = np.array([[0.1, 0.2, 0.3, 0.4]])
    res = env.step(a)
    np.testing.assert_allclose(res.states[0, dyn.RPM], action_to_rpm(c.params, a[0]), rtol=1e-15)


def test_history_ring_most_recent_first():
    env = QuadEnv(EnvConfig(history_length=3), 1)
    env.reset([0])
    acts = [np.full((1, 4), x) for x in (0.1, 0.2, 0.3, 0.4)]
    for a in acts:
        res = env.step(a)
    H = res.obs[0, 18:].reshape(3, 4)
    np.testing.assert_array_equal(H[:, 0], [0.4, 0.3, 0.2])


def test_truncation_at_step_limit():
    c = _quiet(EnvConfig())
    c.max_steps = 5
    env = QuadEnv(c, 1)
    w, s = dyn.hover_equilibrium(c.params)
    env.reset([0], [s])
    a = np.full((1, 4), rpm_to_action(c.params, w))
    flags = [env.step(a) for _ in range(5)]
    assert [bool(f.truncated[0]) for f in flags] == [False] * 4 + [True]
    assert not any(bool(f.done[0]) for f in flags)


def test_episode_replay_is_deterministic():
    def run():
        env = QuadEnv(EnvConfig(), 1)
        out = [env.reset([42])]
        rng = np.random.default_rng(0)
        for _ in range(100):
            res = env.step(rng.uniform(0, 0.6, (1, 4)))
            out += [res.obs, res.reward, res.states]
            if res.done[0]:
                break
        return out

    a, b = run(), run()
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_slots_are_independent_of_batch_size():
    c = EnvConfig()
    big = QuadEnv(c, 3)
    big.reset([10, 11, 12])
    small = QuadEnv(c, 1)
    small.reset([11])
    rng = np.random.default_rng(0)
    for _ in range(20):
        A = rng.uniform(0, 0.6, (3, 4))
        rb = big.step(A)
        rs = small.step(A[1:2])
        assert np.array_equal(rb.obs[1], rs.obs[0])
        assert np.array_equal(rb.states[1], rs.states[0])


def test_noise_switch_irrelevant_when_sigma_zero():
    base = dict(noise_position=0.0, noise_linear_velocity=0.0, noise_angular_velocity=0.0)
    on = EnvConfig(**base)
    off = EnvConfig(**base, ablation=Ablation.without("Observation Noise"))
    e1, e2 = QuadEnv(on, 1), QuadEnv(off, 1)
    o1, o2 = e1.reset([3]), e2.reset([3])
    assert np.array_equal(o1, o2)
    for _ in range(30):
        a = np.full((1, 4), 0.3)
        r1, r2 = e1.step(a), e2.step(a)
        assert np.array_equal(r1.obs, r2.obs) and np.array_equal(r1.states, r2.states)


def test_ablation_rows():
    assert len(ABLATIONS) == 10
    with pytest.raises(KeyError, match="valid"):
        Ablation.without("Nonsense")
    ab = Ablation.without("AAC & Curriculum")
    assert not ab.asymmetric_critic and not ab.curriculum and ab.rotor_delay


def test_deployment_restores_physics():
    c = EnvConfig(ablation=Ablation(rotor_delay=False, observation_noise=False, action_history=False))
    d = c.deployment()
    assert d.ablation.rotor_delay and d.ablation.observation_noise and d.ablation.disturbances
    assert not d.ablation.action_history


def test_env_config_json_round_trip(tmp_path):
    c = EnvConfig(history_length=3, ablation=Ablation.without("Curriculum"))
    c.save(tmp_path / "env.json")
    loaded = EnvConfig.load(tmp_path / "env.json")
    assert loaded.to_dict() == c.to_dict()
    with pytest.raises(ValueError):
        EnvConfig.from_dict({"bogus": 1})
