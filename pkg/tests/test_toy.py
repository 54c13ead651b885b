import math

import numpy as np
import pytest

from pixelact.toy import (
    CausalityProbe,
    ToyEnvConfig,
    ToyNet,
    ToyRunConfig,
    causality_metric,
    final_mean_c,
    generate_toy_dataset,
    run_toy_experiment,
    sgd_step,
)


def test_label_equals_obstacle_and_first_brake_light_off():
    rng = np.random.default_rng(0)
    first = True
    for obs, label in generate_toy_dataset(ToyEnvConfig(), 2000, rng):
        assert label == obs[0]
        assert obs.shape == (5,)
        assert np.all((obs[2:] >= 0) & (obs[2:] <= 1))
        if first:
            assert obs[1] == 0.0
            first = False


def test_brake_light_label_correlation():
    rng = np.random.default_rng(1)
    pairs = np.array([(obs[1], y) for obs, y in
                      generate_toy_dataset(ToyEnvConfig(), 100_000, rng)])
    corr = np.corrcoef(pairs[:, 0], pairs[:, 1])[0, 1]
    assert corr > 0.5


def test_linear_one_step_analytic_update():
    net = ToyNet(weights=[np.zeros((1, 5, 1))], biases=[np.zeros((1, 1))])
    x = np.zeros(5)
    sgd_step(net, (x, 1.0), lr=0.1)
    # p = 0.5 at zero weights, dBCE/db = p - y = -0.5, so b -> +0.05
    assert abs(net.biases[0][0, 0] - 0.05) < 1e-12


def test_zero_lr_leaves_net_unchanged():
    rng = np.random.default_rng(2)
    net = ToyNet.create(2, 8, rng)
    before = [w.copy() for w in net.weights] + [b.copy() for b in net.biases]
    sgd_step(net, (rng.uniform(size=5), 1.0), lr=0.0)
    after = net.weights + net.biases
    for a, b in zip(before, after):
        assert np.array_equal(a, b)


def _bce(net, x, y):
    p = float(net.predict(x)[0])
    return -(y * math.log(p) + (1 - y) * math.log(1 - p))


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    h = 1e-4
    for depth in (0, 1, 2, 3):
        for trial in range(25):
            net = ToyNet.create(depth, 6, rng)
            x = rng.uniform(size=5)
            y = float(rng.integers(0, 2))
            grad_w, grad_b = net.gradients(x[None, :].repeat(1, axis=0), y)
            for params, grads in ((net.weights, grad_w), (net.biases, grad_b)):
                for arr, g in zip(params, grads):
                    flat = arr.reshape(-1)
                    gflat = g.reshape(-1)
                    idx = rng.integers(0, flat.size, size=min(5, flat.size))
                    mid = _bce(net, x, y)
                    for i in idx:
                        orig = flat[i]
                        flat[i] = orig + h
                        up = _bce(net, x, y)
                        flat[i] = orig - h
                        down = _bce(net, x, y)
                        flat[i] = orig
                        fd = (up - down) / (2 * h)
                        # a ReLU kink inside the stencil makes the FD oracle
                        # itself invalid; one-sided slopes disagree there
                        fwd, bwd = (up - mid) / h, (mid - down) / h
                        if abs(fwd - bwd) > 1e-3 * max(abs(fd), 1.0):
                            continue
                        denom = max(abs(fd), abs(gflat[i]), 1e-6)
                        assert abs(fd - gflat[i]) / denom < 1e-5


def test_causality_metric_direct_formula():
    # depth-0 net engineered so p(s_o) = 0.9, p(s_b) = 0.1 for any noise
    w = np.zeros((1, 5, 1))
    logit = math.log(9.0)
    w[0, 0, 0] = logit  # obstacle weight
    w[0, 1, 0] = -logit  # brake-light weight
    net = ToyNet(weights=[w], biases=[np.full((1, 1), -0.0)])
    # s_o: z = logit -> p = 0.9 ; s_b: z = -logit -> p = 0.1
    c = causality_metric(net, CausalityProbe(), np.random.default_rng(0))
    assert abs(c[0] - math.log(9.0)) < 1e-9
    assert abs(c[0] - 2.1972) < 1e-3


def test_identical_responses_give_zero_c():
    w = np.zeros((1, 5, 1))
    w[0, 2, 0] = 1.7  # responds only to noise
    net = ToyNet(weights=[w], biases=[np.zeros((1, 1))])
    c = causality_metric(net, CausalityProbe(), np.random.default_rng(0))
    assert c[0] == 0.0


def test_random_init_c_near_zero_over_seeds():
    rng = np.random.default_rng(4)
    net = ToyNet.create(2, 32, rng, n_nets=20)
    c = causality_metric(net, CausalityProbe(), np.random.default_rng(5))
    assert abs(c.mean()) < 0.3


def test_doubling_noise_draws_stable_for_trained_net():
    rng = np.random.default_rng(6)
    cfg = ToyRunConfig(depths=(2,), steps=20_000, n_seeds=1, eval_every=20_000)
    net = ToyNet.create(2, 32, rng)
    from pixelact.toy import ToySimulator
    sim = ToySimulator(ToyEnvConfig(), 1, rng)
    for _ in range(20_000):
        obs, label = sim.step()
        sgd_step(net, (obs, label), 0.1)
    c1 = causality_metric(net, CausalityProbe(n_noise_draws=256), np.random.default_rng(7))
    c2 = causality_metric(net, CausalityProbe(n_noise_draws=512), np.random.default_rng(8))
    assert abs(c2[0] - c1[0]) < 0.05 * max(abs(c1[0]), 1.0)


def test_zero_steps_emits_only_init_point():
    rows = run_toy_experiment(ToyRunConfig(depths=(0, 1), steps=0, n_seeds=2))
    assert {r[2] for r in rows} == {0}
    assert len(rows) == 4


def test_experiment_deterministic():
    cfg = ToyRunConfig(depths=(1,), steps=2000, n_seeds=2, eval_every=500)
    assert run_toy_experiment(cfg) == run_toy_experiment(cfg)


def test_depth_ordering_short_run():
    # scaled-down version of the full experiment: deeper nets are more causal
    cfg = ToyRunConfig(depths=(1, 3), steps=30_000, n_seeds=3)
    means = final_mean_c(run_toy_experiment(cfg))
    assert means[3] > means[1]


def test_invalid_configs_rejected():
    with pytest.raises(ValueError):
        ToyEnvConfig(obstacle_spawn_prob=0.0)
    with pytest.raises(ValueError):
        ToyEnvConfig(persistence_min=5, persistence_max=2)
    with pytest.raises(ValueError):
        list(generate_toy_dataset(ToyEnvConfig(), 0, np.random.default_rng(0)))
    with pytest.raises(ValueError):
        run_toy_experiment(ToyRunConfig(depths=()))
