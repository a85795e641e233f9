from dataclasses import replace

import numpy as np
import pytest

from hidden_physics import autodiff as ad
from hidden_physics.dynamics import PRESETS, Trajectory, integrate_reference
from hidden_physics.errors import ArgumentError, ConfigError, TrainingDivergedError
from hidden_physics.features import CandidateMap
from hidden_physics.scaling import ScalingSpec, fit_scaling, nondimensionalize
from hidden_physics.training import (
    AdamMoments, LossBreakdown, TrainingConfig, adam_step, data_loss, equation_loss,
    loss_and_grads, preset_config, train,
)


def short(system="type-a", alpha=None, steps=60, **kw):
    return replace(preset_config(system, alpha), phases=((steps, 1e-3),), **kw)


# -- data and equation losses ---------------------------------------------------

def test_data_loss_zero_when_exact():
    y = np.random.default_rng(0).standard_normal((5, 2))
    per, total = data_loss(y, y, (1, 1))
    assert np.all(per == 0) and total == 0


def test_data_loss_ignores_masked_column():
    rng = np.random.default_rng(0)
    y, p = rng.standard_normal((5, 2)), rng.standard_normal((5, 2))
    _, before = data_loss(p, y, (1, 0))
    p[:, 1] += 100.0
    _, after = data_loss(p, y, (1, 0))
    assert before == after


def test_data_loss_constant_offset():
    y = np.random.default_rng(0).standard_normal((7, 2))
    per, total = data_loss(y + 0.1, y, (1, 1))
    np.testing.assert_allclose(per, [0.01, 0.01], rtol=1e-12)
    assert total == pytest.approx(0.02, rel=1e-12)


def test_data_loss_rejects_empty_batch():
    with pytest.raises(ArgumentError):
        data_loss(np.zeros((0, 2)), np.zeros((0, 2)), (1, 1))


def affine_state_net(w, b):
    return ad.MlpNetwork((1, len(w)), "identity", (np.array([w], dtype=float),),
                         (np.array(b, dtype=float),))


def constant_dyn_net(values):
    k = len(values)
    return ad.MlpNetwork((k, k), "identity", (np.zeros((k, k)),), (np.array(values, dtype=float),))


def test_equation_loss_exact_residual():
    w = [0.4, -2.0]
    per, total = equation_loss(affine_state_net(w, [1.0, 0.0]), constant_dyn_net(w),
                               CandidateMap("identity", 2), np.linspace(0, 5, 9)[:, None])
    assert np.all(per == 0) and total == 0


def test_equation_loss_with_zero_dynamics():
    w = [0.4, -2.0]
    per, total = equation_loss(affine_state_net(w, [1.0, 0.0]), constant_dyn_net([0.0, 0.0]),
                               CandidateMap("identity", 2), np.linspace(0, 5, 9)[:, None])
    np.testing.assert_allclose(per, np.square(w), rtol=1e-15)
    assert total == pytest.approx(sum(np.square(w)), rel=1e-15)


def test_equation_loss_shift_by_delta():
    w, delta = [0.4, -2.0], 0.25
    per, _ = equation_loss(affine_state_net(w, [0.0, 0.0]),
                           constant_dyn_net([w[0] + delta, w[1] + delta]),
                           CandidateMap("identity", 2), np.linspace(0, 1, 4)[:, None])
    np.testing.assert_allclose(per, [delta ** 2] * 2, rtol=1e-12)


# -- gradients of the total loss --------------------------------------------------

def miniature():
    rng = np.random.default_rng(3)
    s = ad.init_params((1, 4, 2), "tanh", 1)
    f = ad.init_params((2, 4, 2), "tanh", 2)
    s = s.with_params([p if p.ndim == 2 else 0.3 * rng.standard_normal(p.shape) for p in s.params()])
    f = f.with_params([p if p.ndim == 2 else 0.3 * rng.standard_normal(p.shape) for p in f.params()])
    data_t = np.linspace(0, 1, 4)[:, None]
    targets = rng.standard_normal((4, 2))
    colloc = rng.uniform(0, 1, size=(4, 1))
    return s, f, data_t, targets, colloc


@pytest.mark.parametrize("alpha", [(1, 1), (1, 0), (0, 1)])
def test_total_loss_gradient_matches_finite_differences(alpha):
    s, f, data_t, targets, colloc = miniature()
    fmap = CandidateMap("identity", 2)

    def total(sn, fn):
        rec, _, _ = loss_and_grads(sn, fn, fmap, data_t, targets, alpha, colloc)
        return rec.L_total

    _, gs, gf = loss_and_grads(s, f, fmap, data_t, targets, alpha, colloc)
    h = 1e-6
    for net, grad, wrap in ((s, gs, lambda n: total(n, f)), (f, gf, lambda n: total(s, n))):
        params = [p.copy() for p in net.params()]
        fd = []
        for p in params:
            for idx in np.ndindex(p.shape):
                orig = p[idx]
                p[idx] = orig + h
                up = wrap(net.with_params(params))
                p[idx] = orig - h
                down = wrap(net.with_params(params))
                p[idx] = orig
                fd.append((up - down) / (2 * h))
        fd = np.array(fd)
        err = np.abs(grad.flat() - fd) / np.maximum(np.abs(fd), 1e-3)
        assert err.max() < 1e-5


def test_gradient_is_data_part_plus_equation_part():
    s, f, data_t, targets, colloc = miniature()
    fmap = CandidateMap("identity", 2)
    _, gs, gf = loss_and_grads(s, f, fmap, data_t, targets, (1, 1), colloc)
    tape = ad.record(s, data_t)
    g_data = ad.backward(s, tape, (2.0 / 4) * (tape.output - targets))
    gs_eq, gf_eq = ad.grad_through_composition(s, f, fmap, colloc)
    np.testing.assert_allclose(gs.flat(), (g_data + gs_eq).flat(), rtol=0, atol=1e-15)
    np.testing.assert_array_equal(gf.flat(), gf_eq.flat())


def test_zero_residual_leaves_pure_data_gradient():
    w = [0.4, -2.0]
    s, f = affine_state_net(w, [1.0, 0.0]), constant_dyn_net(w)
    data_t = np.linspace(0, 1, 5)[:, None]
    targets = np.random.default_rng(0).standard_normal((5, 2))
    rec, gs, gf = loss_and_grads(s, f, CandidateMap("identity", 2), data_t, targets, (1, 1),
                                 np.linspace(0, 1, 7)[:, None])
    assert rec.L_eq == 0 and np.all(gf.flat() == 0)
    tape = ad.record(s, data_t)
    expected = ad.backward(s, tape, (2.0 / 5) * (tape.output - targets))
    np.testing.assert_array_equal(gs.flat(), expected.flat())


# -- Adam -----------------------------------------------------------------------

def test_adam_first_step_moves_by_lr():
    p = [np.array([1.0, -2.0, 3.0])]
    g = [np.array([0.5, -4.0, 1e-3])]
    new, _ = adam_step(p, g, AdamMoments.zeros_like(p), 1e-3, 1)
    expected = 1e-3 * np.abs(g[0]) / (np.abs(g[0]) + 1e-8)
    np.testing.assert_allclose(np.abs(new[0] - p[0]), expected, rtol=1e-9)
    np.testing.assert_allclose(np.abs(new[0] - p[0]), 1e-3, rtol=1e-4)


def test_adam_zero_gradient_is_noop():
    p = [np.array([[1.0, 2.0]])]
    new, m = adam_step(p, [np.zeros((1, 2))], AdamMoments.zeros_like(p), 1e-3, 1)
    np.testing.assert_array_equal(new[0], p[0])
    assert np.all(m.m[0] == 0) and np.all(m.v[0] == 0)


def test_adam_is_deterministic():
    rng = np.random.default_rng(0)
    p = [rng.standard_normal(4)]
    g = [rng.standard_normal(4)]
    mom = AdamMoments([rng.standard_normal(4)], [rng.random(4)])
    a, ma = adam_step(p, g, mom, 1e-3, 7)
    b, mb = adam_step(p, g, mom, 1e-3, 7)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(ma.v[0], mb.v[0])


def test_adam_rejects_non_finite_gradient():
    p = [np.zeros(2)]
    with pytest.raises(TrainingDivergedError) as info:
        adam_step(p, [np.array([1.0, np.inf])], AdamMoments.zeros_like(p), 1e-3, 12)
    assert info.value.step == 12


# -- scaling ------------------------------------------------------------------

def test_scaling_affine_arithmetic():
    t = np.linspace(0, 2, 5)
    x = np.column_stack((np.linspace(-20, 20, 5), np.linspace(0, 4, 5)))
    traj = Trajectory(t, x, np.ones_like(x))
    scaled, spec = nondimensionalize(traj)
    assert spec.center[0] == 0 and spec.scale[0] == 20
    assert spec.scale_states([[10.0, 2.0]])[0, 0] == 0.5
    assert spec.time_scale == 2.0
    np.testing.assert_allclose(scaled.derivs, np.ones_like(x) * [2 / 20, 2 / 2])


def test_scaling_round_trip_and_range():
    traj = integrate_reference(PRESETS["lorenz"])
    scaled, spec = nondimensionalize(traj)
    assert np.all(np.abs(scaled.states) <= 1 + 1e-15)
    assert scaled.times[0] == 0 and scaled.times[-1] == 1
    back = spec.invert(scaled)
    np.testing.assert_allclose(back.states, traj.states, rtol=1e-15, atol=1e-13)
    np.testing.assert_allclose(back.derivs, traj.derivs, rtol=1e-15, atol=1e-12)
    np.testing.assert_allclose(back.times, traj.times, rtol=1e-15)


def test_scaled_lorenz_derivatives_follow_chain_rule():
    traj = integrate_reference(PRESETS["lorenz"], np.linspace(0, 2.5, 5001))
    scaled, spec = nondimensionalize(traj)
    np.testing.assert_allclose(scaled.derivs, traj.derivs * spec.deriv_factor, rtol=1e-15)
    # independent route: difference the scaled states in scaled time
    dt = scaled.times[1] - scaled.times[0]
    fd = (scaled.states[2:] - scaled.states[:-2]) / (2 * dt)
    assert np.abs(fd - scaled.derivs[1:-1]).max() < 1e-3 * np.abs(scaled.derivs).max()


def test_unobserved_states_keep_unit_scaling():
    traj = integrate_reference(PRESETS["lorenz"])
    full = fit_scaling(traj, 0.1)
    part = fit_scaling(traj, 0.1, observed=(1, 0, 1))
    assert part.center[1] == 0.0 and part.scale[1] == 1.0
    assert part.center[::2] == full.center[::2] and part.scale[::2] == full.scale[::2]
    assert fit_scaling(traj, 0.1, observed=(1, 1, 1)) == full


def test_fixed_time_scale():
    traj = integrate_reference(PRESETS["lorenz"])
    scaled, spec = nondimensionalize(traj, time_scale=0.1)
    default, _ = nondimensionalize(traj)
    assert spec.time_scale == 0.1
    np.testing.assert_allclose(scaled.times[-1], 25.0, rtol=1e-15)
    np.testing.assert_array_equal(scaled.states, default.states)
    np.testing.assert_allclose(scaled.derivs, default.derivs / 25.0, rtol=1e-14)
    assert np.sqrt(np.mean(scaled.derivs ** 2, axis=0)).max() < 0.6


def test_time_scale_validation():
    with pytest.raises(ConfigError) as info:
        replace(preset_config("lorenz"), time_scale=0.0).validate()
    assert info.value.key == "time_scale"
    cfg = TrainingConfig.from_dict({"system": "lorenz", "time_scale": 1})
    assert cfg.time_scale == 1.0 and isinstance(cfg.time_scale, float)


def test_degenerate_state_keeps_unit_scale():
    x = np.column_stack((np.full(4, 3.0), np.arange(4.0)))
    _, spec = nondimensionalize(Trajectory(np.arange(4.0), x, np.zeros_like(x)))
    assert spec.scale[0] == 1.0 and spec.center[0] == 3.0


def test_identity_scaling():
    spec = ScalingSpec.identity(2)
    assert spec.is_identity
    x = np.random.default_rng(0).standard_normal((3, 2))
    np.testing.assert_array_equal(spec.scale_states(x), x)


# -- configuration ----------------------------------------------------------------

def test_preset_schedules():
    assert preset_config("type-a").phases == ((25000, 1e-3),)
    assert preset_config("nonlinear", (0, 1)).phases == ((25000, 1e-3),)
    assert preset_config("lorenz").phases == ((100000, 1e-3), (100000, 1e-4))
    assert preset_config("lorenz", (1, 1, 0)).phases == ((100000, 1e-3), (50000, 1e-4))
    assert preset_config("lorenz", (1, 0, 0)).phases == ((100000, 1e-3), (50000, 1e-4))
    lz = preset_config("lorenz")
    assert lz.time_scale == 0.1 and preset_config("type-a").time_scale is None
    assert lz.scaling and lz.state_hidden == (128, 128) and lz.dyn_hidden == (128, 128, 128)
    a = preset_config("type-a")
    assert not a.scaling and a.state_hidden == (64, 64) and a.dyn_hidden == (64, 64)
    assert a.n_collocation == 1000 and a.resample_every_step and a.seed == 0
    assert preset_config("type-b", fast=True).phases == ((2500, 1e-3),)


@pytest.mark.parametrize("alpha,key", [((0, 0), "alpha"), ((1, 1, 1), "alpha"), ((2, 1), "alpha")])
def test_invalid_alpha(alpha, key):
    with pytest.raises(ConfigError) as info:
        preset_config("type-a", alpha).validate()
    assert info.value.key == key


def test_config_from_dict():
    cfg = TrainingConfig.from_dict({"system": "lorenz", "alpha": [1, 0, 0], "seed": 4,
                                    "phases": [[10, 1e-3]], "scaling": False})
    assert cfg.alpha == (1, 0, 0) and cfg.seed == 4 and cfg.phases == ((10, 1e-3),)
    assert not cfg.scaling and cfg.dyn_hidden == (128, 128, 128)
    with pytest.raises(ConfigError) as info:
        TrainingConfig.from_dict({"system": "type-a", "learning_rate": 1})
    assert info.value.key == "learning_rate"
    assert TrainingConfig.from_dict(cfg.to_dict()) == cfg


# -- the training loop ----------------------------------------------------------

def test_zero_epochs_returns_initial_networks():
    cfg = replace(preset_config("type-a"), phases=((0, 1e-3),))
    result = train(cfg)
    again = train(cfg)
    for p, q in zip(result.state_net.params(), again.state_net.params()):
        np.testing.assert_array_equal(p, q)
    assert not result.report.converged
    assert list(result.report.errors) == ["x1", "dx1", "x2", "dx2"]
    assert all(v > 0.3 for v in result.report.errors.values())


def test_loss_algebra_at_every_logged_step():
    result = train(short(steps=250, log_every=50))
    assert result.history.steps == [0, 50, 100, 150, 200, 250]
    for rec in result.history.records:
        assert rec.L_d == sum(a * d for a, d in zip(rec.alpha, rec.data))
        assert rec.L_eq == sum(rec.equation)
        assert rec.L_total == rec.L_d + rec.L_eq
        assert min(rec.data + rec.equation) >= 0
    logged = [result.history.step_totals[s] for s in result.history.steps[:-1]]
    assert logged == [r.L_total for r in result.history.records[:-1]]


def test_masked_targets_do_not_influence_training():
    ref = integrate_reference(PRESETS["type-a"])
    tampered_states = ref.states.copy()
    tampered_states[:, 1] = np.random.default_rng(0).standard_normal(len(ref))
    tampered = Trajectory(ref.times, tampered_states, ref.derivs, ref.state_names)
    cfg = short(alpha=(1, 0), steps=120)
    a = train(cfg, reference=ref)
    b = train(cfg, reference=tampered)
    for p, q in zip(a.state_net.params() + a.dyn_net.params(),
                    b.state_net.params() + b.dyn_net.params()):
        np.testing.assert_array_equal(p, q)
    np.testing.assert_array_equal(a.history.step_totals, b.history.step_totals)


def test_masked_targets_do_not_influence_scaled_training():
    ref = integrate_reference(PRESETS["lorenz"])
    tampered_states = ref.states.copy()
    tampered_states[:, 2] *= 3.0
    tampered = Trajectory(ref.times, tampered_states, ref.derivs, ref.state_names)
    cfg = replace(preset_config("lorenz", (1, 1, 0)), phases=((20, 1e-3),),
                  state_hidden=(8,), dyn_hidden=(8,))
    a, b = train(cfg, reference=ref), train(cfg, reference=tampered)
    for p, q in zip(a.state_net.params(), b.state_net.params()):
        np.testing.assert_array_equal(p, q)
    assert a.scaling == b.scaling
    assert a.scaling.center[2] == 0.0 and a.scaling.scale[2] == 1.0


def test_same_seed_same_result():
    cfg = short(system="nonlinear", steps=80)
    a, b = train(cfg), train(cfg)
    assert a.report.errors == b.report.errors
    c = train(replace(cfg, seed=1))
    assert c.report.errors != a.report.errors


def test_fixed_collocation_when_resampling_disabled():
    cfg = short(steps=30, resample_every_step=False)
    assert train(cfg).report.errors != train(short(steps=30)).report.errors


def test_non_finite_data_raises_diverged():
    ref = integrate_reference(PRESETS["type-b"])
    states = ref.states.copy()
    states[3, 0] = np.nan
    with pytest.raises(TrainingDivergedError) as info:
        train(short("type-b", steps=10), reference=Trajectory(ref.times, states, ref.derivs))
    assert info.value.step == 0
    assert info.value.checkpoint is not None
    assert info.value.scaling.is_identity


def test_divergence_carries_lorenz_scaling():
    ref = integrate_reference(PRESETS["lorenz"])
    states = ref.states.copy()
    states[0, 0] = np.inf
    cfg = replace(preset_config("lorenz"), phases=((5, 1e-3),), state_hidden=(4,), dyn_hidden=(4,))
    with pytest.raises(TrainingDivergedError) as info:
        train(cfg, reference=Trajectory(ref.times, states, ref.derivs, ref.state_names))
    assert not info.value.scaling.is_identity


def test_loss_breakdown_properties():
    rec = LossBreakdown((0.5, 0.25), (0.125, 0.0625), (1, 0))
    assert rec.L_d == 0.5 and rec.L_eq == 0.1875 and rec.L_total == 0.6875
