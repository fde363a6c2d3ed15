"""Tests for the five transition kernels and the chain runner."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from fmala import diagnostics as dg
from fmala import samplers as sp
from fmala import targets as tg
from fmala.fwd_ad import EvaluationError
from fmala.tangent import RngStream


class ScriptedStream:
    """Deterministic stand-in for an RngStream: hands out queued draws."""

    def __init__(self, vectors=(), scalars=(), uniforms=()):
        self.vectors = [np.asarray(v, dtype=float) for v in vectors]
        self.scalars = list(scalars)
        self.uniforms = list(uniforms)
        self.count = 0

    def normals(self, n):
        v = self.vectors.pop(0)
        assert v.shape == (n,)
        self.count += n
        return v

    def normal(self):
        self.count += 1
        return float(self.scalars.pop(0))

    def uniform(self):
        self.count += 1
        return float(self.uniforms.pop(0)) if self.uniforms else 0.5


def _state(theta, target, streams):
    theta = np.asarray(theta, dtype=float)
    return sp.ChainState(theta=theta, logp=float(target.log_density(theta)), streams=streams)


def _shim(name, dim, fn):
    return tg.TargetModel(name=name, dim=dim, log_density=fn)


# ---------------------------------------------------------------------------
# mh_accept
# ---------------------------------------------------------------------------


def test_mh_accept_certain_and_impossible():
    rng = RngStream(0, 0, "accept")
    assert all(sp.mh_accept(0.0, rng) for _ in range(100))
    assert not any(sp.mh_accept(-math.inf, rng) for _ in range(100))
    with pytest.raises(ValueError):
        sp.mh_accept(0.5, rng)


def test_mh_accept_bernoulli_monte_carlo():
    rng = RngStream(123, 0, "accept")
    gamma = math.log(0.5)
    hits = sum(sp.mh_accept(gamma, rng) for _ in range(10 ** 5))
    assert abs(hits / 10 ** 5 - 0.5) < 0.01


# ---------------------------------------------------------------------------
# mala_step
# ---------------------------------------------------------------------------


def test_mala_drift_only_proposal():
    target = tg.gaussian(1)
    cfg = sp.SamplerConfig(algorithm="mala", eta=0.1, n_steps=1)
    streams = {"noise": ScriptedStream(vectors=[np.zeros(1)]), "accept": ScriptedStream()}
    out = sp.mala_step(_state([1.0], target, streams), target, cfg)
    assert_allclose(out.proposal, [0.995], rtol=0, atol=0)


def test_mala_gamma_continuity_small_eta():
    target = tg.gaussian(3)
    rng = np.random.default_rng(1)
    theta = rng.normal(size=3)
    for eta, bound in ((1e-2, 1e-2), (1e-3, 1e-4), (1e-4, 1e-6)):
        cfg = sp.SamplerConfig(algorithm="mala", eta=eta, n_steps=1)
        streams = {
            "noise": ScriptedStream(vectors=[rng.normal(size=3)]),
            "accept": ScriptedStream(),
        }
        out = sp.mala_step(_state(theta, target, streams), target, cfg)
        assert -bound < out.gamma <= 0.0


def test_mala_symmetric_cancellation_is_exact_zero():
    # eta a power of two and z = -(eta/2) grad make the proposal land exactly
    # on the current point; forward and reverse densities then coincide.
    target = tg.gaussian(2)
    theta = np.array([1.0, -2.0])
    eta = 0.5
    z = (eta / 2.0) * theta  # grad = -theta
    cfg = sp.SamplerConfig(algorithm="mala", eta=eta, n_steps=1)
    streams = {"noise": ScriptedStream(vectors=[z]), "accept": ScriptedStream()}
    out = sp.mala_step(_state(theta, target, streams), target, cfg)
    assert np.array_equal(out.proposal, theta)
    assert out.gamma == 0.0


# ---------------------------------------------------------------------------
# fmala_step
# ---------------------------------------------------------------------------


def test_fmala_proposal_mean_with_corrected_drift():
    # D=2 at eta=0.1: drift coefficient (eta sqrt(D))^2 / 2 = 0.01; jvp = -1.
    target = tg.gaussian(2)
    cfg = sp.SamplerConfig(algorithm="fmala", eta=0.1, n_steps=1)
    streams = {
        "tangent": ScriptedStream(vectors=[[1.0, 0.0], [0.0, 1.0]]),
        "noise": ScriptedStream(vectors=[np.zeros(2)]),
        "accept": ScriptedStream(),
    }
    out = sp.fmala_step(_state([1.0, 0.0], target, streams), target, cfg)
    assert_allclose(out.proposal, [0.99, 0.0], rtol=1e-14)
    assert_allclose(out.jvp_t, -1.0)


def test_fmala_orthogonal_tangent_is_random_walk():
    target = tg.gaussian(2)
    cfg = sp.SamplerConfig(algorithm="fmala", eta=0.3, n_steps=1)
    streams = {
        "tangent": ScriptedStream(vectors=[[0.0, 1.0], [1.0, 0.0]]),
        "noise": ScriptedStream(vectors=[np.zeros(2)]),
        "accept": ScriptedStream(),
    }
    theta = np.array([1.0, 0.0])  # gradient -e0, tangent e1: zero jvp
    out = sp.fmala_step(_state(theta, target, streams), target, cfg)
    assert np.array_equal(out.proposal, theta)
    assert out.jvp_t == 0.0


def test_fmala_uncorrected_drift_loses_dimension_factor():
    target = tg.gaussian(4)
    theta = np.ones(4)
    v = np.array([1.0, 0.0, 0.0, 0.0])
    for mode, coeff in (("paper-default", 4.0), ("uncorrected", 1.0)):
        cfg = sp.SamplerConfig(algorithm="fmala", eta=0.2, n_steps=1, bias_correction=mode)
        streams = {
            "tangent": ScriptedStream(vectors=[v, v]),
            "noise": ScriptedStream(vectors=[np.zeros(4)]),
            "accept": ScriptedStream(),
        }
        out = sp.fmala_step(_state(theta, target, streams), target, cfg)
        drift = coeff * 0.2 ** 2 / 2.0
        assert_allclose(out.proposal, theta + drift * (-1.0) * v, rtol=1e-14)


# ---------------------------------------------------------------------------
# line_fmala_step
# ---------------------------------------------------------------------------


def test_line_fmala_drift_only_matches_fmala_geometry():
    target = tg.gaussian(2)
    cfg = sp.SamplerConfig(algorithm="line-fmala", eta=0.1, n_steps=1)
    streams = {
        "tangent": ScriptedStream(vectors=[[1.0, 0.0]]),
        "noise": ScriptedStream(scalars=[0.0]),
        "accept": ScriptedStream(),
    }
    out = sp.line_fmala_step(_state([1.0, 0.0], target, streams), target, cfg)
    assert_allclose(out.proposal, [0.99, 0.0], rtol=1e-14)


def test_line_fmala_zero_jvp_reduces_to_density_difference():
    # Density flat along the tangent: both jvps vanish and the Gaussian
    # terms cancel, leaving gamma = f(prop) - f(current) = 0.
    flat = _shim("half_pipe", 2, lambda x: -0.5 * (x[0] * x[0]))
    cfg = sp.SamplerConfig(algorithm="line-fmala", eta=0.7, n_steps=1)
    streams = {
        "tangent": ScriptedStream(vectors=[[0.0, 1.0]]),
        "noise": ScriptedStream(scalars=[1.3]),
        "accept": ScriptedStream(),
    }
    out = sp.line_fmala_step(_state([0.4, -0.2], flat, streams), flat, cfg)
    assert out.jvp_t == 0.0 and out.jvp_s == 0.0
    assert out.gamma == 0.0


def test_line_proposals_are_colinear_with_tangent():
    target = tg.funnel(6)
    for alg in ("line-fmala", "pc-line-fmala"):
        cfg = sp.SamplerConfig(algorithm=alg, eta=0.5, n_steps=200)
        report = sp.run_chain(target, cfg, seed=3, chain_index=0, force_backend="python")
        thetas = report.chains[0].samples
        moves = np.diff(thetas, axis=0)
        moved = np.linalg.norm(moves, axis=1) > 0
        moves = moves[moved]
        # Every accepted move must be rank-one along some direction.
        units = moves / np.linalg.norm(moves, axis=1, keepdims=True)
        for step, unit in zip(moves, units):
            off = step - (step @ unit) * unit
            assert np.linalg.norm(off) <= 1e-12 * np.linalg.norm(step)


# ---------------------------------------------------------------------------
# pc_fmala_step
# ---------------------------------------------------------------------------


def test_pc_fmala_unit_curvature_recovers_fmala_geometry():
    # On a unit Gaussian |v^T H v| = 1: drift eta^2/2, noise sd eta/sqrt(D).
    target = tg.gaussian(4)
    eta = 0.4
    cfg = sp.SamplerConfig(algorithm="pc-fmala", eta=eta, n_steps=1)
    v = np.array([0.0, 1.0, 0.0, 0.0])
    z = np.array([1.0, -1.0, 2.0, 0.5])
    streams = {
        "tangent": ScriptedStream(vectors=[v, v]),
        "noise": ScriptedStream(vectors=[z]),
        "accept": ScriptedStream(),
    }
    theta = np.array([0.0, 2.0, 0.0, 0.0])
    out = sp.pc_fmala_step(_state(theta, target, streams), target, cfg)
    expected = theta + (eta ** 2 / 2.0) * (-2.0) * v + (eta / 2.0) * z  # sqrt(D) = 2
    assert_allclose(out.proposal, expected, rtol=1e-12)
    assert_allclose(out.vhv_t, -1.0)
    assert not out.floored


def test_pc_fmala_scale_invariant_drift_in_1d():
    # f = -c theta^2 / 2: preconditioning cancels the curvature, so the drift
    # is -(eta^2/2) theta regardless of c.
    eta = 0.3
    for c in (0.25, 1.0, 16.0):
        target = _shim("quad", 1, lambda x, c=c: -0.5 * c * (x[0] * x[0]))
        cfg = sp.SamplerConfig(algorithm="pc-fmala", eta=eta, n_steps=1)
        streams = {
            "tangent": ScriptedStream(vectors=[[1.0], [1.0]]),
            "noise": ScriptedStream(vectors=[np.zeros(1)]),
            "accept": ScriptedStream(),
        }
        out = sp.pc_fmala_step(_state([1.0], target, streams), target, cfg)
        assert_allclose(out.proposal, [1.0 - eta ** 2 / 2.0], rtol=1e-12)


def test_pc_fmala_floor_engages_on_flat_direction():
    tilted = _shim("tilted", 2, lambda x: x[0] * 2.5 - 0.5 * (x[1] * x[1]))
    eps = 1e-8
    eta = 0.2
    cfg = sp.SamplerConfig(algorithm="pc-fmala", eta=eta, n_steps=1, floor_eps=eps)
    e0 = np.array([1.0, 0.0])
    z = np.array([1.0, 0.0])
    streams = {
        "tangent": ScriptedStream(vectors=[e0, np.array([0.0, 1.0])]),
        "noise": ScriptedStream(vectors=[z]),
        "accept": ScriptedStream(uniforms=[1.0 - 1e-12]),
    }
    out = sp.pc_fmala_step(_state([0.0, 1.0], tilted, streams), tilted, cfg)
    assert out.floored
    # Noise sd along the floored direction: eta / sqrt(D * eps).
    expected_sd = eta / math.sqrt(2 * eps)
    drift = (eta ** 2 / (2 * eps)) * 2.5
    assert_allclose(out.proposal[0], drift + expected_sd, rtol=1e-9)


# ---------------------------------------------------------------------------
# pc_line_fmala_step
# ---------------------------------------------------------------------------


def test_pc_line_unit_curvature_equals_uncorrected_line():
    target = tg.gaussian(3)
    eta = 0.45
    z = -0.8
    theta = np.array([0.3, -1.0, 0.6])
    v = np.array([0.0, 1.0, 0.0])
    pc_cfg = sp.SamplerConfig(algorithm="pc-line-fmala", eta=eta, n_steps=1)
    pc_streams = {
        "tangent": ScriptedStream(vectors=[v]),
        "noise": ScriptedStream(scalars=[z]),
        "accept": ScriptedStream(uniforms=[0.3]),
    }
    pc_out = sp.pc_line_fmala_step(_state(theta, target, pc_streams), target, pc_cfg)
    line_cfg = sp.SamplerConfig(
        algorithm="line-fmala", eta=eta, n_steps=1, bias_correction="uncorrected"
    )
    line_streams = {
        "tangent": ScriptedStream(vectors=[v]),
        "noise": ScriptedStream(scalars=[z]),
        "accept": ScriptedStream(uniforms=[0.3]),
    }
    line_out = sp.line_fmala_step(_state(theta, target, line_streams), target, line_cfg)
    assert_allclose(pc_out.proposal, line_out.proposal, rtol=1e-13)
    assert_allclose(pc_out.gamma, line_out.gamma, rtol=1e-10, atol=1e-13)


def test_pc_line_funnel_scale_direction_noise():
    # Funnel at the origin along the scale direction: |d2 f / dw2| = 1/9,
    # so the scalar noise sd is 3 eta.
    target = tg.funnel(4)
    eta = 0.25
    cfg = sp.SamplerConfig(algorithm="pc-line-fmala", eta=eta, n_steps=1)
    e_w = np.zeros(5)
    e_w[4] = 1.0
    streams = {
        "tangent": ScriptedStream(vectors=[e_w]),
        "noise": ScriptedStream(scalars=[1.0]),
        "accept": ScriptedStream(),
    }
    out = sp.pc_line_fmala_step(_state(np.zeros(5), target, streams), target, cfg)
    assert_allclose(out.vhv_t, -1.0 / 9.0, rtol=1e-12)
    drift = (eta ** 2 / (2.0 / 9.0)) * 2.0  # jvp along e_w at origin is D/2 = 2
    assert_allclose(out.proposal[4], drift + 3.0 * eta, rtol=1e-10)


def test_pc_line_identical_under_both_correction_modes():
    target = tg.funnel(5)
    for mode in ("paper-default", "uncorrected"):
        cfg = sp.SamplerConfig(
            algorithm="pc-line-fmala", eta=0.6, n_steps=64, bias_correction=mode
        )
        report = sp.run_chain(target, cfg, seed=9, chain_index=0, force_backend="python")
        if mode == "paper-default":
            baseline = report.chains[0].samples
        else:
            assert np.array_equal(baseline, report.chains[0].samples)


# ---------------------------------------------------------------------------
# Acceptance-ratio structure
# ---------------------------------------------------------------------------


def test_gamma_nonpositive_for_every_kernel():
    target = tg.funnel(4)
    for alg in sp.ALGORITHMS:
        cfg = sp.SamplerConfig(algorithm=alg, eta=0.8, n_steps=300)
        report = sp.run_chain(target, cfg, seed=5, chain_index=0, force_backend="python")
        assert np.all(report.chains[0].gamma <= 0.0)


def test_reverse_proposal_antisymmetry():
    # Swapping the roles of the two endpoints (with their tangents and
    # curvatures) swaps the two proposal-density terms, so the density part
    # of gamma flips sign.
    rng = np.random.default_rng(2)
    dim, eta = 5, 0.37
    var = eta * eta
    th_a, th_b = rng.normal(size=dim), rng.normal(size=dim)
    v_a, v_b = rng.normal(size=dim), rng.normal(size=dim)
    v_a /= np.linalg.norm(v_a)
    v_b /= np.linalg.norm(v_b)
    j_a, j_b = 0.7, -1.2
    drift = 2.5

    mean_ab = th_a + drift * j_a * v_a  # forward mean from a
    mean_ba = th_b + drift * j_b * v_b  # reverse mean from b
    fwd = sp.isotropic_logq(th_b, mean_ab, var) - sp.isotropic_logq(th_a, mean_ba, var)
    swapped = sp.isotropic_logq(th_a, mean_ba, var) - sp.isotropic_logq(th_b, mean_ab, var)
    assert_allclose(fwd, -swapped, rtol=1e-12)

    h_a, h_b = 0.9, 2.3
    full_fwd = sp.isotropic_logq(th_b, mean_ab, var / h_a, full=True) - sp.isotropic_logq(
        th_a, mean_ba, var / h_b, full=True
    )
    full_swapped = sp.isotropic_logq(th_a, mean_ba, var / h_b, full=True) - sp.isotropic_logq(
        th_b, mean_ab, var / h_a, full=True
    )
    assert_allclose(full_fwd, -full_swapped, rtol=1e-12)

    a_a, a_b = float(th_a @ v_a), float(th_b @ v_a)
    s_fwd = sp.scalar_logq(a_b, a_a + 0.1, var, full=True) - sp.scalar_logq(
        a_a, a_b - 0.2, var / 2, full=True
    )
    s_swapped = sp.scalar_logq(a_a, a_b - 0.2, var / 2, full=True) - sp.scalar_logq(
        a_b, a_a + 0.1, var, full=True
    )
    assert_allclose(s_fwd, -s_swapped, rtol=1e-12)


def test_acceptance_goes_to_one_as_eta_shrinks():
    # Shrinking the step makes the proposal collapse onto the current point
    # and gamma vanish, except for pc-fmala: its forward and reverse
    # curvatures come from two independent tangents, so gamma keeps a
    # direction-mismatch term of order |log(h_t/h_s)| even at eta -> 0.
    target = tg.funnel(10)
    for alg in sp.ALGORITHMS:
        rates = []
        for eta in (1e-2, 1e-3, 1e-4):
            cfg = sp.SamplerConfig(algorithm=alg, eta=eta, n_steps=400)
            report = sp.run_chain(target, cfg, seed=0, chain_index=0)
            rates.append(report.acceptance_rate)
        assert rates[0] <= rates[1] <= rates[2] <= 1.0, (alg, rates)
        if alg == "pc-fmala":
            assert rates[2] > 0.75, rates  # plateaus below 1: tangent mismatch
        else:
            assert rates[2] > 0.97, (alg, rates)


# ---------------------------------------------------------------------------
# Evaluation budget
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("alg", ["fmala", "line-fmala", "pc-fmala", "pc-line-fmala"])
def test_forward_kernels_two_evaluations_per_step(alg):
    wrapped, counter = tg.counting_target(tg.funnel(3))
    n = 250
    cfg = sp.SamplerConfig(algorithm=alg, eta=0.4, n_steps=n)
    sp.run_chain(wrapped, cfg, seed=1, chain_index=0)
    assert counter.evals == 2 * n + 1  # +1: the initialization evaluation


def test_mala_two_gradient_evaluations_per_step():
    wrapped, counter = tg.counting_target(tg.funnel(3))
    n = 100
    cfg = sp.SamplerConfig(algorithm="mala", eta=0.2, n_steps=n)
    sp.run_chain(wrapped, cfg, seed=1, chain_index=0)
    assert counter.grad_evals == 2 * n
    assert counter.evals == 2 * n + 1


def test_mala_fallback_gradient_evaluation_budget():
    base = tg.funnel(3)
    stripped = tg.TargetModel(name=base.name, dim=base.dim, log_density=base.log_density)
    wrapped, counter = tg.counting_target(stripped)
    n = 50
    d = base.dim
    cfg = sp.SamplerConfig(algorithm="mala", eta=0.2, n_steps=n)
    sp.run_chain(wrapped, cfg, seed=1, chain_index=0)
    assert counter.evals == 2 * (d + 1) * n + 1


# ---------------------------------------------------------------------------
# run_chain mechanics
# ---------------------------------------------------------------------------


def test_run_chain_zero_iterations():
    target = tg.gaussian(2)
    cfg = sp.SamplerConfig(algorithm="fmala", eta=0.5, n_steps=0)
    report = sp.run_chain(target, cfg, seed=0, chain_index=0)
    assert report.chains[0].samples.shape == (0, 2)
    assert report.acceptance_rate is None


def test_run_chain_always_accept_stub(monkeypatch):
    def stub(state, target, cfg):
        return sp.StepOutcome(
            proposal=state.theta + 0.01, logp_proposal=0.0, gamma=0.0, accepted=True
        )

    monkeypatch.setitem(sp.STEP_FUNCTIONS, "mala", stub)
    target = tg.rosenbrock()  # no compiled hook: takes the generic loop
    cfg = sp.SamplerConfig(algorithm="mala", eta=0.5, n_steps=50)
    report = sp.run_chain(target, cfg, seed=0, chain_index=0)
    assert report.acceptance_rate == 1.0


def test_run_chain_initialization_scale():
    target = tg.funnel(10)
    cfg = sp.SamplerConfig(algorithm="fmala", eta=0.2, n_steps=0)
    starts = np.array(
        [sp.init_chain(target, cfg, seed, 0).theta for seed in range(200)]
    )
    sd = starts.std()
    assert 0.08 < sd < 0.12  # N(0, 0.1^2) initialization


def test_run_chain_cached_logp_matches_fresh_evaluation():
    target = tg.funnel(4)
    cfg = sp.SamplerConfig(algorithm="pc-line-fmala", eta=0.5, n_steps=100)
    report = sp.run_chain(target, cfg, seed=2, chain_index=0, force_backend="python")
    chain = report.chains[0]
    final_theta = chain.samples[-1]
    assert float(target.log_density(final_theta)) == chain.logp[-1]


def test_run_chain_deterministic_and_seed_sensitive():
    target = tg.funnel(3)
    cfg = sp.SamplerConfig(algorithm="line-fmala", eta=0.5, n_steps=200)
    a = sp.run_chain(target, cfg, seed=4, chain_index=1)
    b = sp.run_chain(target, cfg, seed=4, chain_index=1)
    c = sp.run_chain(target, cfg, seed=5, chain_index=1)
    assert a.chains[0].samples.tobytes() == b.chains[0].samples.tobytes()
    assert not np.array_equal(a.chains[0].samples, c.chains[0].samples)


def test_burn_in_and_thinning_bookkeeping():
    target = tg.gaussian(2)
    cfg = sp.SamplerConfig(algorithm="fmala", eta=0.6, n_steps=100, burn_in=20, thinning=8)
    report = sp.run_chain(target, cfg, seed=0, chain_index=0)
    chain = report.chains[0]
    assert np.array_equal(chain.kept_iterations, np.arange(20, 100, 8))
    assert chain.samples.shape == (10, 2)
    assert chain.gamma.shape == (100,)


def test_run_chain_propagates_evaluation_failure():
    # A target that goes non-finite after a few evaluations must abort the
    # chain with the evaluation error, not swallow it.
    from fmala import fwd_ad as fm

    calls = {"n": 0}

    def booby_trap(x):
        calls["n"] += 1
        scale = math.inf if calls["n"] > 7 else 1.0
        return -0.5 * fm.square(x[0]) * scale

    target = _shim("booby_trap", 1, booby_trap)
    cfg = sp.SamplerConfig(algorithm="fmala", eta=0.5, n_steps=500)
    with pytest.raises(EvaluationError):
        sp.run_chain(target, cfg, seed=0, chain_index=0)


def test_invalid_configs_rejected():
    with pytest.raises(ValueError):
        sp.SamplerConfig(algorithm="nuts", eta=0.1, n_steps=10)
    with pytest.raises(ValueError):
        sp.SamplerConfig(algorithm="mala", eta=-0.1, n_steps=10)
    with pytest.raises(ValueError):
        sp.SamplerConfig(algorithm="mala", eta=0.1, n_steps=10, burn_in=11)
    with pytest.raises(ValueError):
        sp.SamplerConfig(algorithm="mala", eta=0.1, n_steps=10, thinning=0)
    with pytest.raises(ValueError):
        sp.SamplerConfig(algorithm="mala", eta=0.1, n_steps=10, bias_correction="off")


# ---------------------------------------------------------------------------
# Backend twins
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("alg", sp.ALGORITHMS)
def test_compiled_and_python_backends_agree(alg):
    from fmala import _backend

    if not _backend.compiled_available():
        pytest.skip("compiled backend not built")
    target = tg.funnel(8)
    cfg = sp.SamplerConfig(algorithm=alg, eta=0.45, n_steps=300)
    py = sp.run_chain(target, cfg, seed=11, chain_index=0, force_backend="python")
    cy = sp.run_chain(target, cfg, seed=11, chain_index=0, force_backend="compiled")
    assert py.chains[0].backend == "python"
    assert cy.chains[0].backend == "compiled"
    assert_allclose(py.chains[0].samples, cy.chains[0].samples, rtol=1e-8, atol=1e-10)
    assert np.array_equal(py.chains[0].accepted, cy.chains[0].accepted)
    assert_allclose(py.chains[0].gamma, cy.chains[0].gamma, rtol=1e-7, atol=1e-10)


def test_compiled_kernel_evals_match_dual_path():
    from fmala import _backend

    if not _backend.compiled_available():
        pytest.skip("compiled backend not built")
    from fmala import _kernels
    from fmala.fwd_ad import eval_f2

    rng = np.random.default_rng(17)
    for target in (tg.funnel(7), tg.gaussian(5, sigma=1.7)):
        params = np.asarray(target.kernel_params, dtype=float)
        for _ in range(20):
            x = rng.normal(size=target.dim)
            v = rng.normal(size=target.dim)
            v /= np.linalg.norm(v)
            f_c, j_c, h_c = _kernels.eval_kernel_f2(target.kernel_id, params, x, v)
            f_d, j_d, h_d = eval_f2(target, x, v)
            assert_allclose([f_c, j_c, h_c], [f_d, j_d, h_d], rtol=1e-12, atol=1e-12)
            f_g, grad = _kernels.eval_kernel_grad(target.kernel_id, params, x)
            assert_allclose(f_g, f_d, rtol=1e-12)
            assert_allclose(grad, tg.full_gradient(target, x), rtol=1e-12, atol=1e-14)


# ---------------------------------------------------------------------------
# Sampling correctness (short versions; the acceptance suite runs the full
# protocol sizes)
# ---------------------------------------------------------------------------


def test_fmala_gaussian_moments():
    target = tg.gaussian(1)
    cfg = sp.SamplerConfig(algorithm="fmala", eta=1.5, n_steps=50_000, burn_in=2_000)
    report = sp.run_chain(target, cfg, seed=0, chain_index=0)
    samples = report.chains[0].samples[:, 0]
    assert abs(samples.mean()) < 0.05
    assert 0.9 < samples.var(ddof=1) < 1.1


@pytest.mark.parametrize("alg", sp.ALGORITHMS)
def test_kernels_pass_ks_against_standard_normal(alg):
    from scipy import stats

    target = tg.gaussian(1)
    cfg = sp.SamplerConfig(algorithm=alg, eta=1.5, n_steps=20_000, burn_in=1_000, thinning=10)
    report = sp.run_chain(target, cfg, seed=13, chain_index=0)
    samples = report.chains[0].samples[:, 0]
    result = stats.kstest(samples, "norm")
    assert result.pvalue > 0.001, (alg, result)
