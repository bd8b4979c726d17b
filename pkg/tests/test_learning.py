import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homctx.labels import LabelSpace
from homctx.learning import (
    CONTEXT_AXES,
    FrameBatch,
    LearningConfig,
    TrainingFrame,
    fit,
    log_likelihood,
    log_likelihood_grad,
    marginalize_context,
    most_probable_combinations,
)
from homctx.potentials import PARAM_BLOCKS, Evidence, ModelParams, SceneState, SideEvidence, total_potential

from conftest import random_full_params, random_training_frames

NO_REG = LearningConfig(l2_strength=0.0)


def feasible_states(frame, space):
    """Every label assignment the partition function ranges over, by direct enumeration."""
    na, ng, no = space.sizes
    per_side = []
    for s in (0, 1):
        sd = frame.evidence.sides[s]
        if sd.n_hands == 0:
            per_side.append([(0, 0)])
            continue
        opts = [(g, 0) for g in range(ng + 1)]
        if sd.n_objects and frame.truth.attribute[s] > 0:
            opts += [(g, m) for g in range(1, ng + 1) for m in range(1, no + 1)]
        per_side.append(opts)
    for k, (gl, ml), (gr, mr) in itertools.product(range(na), *per_side):
        yield SceneState(k, (gl, gr), (ml, mr), tuple(0 if g else None for g in (gl, gr)),
                         tuple(0 if m else None for m in (ml, mr)))


def brute_loglik(params, frames, space):
    total = 0.0
    for fr in frames:
        scores = [total_potential(params, s, fr.evidence) for s in feasible_states(fr, space)]
        z = math.fsum(math.exp(v) for v in scores)
        total += total_potential(params, fr.truth, fr.evidence) - math.log(z)
    return total


def test_log_z_matches_direct_summation(rng):
    space = LabelSpace.from_sizes(2, 2, 2)
    for _ in range(20):
        frames = random_training_frames(space, 3, rng)
        p = random_full_params(space, rng, 0.5)
        got = log_likelihood(p, frames, NO_REG, space)
        assert got == pytest.approx(brute_loglik(p, frames, space), rel=1e-12, abs=1e-12)


def test_zero_params_uniform(rng):
    space = LabelSpace.from_sizes(3, 2, 2)
    frames = random_training_frames(space, 10, rng)
    expect = -sum(math.log(sum(1 for _ in feasible_states(f, space))) for f in frames)
    assert log_likelihood(ModelParams.zeros(space), frames, NO_REG, space) == pytest.approx(expect, rel=1e-13)


def test_single_feasible_assignment_has_zero_loglik(rng):
    space = LabelSpace.from_sizes(1, 2, 2)
    ev = Evidence(np.array([0.3]), (SideEvidence.empty(2, 2), SideEvidence.empty(2, 2)))
    frames = [TrainingFrame(ev, SceneState(0))]
    p = random_full_params(space, rng)
    assert log_likelihood(p, frames, NO_REG, space) == pytest.approx(0.0, abs=1e-14)


def _finite_difference_check(space, frames, p, cfg, h=1e-5):
    obj, grad = log_likelihood_grad(p, frames, cfg, space)
    batch = FrameBatch(frames, space)
    x = p.flatten()
    g = grad.flatten()
    fd = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        fd[i] = (log_likelihood(ModelParams.unflatten(xp, space), batch, cfg)
                 - log_likelihood(ModelParams.unflatten(xm, space), batch, cfg)) / (2 * h)
    return g, fd


def test_gradient_matches_finite_differences(rng):
    worst = 0.0
    for _ in range(50):
        space = LabelSpace.from_sizes(*(int(v) for v in rng.integers(1, 4, 3)))
        frames = random_training_frames(space, 4, rng)
        p = random_full_params(space, rng, 0.5)
        g, fd = _finite_difference_check(space, frames, p, LearningConfig(l2_strength=0.1))
        q = ModelParams.unflatten(g, space)
        r = ModelParams.unflatten(fd, space)
        for name in PARAM_BLOCKS:
            a, b = getattr(q, name), getattr(r, name)
            err = np.linalg.norm(a - b) / max(np.linalg.norm(a), 1e-8)
            worst = max(worst, err)
    assert worst < 1e-5


def test_null_rows_have_zero_gradient(rng):
    space = LabelSpace.from_sizes(2, 3, 2)
    frames = random_training_frames(space, 5, rng)
    _, grad = log_likelihood_grad(random_full_params(space, rng), frames, NO_REG, space)
    assert not grad.eta[0].any() and not grad.lam[0].any()
    assert not grad.beta[0].any() and not grad.beta[:, 0].any()


def test_gd_trace_is_monotone(rng):
    space = LabelSpace.from_sizes(3, 3, 2)
    frames = random_training_frames(space, 40, rng)
    res = fit(frames, space, LearningConfig(method="gd", step_size=5.0, max_epochs=60))
    assert all(b >= a for a, b in zip(res.trace, res.trace[1:]))
    assert res.trace[-1] > res.trace[0]


def test_lbfgs_improves_and_matches_gd(rng):
    space = LabelSpace.from_sizes(3, 3, 2)
    frames = random_training_frames(space, 40, rng)
    cfg = LearningConfig(l2_strength=1.0, max_epochs=500, convergence_tol=1e-12)
    a = fit(frames, space, cfg)
    b = fit(frames, space, LearningConfig(l2_strength=1.0, method="gd", step_size=1.0, max_epochs=3000,
                                          convergence_tol=1e-12))
    assert a.objective >= b.objective - 1e-3
    # strictly concave: a unique optimum
    np.testing.assert_allclose(a.params.flatten(), b.params.flatten(), atol=2e-2)


def test_xi_ranks_majority_action_first(rng):
    space = LabelSpace.from_sizes(3, 2, 2)
    frames = []
    for _ in range(30):
        ev = Evidence(np.ones(3) / 3, (SideEvidence.empty(2, 2), SideEvidence.empty(2, 2)))
        frames.append(TrainingFrame(ev, SceneState(0)))
    p = fit(frames, space, frozen=("alpha",)).params
    assert int(np.argmax(p.xi @ (np.ones(3) / 3))) == 0


def test_strong_regularization_shrinks_to_zero(rng):
    space = LabelSpace.from_sizes(2, 2, 2)
    frames = random_training_frames(space, 20, rng)
    small = fit(frames, space, LearningConfig(l2_strength=1e-2)).params
    huge = fit(frames, space, LearningConfig(l2_strength=1e8)).params
    assert np.abs(huge.flatten()).max() < 1e-6
    assert np.abs(small.flatten()).max() > 1e-2


def test_frozen_blocks_stay_zero(rng):
    space = LabelSpace.from_sizes(2, 3, 2)
    frames = random_training_frames(space, 20, rng)
    p = fit(frames, space, frozen=("alpha", "beta", "gamma")).params
    assert not p.alpha.any() and not p.beta.any() and not p.gamma.any()
    assert p.xi.any()
    with pytest.raises(ValueError):
        fit(frames, space, frozen=("nope",))


def test_frame_order_invariance(rng):
    space = LabelSpace.from_sizes(3, 3, 2)
    frames = random_training_frames(space, 30, rng)
    cfg = LearningConfig(l2_strength=1.0, convergence_tol=1e-12, max_epochs=500)
    a = fit(frames, space, cfg)
    perm = rng.permutation(len(frames))
    b = fit([frames[i] for i in perm], space, cfg)
    assert a.objective == pytest.approx(b.objective, rel=1e-6)
    np.testing.assert_allclose(a.params.flatten(), b.params.flatten(), atol=1e-3)


def test_infeasible_truth_rejected(rng):
    space = LabelSpace.from_sizes(2, 2, 2)
    ev = Evidence(np.zeros(2), (SideEvidence.empty(2, 2), SideEvidence.empty(2, 2)))
    with pytest.raises(ValueError):
        FrameBatch([TrainingFrame(ev, SceneState(0, (1, 0), (0, 0), (0, None), (None, None)))], space)


def test_config_validation():
    with pytest.raises(ValueError):
        LearningConfig(l2_strength=-1)
    with pytest.raises(ValueError):
        LearningConfig(method="adam")


# --- context tables ------------------------------------------------------------------


def brute_marginal(alpha, axis, reduce):
    na, g1, _, m1, _ = alpha.shape
    shape = {"action-grasp": (na, g1), "action-attribute": (na, m1), "grasp-attribute": (g1, m1)}[axis]
    left = [[[] for _ in range(shape[1])] for _ in range(shape[0])]
    right = [[[] for _ in range(shape[1])] for _ in range(shape[0])]
    for k, gl, gr, ml, mr in itertools.product(*(range(d) for d in alpha.shape)):
        v = alpha[k, gl, gr, ml, mr]
        key_l, key_r = {"action-grasp": ((k, gl), (k, gr)), "action-attribute": ((k, ml), (k, mr)),
                        "grasp-attribute": ((gl, ml), (gr, mr))}[axis]
        left[key_l[0]][key_l[1]].append(v)
        right[key_r[0]][key_r[1]].append(v)
    out = np.empty(shape)
    for i, j in np.ndindex(shape):
        if reduce == "sum":
            out[i, j] = (math.fsum(left[i][j]) + math.fsum(right[i][j])) / 2
        else:
            out[i, j] = math.log((math.fsum(map(math.exp, left[i][j])) + math.fsum(map(math.exp, right[i][j]))) / 2)
    return out


@pytest.mark.parametrize("axis", CONTEXT_AXES)
@pytest.mark.parametrize("mode", ["sum", "logsumexp"])
def test_marginalize_matches_brute_force(axis, mode, rng):
    p = random_full_params(LabelSpace.from_sizes(3, 2, 3), rng)
    np.testing.assert_allclose(marginalize_context(p, axis, mode), brute_marginal(p.alpha, axis, mode), rtol=1e-12, atol=1e-12)


def test_marginalize_examples(rng):
    space = LabelSpace.from_sizes(2, 3, 2)
    p = ModelParams.zeros(space)
    for axis in CONTEXT_AXES:
        t = marginalize_context(p, axis)
        assert np.all(t == t.flat[0])
    p.alpha[1, 2, 3, 0, 1] = 1.0
    t = marginalize_context(p, "action-grasp")
    assert set(zip(*np.nonzero(t))) == {(1, 2), (1, 3)}
    q = random_full_params(space, rng)
    for axis in CONTEXT_AXES:
        assert marginalize_context(q, axis).sum() == pytest.approx(q.alpha.sum(), rel=1e-12)
    with pytest.raises(ValueError):
        marginalize_context(q, "action-action")


def test_most_probable_combinations(rng):
    space = LabelSpace.from_sizes(2, 3, 2)
    p = ModelParams.zeros(space)
    p.alpha[1, 2, 0, 1, 0] = 3.0
    assert most_probable_combinations(p, 1)[0] == ((2, 0, 1, 0), 3.0)
    p.alpha[1, 0, 1, 0, 0] = 3.0
    top = most_probable_combinations(p, 1, top_k=2)
    assert [t for t, _ in top] == [(0, 1, 0, 0), (2, 0, 1, 0)]
    with pytest.raises(IndexError):
        most_probable_combinations(p, 5)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_most_probable_matches_scan(seed):
    rng = np.random.default_rng(seed)
    space = LabelSpace.from_sizes(2, 3, 3)
    p = random_full_params(space, rng)
    k = int(rng.integers(2))
    entries = sorted(((-p.alpha[(k,) + idx], idx) for idx in np.ndindex(p.alpha.shape[1:])))
    got = most_probable_combinations(p, k, top_k=5)
    assert [t for t, _ in got] == [idx for _, idx in entries[:5]]
    assert got[0][1] == p.alpha[k].max()
