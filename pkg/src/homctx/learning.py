"""Maximum-likelihood estimation of the potential's weights.

The potential is treated as the energy of a log-linear model over the labels
``(action, left grasp, right grasp, left attribute, right attribute)`` with
boxes clamped to the annotation.  A side without an annotated hand is pinned
to the null labels; a side with a hand may take any grasp including null, and
its attribute may be non-null only when an object box is annotated and the
grasp is non-null.  ``log Z`` is an exact log-sum-exp over that space.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .geometry import apply_offsets_array, iou_array
from .labels import SIDES, LabelSpace
from .potentials import PARAM_BLOCKS, Evidence, ModelParams, SceneState

log = logging.getLogger(__name__)


@dataclass
class TrainingFrame:
    """Annotated frame: ``evidence`` holds scores at the annotated boxes only.

    Each side of ``evidence`` has one hand candidate when a hand is annotated
    (none otherwise) and one object candidate when an object is annotated;
    ``truth`` refers to those candidates (index 0).
    """

    evidence: Evidence
    truth: SceneState


@dataclass(frozen=True)
class LearningConfig:
    l2_strength: float = 1e-2
    step_size: float = 0.1
    max_epochs: int = 200
    convergence_tol: float = 1e-6
    alpha_smoothing: float = 0.0
    method: str = "lbfgs"

    def __post_init__(self):
        if self.l2_strength < 0 or self.alpha_smoothing < 0:
            raise ValueError("l2_strength and alpha_smoothing must be >= 0")
        if self.step_size <= 0 or self.max_epochs < 1 or self.convergence_tol < 0:
            raise ValueError("invalid optimizer settings")
        if self.method not in ("gd", "lbfgs"):
            raise ValueError("method must be 'gd' or 'lbfgs'")


@dataclass
class FitResult:
    params: ModelParams
    objective: float
    trace: list[float] = field(default_factory=list)
    epochs: int = 0
    converged: bool = False


class FrameBatch:
    """Training frames packed into arrays for vectorized likelihood evaluation."""

    def __init__(self, frames: Sequence[TrainingFrame], space: LabelSpace):
        if not frames:
            raise ValueError("no training frames")
        na, ng, no = space.sizes
        n = len(frames)
        self.space = space
        self.n = n
        self.phi_a = np.zeros((n, na))
        self.truth = np.zeros((n, 5), dtype=int)
        self.has_hand = np.zeros((2, n), dtype=bool)
        self.has_obj = np.zeros((2, n), dtype=bool)
        self.phi_h = np.zeros((2, n, 3))
        self.phi_g = np.zeros((2, n, ng))
        self.phi_o = np.zeros((2, n, no))
        self.iou = np.zeros((2, n))
        for f, frame in enumerate(frames):
            ev, st = frame.evidence, frame.truth
            ev.check(space)
            self.phi_a[f] = ev.phi_a
            self.truth[f] = st.labels()
            for s in SIDES:
                side = ev.sides[s]
                if side.n_hands == 0:
                    if st.grasp[s] != 0:
                        raise ValueError(f"frame {f}: grasp label without a hand box")
                    continue
                if st.grasp[s] == 0:
                    raise ValueError(f"frame {f}: annotated hand box without a grasp label")
                self.has_hand[s, f] = True
                self.phi_h[s, f] = side.phi_h[0]
                self.phi_g[s, f] = side.phi_g[0]
                if side.n_objects and st.attribute[s] > 0:
                    self.has_obj[s, f] = True
                    self.phi_o[s, f] = side.phi_o[0, 0]
                    ref = apply_offsets_array(side.hand_boxes[0], side.offsets[0])
                    self.iou[s, f] = float(iou_array(side.object_boxes[0, 0], ref))
                elif st.attribute[s] > 0:
                    raise ValueError(f"frame {f}: attribute label without an object box")

    def subset(self, idx: np.ndarray) -> "FrameBatch":
        out = object.__new__(FrameBatch)
        out.space = self.space
        out.n = len(idx)
        for name in ("phi_a", "truth"):
            setattr(out, name, getattr(self, name)[idx])
        for name in ("has_hand", "has_obj", "phi_h", "phi_g", "phi_o", "iou"):
            setattr(out, name, getattr(self, name)[:, idx])
        return out

    def side_table(self, params: ModelParams, s: int, sl: slice) -> np.ndarray:
        """Local score of side ``s`` for every (grasp, attribute); -inf where infeasible."""
        ng, no = self.space.n_grasps, self.space.n_attributes
        n = sl.stop - sl.start
        hand = self.has_hand[s, sl]
        obj = self.has_obj[s, sl]
        table = np.full((n, ng + 1, no + 1), -np.inf)
        table[:, 0, 0] = 0.0
        g_score = self.phi_h[s, sl] @ params.zeta[s]
        g_score = g_score[:, None] + self.phi_g[s, sl] @ params.eta[1:].T  # (n, Ng)
        table[:, 1:, 0] = np.where(hand[:, None], g_score, -np.inf)
        o_score = params.gamma[s] * self.iou[s, sl][:, None] + self.phi_o[s, sl] @ params.lam[1:].T  # (n, No)
        both = g_score[:, :, None] + o_score[:, None, :] + params.beta[None, 1:, 1:]
        table[:, 1:, 1:] = np.where(obj[:, None, None], both, -np.inf)
        return table


def _scaled_exp(x: np.ndarray, axes: tuple[int, ...]):
    """``exp(x - max)`` over ``axes`` and the subtracted maxima (0 where all -inf)."""
    mx = np.max(x, axis=axes, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    return np.exp(x - mx), mx.reshape(mx.shape[0]) if mx.ndim > 1 else mx


def _objective_and_grad(params: ModelParams, batch: FrameBatch, config: LearningConfig,
                        want_grad: bool = True):
    """Penalized log-likelihood and its gradient.

    The joint factorizes as ``exp(alpha) * exp(action) * exp(left) * exp(right)``
    so partition functions and marginals are matrix contractions over the
    flattened (grasp, attribute) pair of each side instead of a full table.
    """
    space = batch.space
    na, ng, no = space.sizes
    go = (ng + 1) * (no + 1)
    n = batch.n
    sl = slice(0, n)
    act = batch.phi_a @ params.xi.T  # (n, Na)
    tl = batch.side_table(params, 0, sl).reshape(n, go)
    tr = batch.side_table(params, 1, sl).reshape(n, go)
    # alpha as (k, (gl, ml), (gr, mr))
    a = params.alpha.transpose(0, 1, 3, 2, 4).reshape(na, go, go)
    a_max = float(a.max())
    ea = np.exp(a - a_max)
    e_act, m_act = _scaled_exp(act, (1,))
    e_l, m_l = _scaled_exp(tl, (1,))
    e_r, m_r = _scaled_exp(tr, (1,))
    # u[f, k, L] = sum_R ea[k, L, R] e_r[f, R]
    u = (e_r @ ea.reshape(na * go, go).T).reshape(n, na, go)
    inner_l = np.sum(u * e_l[:, None, :], axis=2)  # summed over both sides
    z = np.sum(inner_l * e_act, axis=1)
    log_z = np.log(z) + a_max + m_act + m_l + m_r

    t = batch.truth
    lidx = t[:, 1] * (no + 1) + t[:, 3]
    ridx = t[:, 2] * (no + 1) + t[:, 4]
    rows = np.arange(n)
    truth_score = a[t[:, 0], lidx, ridx] + act[rows, t[:, 0]] + tl[rows, lidx] + tr[rows, ridx]
    if not np.all(np.isfinite(truth_score)):
        raise ValueError("a truth assignment is infeasible under its own annotation")
    loglik = float(np.sum(truth_score - log_z))
    objective = loglik - 0.5 * config.l2_strength * params.sq_norm()
    if config.alpha_smoothing > 0:
        flat = params.alpha.ravel()
        objective += config.alpha_smoothing * float(flat.mean() - logsumexp(flat))
    if not want_grad:
        return objective, None

    grad = ModelParams.zeros(space)
    w = e_act / z[:, None]  # (n, Na)
    # expected alpha indicator: ea * sum_f w[f,k] e_l[f,L] e_r[f,R]
    m_alpha = ((w[:, :, None] * e_l[:, None, :]).reshape(n, na * go).T @ e_r).reshape(na, go, go) * ea
    emp = np.zeros_like(a)
    np.add.at(emp, (t[:, 0], lidx, ridx), 1.0)
    grad.alpha[...] = (emp - m_alpha).reshape(na, ng + 1, no + 1, ng + 1, no + 1).transpose(0, 1, 3, 2, 4)
    p_act = inner_l * w  # (n, Na)
    onehot = np.zeros_like(p_act)
    onehot[rows, t[:, 0]] = 1.0
    grad.xi += (onehot - p_act).T @ batch.phi_a
    q_left = np.sum(u * w[:, :, None], axis=1) * e_l
    v = (e_l @ ea.transpose(1, 0, 2).reshape(go, na * go)).reshape(n, na, go)
    q_right = np.sum(v * w[:, :, None], axis=1) * e_r
    for s, q, idx in ((0, q_left, lidx), (1, q_right, ridx)):
        q = q.reshape(n, ng + 1, no + 1)
        emp_s = np.zeros_like(q)
        emp_s[rows, idx // (no + 1), idx % (no + 1)] = 1.0
        diff = emp_s - q
        grad.beta[1:, 1:] += diff[:, 1:, 1:].sum(axis=0)
        d_grasp = diff.sum(axis=2)
        d_attr = diff.sum(axis=1)
        grad.eta[1:] += d_grasp[:, 1:].T @ batch.phi_g[s]
        grad.lam[1:] += d_attr[:, 1:].T @ batch.phi_o[s]
        grad.zeta[s] += d_grasp[:, 1:].sum(axis=1) @ batch.phi_h[s]
        grad.gamma[s] += d_attr[:, 1:].sum(axis=1) @ batch.iou[s]
    for name in PARAM_BLOCKS:
        getattr(grad, name)[...] -= config.l2_strength * getattr(params, name)
    if config.alpha_smoothing > 0:
        soft = np.exp(params.alpha - logsumexp(params.alpha))
        grad.alpha += config.alpha_smoothing * (1.0 / params.alpha.size - soft)
    return objective, grad


def log_likelihood(params: ModelParams, frames, config: LearningConfig = LearningConfig(),
                   space: Optional[LabelSpace] = None) -> float:
    """Penalized conditional log-likelihood of ``frames`` (a list or a :class:`FrameBatch`)."""
    batch = _as_batch(frames, space)
    return _objective_and_grad(params, batch, config, want_grad=False)[0]


def log_likelihood_grad(params: ModelParams, frames, config: LearningConfig = LearningConfig(),
                        space: Optional[LabelSpace] = None) -> tuple[float, ModelParams]:
    batch = _as_batch(frames, space)
    return _objective_and_grad(params, batch, config)


def _as_batch(frames, space):
    if isinstance(frames, FrameBatch):
        return frames
    if space is None:
        raise ValueError("a LabelSpace is required when passing raw frames")
    return FrameBatch(list(frames), space)


def fit(frames, space: LabelSpace, config: LearningConfig = LearningConfig(),
        frozen: Iterable[str] = (), init: Optional[ModelParams] = None) -> FitResult:
    """Gradient ascent on the penalized log-likelihood from the zero model.

    ``frozen`` names parameter blocks held at their initial value (zero by
    default); this is how the restricted ablation models are trained.  With
    ``method="gd"`` a step that lowers the objective is rejected and the step
    halved, so the returned trace never decreases.
    """
    batch = _as_batch(frames, space)
    frozen = tuple(frozen)
    unknown = set(frozen) - set(PARAM_BLOCKS)
    if unknown:
        raise ValueError(f"unknown parameter blocks {sorted(unknown)}")
    params = init.copy() if init is not None else ModelParams.zeros(space)
    if config.method == "lbfgs":
        return _fit_lbfgs(params, batch, config, frozen)
    obj, grad = _objective_and_grad(params, batch, config)
    trace = [obj]
    step = config.step_size
    scale = 1.0 / batch.n
    converged = False
    epochs = 0
    for epochs in range(1, config.max_epochs + 1):
        for name in frozen:
            getattr(grad, name)[...] = 0.0
        while True:
            cand = ModelParams(**{k: getattr(params, k) + step * scale * getattr(grad, k) for k in PARAM_BLOCKS})
            new_obj, new_grad = _objective_and_grad(cand, batch, config)
            if not np.isfinite(new_obj):
                raise FloatingPointError("non-finite objective")
            if new_obj >= obj:
                break
            step /= 2
            if step < 1e-12:
                break
        if new_obj < obj:
            converged = True
            break
        rel = abs(new_obj - obj) / max(abs(obj), 1.0)
        params, obj, grad = cand, new_obj, new_grad
        trace.append(obj)
        if rel < config.convergence_tol:
            converged = True
            break
    log.debug("fit: %d epochs, objective %.6g, step %.3g", epochs, obj, step)
    return FitResult(params.zero_null_rows(), obj, trace, epochs, converged)


def _fit_lbfgs(params: ModelParams, batch: FrameBatch, config: LearningConfig, frozen) -> FitResult:
    from scipy.optimize import minimize

    space = batch.space
    mask = ModelParams.zeros(space)
    for name in PARAM_BLOCKS:
        getattr(mask, name)[...] = 0.0 if name in frozen else 1.0
    mask_vec = mask.flatten()
    base = params.flatten()
    trace = []

    def fun(x):
        p = ModelParams.unflatten(base + mask_vec * (x - base), space)
        obj, grad = _objective_and_grad(p, batch, config)
        if not np.isfinite(obj):
            raise FloatingPointError("non-finite objective")
        return -obj / batch.n, -(grad.flatten() * mask_vec) / batch.n

    def callback(xk):
        trace.append(-fun(xk)[0] * batch.n)

    trace.append(-fun(base)[0] * batch.n)
    res = minimize(fun, base, jac=True, method="L-BFGS-B", callback=callback,
                   options={"maxiter": config.max_epochs, "ftol": config.convergence_tol, "gtol": 1e-9})
    final = ModelParams.unflatten(base + mask_vec * (res.x - base), space).zero_null_rows()
    return FitResult(final, -res.fun * batch.n, trace, int(res.nit), bool(res.success))


# --- context tables -------------------------------------------------------------

CONTEXT_AXES = ("action-grasp", "action-attribute", "grasp-attribute")


def _reduce(x: np.ndarray, axes: tuple[int, ...], mode: str) -> np.ndarray:
    if mode == "sum":
        return x.sum(axis=axes)
    if mode == "logsumexp":
        return logsumexp(x, axis=axes)
    raise ValueError("mode must be 'sum' or 'logsumexp'")


def marginalize_context(params: ModelParams, axis: str, mode: str = "sum") -> np.ndarray:
    """Pairwise strength table from the functional tensor.

    Both hands are pooled by averaging the left-side and right-side reductions
    (``mode="sum"``) or their exponentials (``mode="logsumexp"``), so in sum
    mode the table total equals the tensor total.

    * ``action-grasp``: (Na, Ng+1)
    * ``action-attribute``: (Na, No+1)
    * ``grasp-attribute``: (Ng+1, No+1), grasp and attribute of the same hand
    """
    a = params.alpha  # k, gl, gr, ml, mr
    if axis == "action-grasp":
        left = _reduce(a, (2, 3, 4), mode)
        right = _reduce(a, (1, 3, 4), mode)
    elif axis == "action-attribute":
        left = _reduce(a, (1, 2, 4), mode)
        right = _reduce(a, (1, 2, 3), mode)
    elif axis == "grasp-attribute":
        left = _reduce(a, (0, 2, 4), mode)
        right = _reduce(a, (0, 1, 3), mode)
    else:
        raise ValueError(f"axis must be one of {CONTEXT_AXES}")
    if mode == "sum":
        return (left + right) / 2
    return np.logaddexp(left, right) - np.log(2.0)


def most_probable_combinations(params: ModelParams, action: int, top_k: int = 5):
    """Top ``(grasp_l, grasp_r, attr_l, attr_r)`` tuples of one action's functional slice.

    Returns ``[(tuple, value), ...]`` in descending value; equal values keep
    row-major index order.
    """
    if not 0 <= action < params.alpha.shape[0]:
        raise IndexError(f"action {action} out of range")
    sl = params.alpha[action]
    flat = sl.ravel()
    order = np.argsort(-flat, kind="stable")[:top_k]
    return [(tuple(int(v) for v in np.unravel_index(i, sl.shape)), float(flat[i])) for i in order]
