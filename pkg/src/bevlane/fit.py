"""Height recovery from flat-ground labels, by closed form and by direct descent.

The point being demonstrated: the z channel never appears in the 2D labels,
yet minimizing the width- and height-consistency terms over z (everything else
frozen) recovers the true elevation profile.  The losses only see z through
the lift x = x' * (h - z) / h, so a one-parameter scale family of profiles is
loss-equivalent; pinning the height at a single step removes it.

`closed_form_z` is the non-iterative version of the same fact for straight
constant-width roads: measured row gaps W'_j satisfy W'_j (h - z_j) = const,
so declaring the height z_ref at one reference step determines every other
step as z_j = h - (h - z_ref) * W'_ref / W'_j.  It doubles as an independent
oracle for the descent path.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .anchors import AnchorTensor, PROB_ACTIVE_THRESHOLD, VIS_DECODE_THRESHOLD
from .errors import DivergedError, InvalidInputError
from .geometry import CameraPose
from .losses import (
    LossWeights,
    height_loss,
    ordered_active_layer1,
    second_layer_mask,
    width_loss,
    width_profile_3d,
    z_loss,
)

log = logging.getLogger(__name__)

_MAX_HALVINGS = 60
_SUFF_DECREASE = 0.5
_STEP_GROWTH = 1.5
_STALL_WINDOW = 400
_POLISH_WINDOW = 50
_STALL_RATIO = 0.97
# Stall exits are only allowed once the loss is small; scenes whose optimum is
# exactly zero pass through this band quickly, so the exit effectively fires
# only on arc-approximation plateaus, which have no exact zero to reach.
_STALL_FLOOR = 1e-4


@dataclass(frozen=True)
class FitConfig:
    """Accelerated descent with line search and an optional smoothing lead-in.

    The weak objective is piecewise linear in z and plain subgradient steps
    wedge on its kinks long before the minimum, so the main stage minimizes a
    Huber-smoothed surrogate (`continuation_delta`) down to `tol`; on scenes
    where the residuals are exactly satisfiable both objectives share the same
    minimizer, so nothing is given up.  A short polish on the requested
    objective (`smooth_delta`, default exact L1) finishes the job.
    """

    max_steps: int = 12000
    polish_steps: int = 300
    tol: float = 1e-12
    step0: float = 1.0
    polish_step0: float = 0.01
    smooth_delta: float | None = None
    continuation_delta: float | None = 1.0
    weights: LossWeights = LossWeights()
    include_first_step: bool = False

    def __post_init__(self):
        if self.max_steps < 1 or self.polish_steps < 0:
            raise InvalidInputError("step budgets must be positive (polish may be 0)")
        if self.tol < 0 or self.step0 <= 0 or self.polish_step0 <= 0:
            raise InvalidInputError("tol must be >= 0 and step sizes positive")
        for name in ("smooth_delta", "continuation_delta"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise InvalidInputError(f"{name} must be positive or None")


@dataclass
class FitReport:
    initial_loss: float
    final_loss: float
    n_steps: int
    n_evals: int
    converged: bool
    pinned_step: int | None
    history: list[float] = field(default_factory=list)


def bev_row_widths(tensor: AnchorTensor, mask: np.ndarray | None = None):
    """Per-step lateral gaps between laterally adjacent active layer-1 lanes.

    Gaps are plain differences of flat-ground x at the same step, the quantity
    the closed form needs; both anchors must be visible at the step.  Returns
    (widths (P, Y), valid (P, Y), pairs) like the 3D width profile.
    """
    if mask is None:
        mask = second_layer_mask(tensor)
    order = [i for i in ordered_active_layer1(tensor) if not mask[i]]
    if len(order) < 2:
        raise InvalidInputError("need at least two active unmasked lanes")
    abs_x = tensor.abs_x()
    vis = tensor.vis >= VIS_DECODE_THRESHOLD
    pairs = list(zip(order[:-1], order[1:]))
    widths = np.empty((len(pairs), tensor.grid.n_steps))
    valid = np.empty((len(pairs), tensor.grid.n_steps), dtype=bool)
    for p, (a, b) in enumerate(pairs):
        widths[p] = np.abs(abs_x[b, 0] - abs_x[a, 0])
        valid[p] = vis[a, 0] & vis[b, 0]
    return widths, valid, pairs


def closed_form_z(
    widths: np.ndarray,
    height_m: float,
    ref_index: int | None = None,
    ref_z: float = 0.0,
):
    """z_j = h - (h - z_ref) * W_ref / W_j for a per-step width sequence.

    Scaling every camera-to-road distance (h - z_j) by a common factor leaves
    all width ratios unchanged, so the profile is determined only once one
    step's height is declared; `ref_z` is that declaration (default 0, the
    same gauge the iterative fit pins).  Non-finite or non-positive widths
    are treated as missing.  The reference defaults to the first usable step.
    Returns (z, valid, ref_index).
    """
    w = np.asarray(widths, dtype=float)
    if w.ndim != 1:
        raise InvalidInputError("widths must be one-dimensional")
    if not np.isfinite(ref_z) or ref_z >= height_m:
        raise InvalidInputError("ref_z must be finite and below the camera height")
    usable = np.isfinite(w) & (w > 0)
    if ref_index is None:
        idx = np.flatnonzero(usable)
        if idx.size == 0:
            raise InvalidInputError("no usable widths")
        ref_index = int(idx[0])
    if not usable[ref_index]:
        raise InvalidInputError(f"reference step {ref_index} has no usable width")
    z = np.full(w.shape, np.nan)
    z[usable] = height_m - (height_m - ref_z) * (w[ref_index] / w[usable])
    return z, usable, ref_index


def closed_form_z_profile(
    tensor: AnchorTensor,
    pose: CameraPose,
    mask: np.ndarray | None = None,
    *,
    ref_index: int | None = None,
    ref_z: float = 0.0,
):
    """Closed-form height per anchor step from the mean flat-ground row gap.

    Valid on straight constant-width scenes, where every lane pair measures
    the same gap and the true width is constant; the mean then loses nothing.
    Returns (z (Y,), valid (Y,), ref_index).
    """
    widths, valid, _ = bev_row_widths(tensor, mask)
    any_valid = valid.any(axis=0)
    mean_w = np.full(tensor.grid.n_steps, np.nan)
    for j in np.flatnonzero(any_valid):
        mean_w[j] = widths[valid[:, j], j].mean()
    return closed_form_z(mean_w, pose.height_m, ref_index=ref_index, ref_z=ref_z)


def _require_finite(loss, grad, history):
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise DivergedError("loss or gradient became non-finite", trace=history[-50:])


def _minimize(p0, evaluate, pre, *, max_steps, target, step0, stall_window):
    """Nesterov-accelerated descent with a backtracking line search.

    Momentum restarts whenever it stops paying, so the accepted-loss sequence
    is monotone non-increasing; the line search halves a growing trial step
    until a sufficient-decrease test holds, which settles onto the kinks of
    L1 terms like bisection would.  A stall exit fires once the loss sits
    below the floor but stops improving across a window, which is how runs
    whose best reachable loss is positive terminate.  Returns
    (p, loss, history, n_steps, n_evals, reason).
    """
    p = p0.copy()
    loss, grad = evaluate(p)
    _require_finite(loss, grad, [float(loss)])
    history = [float(loss)]
    n_evals = 1
    if loss <= target:
        return p, loss, history, 0, n_evals, "target"
    best_p, best_loss = p.copy(), loss
    y = p.copy()
    t_mom = 1.0
    s = step0
    reason = "max_steps"
    steps = 0
    for _ in range(max_steps):
        f_y, g_y = evaluate(y)
        n_evals += 1
        _require_finite(f_y, g_y, history)
        d = g_y * pre
        descent = float(g_y @ d)
        if descent <= 0:
            reason = "stationary"
            break
        s *= _STEP_GROWTH
        accepted = False
        f_c = f_y
        cand = y
        for _ in range(_MAX_HALVINGS):
            cand = y - s * d
            f_c, _ = evaluate(cand)
            n_evals += 1
            if np.isfinite(f_c) and f_c <= f_y - _SUFF_DECREASE * s * descent:
                accepted = True
                break
            s *= 0.5
        if not accepted:
            if t_mom > 1.0:
                # the lookahead point is unworkable; drop momentum and retry
                y = p.copy()
                t_mom = 1.0
                s = step0
                continue
            reason = "wedged"
            break
        if f_c > loss:
            # progress relative to the lookahead but not the iterate: restart
            y = p.copy()
            t_mom = 1.0
            history.append(float(loss))
            continue
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom * t_mom))
        y = cand + ((t_mom - 1.0) / t_next) * (cand - p)
        p, loss, t_mom = cand, f_c, t_next
        steps += 1
        history.append(float(loss))
        if loss < best_loss:
            best_p, best_loss = p.copy(), loss
        if loss <= target:
            reason = "target"
            break
        k = len(history) - 1 - stall_window
        if k >= 0 and loss < _STALL_FLOOR and loss > _STALL_RATIO * history[k]:
            reason = "stalled"
            break
    return best_p, best_loss, history, steps, n_evals, reason


def _stages(cfg: FitConfig):
    """(delta, max steps, initial step, target, stall window) per stage."""
    main = (cfg.smooth_delta, cfg.max_steps, cfg.step0, cfg.tol, _STALL_WINDOW)
    lead = cfg.continuation_delta
    if lead is None or cfg.polish_steps == 0:
        return [main]
    if cfg.smooth_delta is not None and cfg.smooth_delta >= lead:
        return [main]
    return [
        (lead, cfg.max_steps, cfg.step0, cfg.tol, _STALL_WINDOW),
        (cfg.smooth_delta, cfg.polish_steps, cfg.polish_step0, 0.0, _POLISH_WINDOW),
    ]


def _free_z_mask(tensor: AnchorTensor, mask: np.ndarray) -> np.ndarray:
    """Entries of z that the weak losses can actually see."""
    free = np.zeros(tensor.z.shape, dtype=bool)
    active = (tensor.prob[:, 0] >= PROB_ACTIVE_THRESHOLD) & ~mask
    free[active, 0, :] = tensor.vis[active, 0, :] >= VIS_DECODE_THRESHOLD
    return free


def first_pinnable_step(tensor: AnchorTensor, pose: CameraPose, mask: np.ndarray | None = None) -> int:
    """First anchor step that a width measures directly.

    The pin must sit where a width column reads the lane position itself, not
    merely its chord; a chord-only step constrains the scale family so weakly
    that the fit's flattest mode drifts.  Gauge-sensitive comparisons against
    the closed form should reference this same step.
    """
    if mask is None:
        mask = second_layer_mask(tensor)
    profile = width_profile_3d(tensor, pose)
    keep = np.array([not (mask[a] or mask[b]) for a, b in profile.pairs], dtype=bool)
    if not keep.any():
        raise InvalidInputError("no step has a valid width pair; nothing to pin")
    cols = np.flatnonzero(profile.valid[keep].any(axis=0))
    if cols.size == 0:
        raise InvalidInputError("no step has a valid width pair; nothing to pin")
    return int(cols[0])


def fit_ws(
    tensor: AnchorTensor,
    pose: CameraPose,
    cfg: FitConfig = FitConfig(),
    pin_step: int | None = None,
    pin_z: float | np.ndarray | None = 0.0,
    mask: np.ndarray | None = None,
):
    """Recover the z channel by minimizing the width and height terms alone.

    Everything except z is frozen; the z column at `pin_step` (default: the
    first step with a valid width pair) is set to `pin_z` and held fixed to
    remove the scale freedom.  The default pin of 0 declares the road flat at
    the nearest measured step, the same gauge `closed_form_z` uses; pass
    pin_z=None to keep the values already in the tensor instead.  Far-step
    heights react to a z change much more weakly than near ones, so descent
    directions are preconditioned by (1 + y/h)^-2 to even that out.  Returns
    a new tensor and a FitReport; the input is not modified.
    """
    if mask is None:
        mask = second_layer_mask(tensor)
    if pin_step is None:
        pin_step = first_pinnable_step(tensor, pose, mask)
    if not (0 <= pin_step < tensor.grid.n_steps):
        raise InvalidInputError(f"pin_step {pin_step} out of range")
    work = tensor.copy()
    if pin_z is not None:
        work.z[:, :, pin_step] = pin_z
    free = _free_z_mask(work, mask)
    free[:, :, pin_step] = False
    rows = np.broadcast_to(work.grid.y_steps_array(), work.z.shape)
    pre = 1.0 / (1.0 + rows[free] / pose.height_m) ** 2
    w = cfg.weights

    def make_objective(delta):
        def evaluate(p):
            work.z[free] = p
            l_w, g_w = width_loss(work, pose, mask=mask, smooth_delta=delta)
            l_h, g_h = height_loss(
                work, mask=mask, include_first_step=cfg.include_first_step,
                smooth_delta=delta,
            )
            loss = w.width * l_w + w.height * l_h
            grad = w.width * g_w.d_z + w.height * g_h.d_z
            return loss, grad[free]
        return evaluate

    return _run_fit(work, free, make_objective, pre, _stages(cfg), pin_step)


def fit_sup(
    tensor: AnchorTensor,
    gt: AnchorTensor,
    cfg: FitConfig = FitConfig(),
):
    """Supervised counterpart: descend the direct z regression loss instead.

    Exists to compare convergence behaviour against the weak route on equal
    footing; the minimizer is the ground-truth z itself, no pin needed.  The
    exact L1 term has the same uniform-subgradient wedging problem as the weak
    terms (the line search stalls once most residuals have settled), so one
    smoothed stage runs down to `tol`; at that level the height RMS error is
    already below sqrt(2 * tol * delta / n).
    """
    work = tensor.copy()
    free = (gt.prob >= PROB_ACTIVE_THRESHOLD)[:, :, None] & (gt.vis >= VIS_DECODE_THRESHOLD)
    w = cfg.weights

    def make_objective(delta):
        def evaluate(p):
            work.z[free] = p
            l_z, g_z = z_loss(work, gt, smooth_delta=delta)
            return w.z * l_z, w.z * g_z.d_z[free]
        return evaluate

    delta = cfg.continuation_delta if cfg.continuation_delta is not None else cfg.smooth_delta
    pre = np.ones(int(free.sum()))
    stages = [(delta, cfg.max_steps, cfg.step0, cfg.tol, _STALL_WINDOW)]
    return _run_fit(work, free, make_objective, pre, stages, None)


def _run_fit(work, free, make_objective, pre, stages, pin_step):
    if not free.any():
        loss, _ = make_objective(stages[-1][0])(np.empty(0))
        log.warning("nothing to optimize: no free z entries")
        return work, FitReport(
            initial_loss=float(loss), final_loss=float(loss), n_steps=0,
            n_evals=1, converged=True, pinned_step=pin_step, history=[float(loss)],
        )
    p = work.z[free]
    history: list[float] = []
    n_steps = 0
    n_evals = 0
    converged = True
    loss = np.inf
    for delta, max_steps, step0, target, window in stages:
        p, loss, hist, steps, evals, reason = _minimize(
            p, make_objective(delta), pre,
            max_steps=max_steps, target=target, step0=step0, stall_window=window,
        )
        history.extend(hist)
        n_steps += steps
        n_evals += evals
        if reason == "max_steps" and target > 0:
            converged = False
            log.info("fit stage (delta=%s) stopped at max_steps=%d", delta, max_steps)
    work.z[free] = p
    return work, FitReport(
        initial_loss=history[0], final_loss=float(loss), n_steps=n_steps,
        n_evals=n_evals, converged=converged, pinned_step=pin_step, history=history,
    )
