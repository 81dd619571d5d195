"""Receding-horizon command optimization with a variance penalty.

Each tick the controller warm-starts from the previous plan (dropped
first command, duplicated last), rolls the model out closed-loop over the
horizon, and improves the command sequence by a batched line search: one
gradient of the loss per round, a log-spaced ladder of step sizes tried
as candidates, best candidate kept.  The previous iterate always competes
too, so the returned loss can never exceed the warm-start loss.

The loss is
    ||s_ref - s_pred||_2  +  c_variance * V  +  c_orig * ||u_orig - u||_2
over the flattened horizon, where V is either the plain norm of the
predicted variances or, in per-state mode, of the variances divided
elementwise by |s_pred| + eps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    Tape,
    Var,
    abs_,
    add_n,
    backward,
    concat,
    csub,
    div,
    exp_,
    l2norm,
    scale,
    shift,
)
from .model import RecurrentState, forward, rollout

VARIANCE_MODES = ("absolute", "per_state")


class ControllerError(RuntimeError):
    """Optimization could not produce a usable plan."""


@dataclass
class ControlConfig:
    n_seq: int = 10
    n_batch: int = 10
    n_epoch: int = 3
    gamma_max: float = 3.0
    c_variance: float = 0.0
    c_orig: float = 0.0
    variance_mode: str = "absolute"
    command_low: float = -3.0   # raw units
    command_high: float = 3.0
    per_state_eps: float = 0.1

    def __post_init__(self):
        if self.n_seq < 1 or self.n_batch < 1 or self.n_epoch < 0:
            raise ValueError("n_seq and n_batch must be >= 1, n_epoch >= 0")
        if self.gamma_max <= 0:
            raise ValueError("gamma_max must be positive")
        if self.variance_mode not in VARIANCE_MODES:
            raise ValueError(f"variance_mode must be one of {VARIANCE_MODES}")
        if self.command_low >= self.command_high:
            raise ValueError("command bounds must satisfy low < high")


@dataclass
class ControlPlan:
    """Optimized command sequence (normalized units) and its rollout."""

    u_seq: np.ndarray           # (n_seq, n_u)
    loss: float
    means: np.ndarray           # (n_seq, n_s)
    variances: np.ndarray       # (n_seq, n_s)
    initial_loss: float = None  # warm-start loss the optimizer started from

    @classmethod
    def zeros(cls, n_seq, n_u, n_s):
        return cls(np.zeros((n_seq, n_u)), float("inf"),
                   np.zeros((n_seq, n_s)), np.zeros((n_seq, n_s)))


def warm_start(prev_plan):
    """Shift the previous plan one tick: drop the first command, repeat the last."""
    u = np.asarray(prev_plan.u_seq if isinstance(prev_plan, ControlPlan) else prev_plan)
    return np.vstack([u[1:], u[-1:]])


def gamma_schedule(gamma_max, n_batch):
    """Geometric ladder over three decades ending exactly at gamma_max."""
    if n_batch == 1:
        return np.array([float(gamma_max)])
    i = np.arange(n_batch)
    return gamma_max * 10.0 ** (-3.0 * (n_batch - 1 - i) / (n_batch - 1))


def control_loss(means, variances, u_seq, s_ref_seq, u_orig_seq, config):
    """Loss of a rolled-out plan; all arguments in normalized units."""
    d = (np.asarray(s_ref_seq) - np.asarray(means)).ravel()
    loss = float(np.sqrt(np.sum(d * d)))
    if config.c_variance != 0.0:
        v = np.asarray(variances).ravel()
        if config.variance_mode == "per_state":
            v = v / (np.abs(np.asarray(means)).ravel() + config.per_state_eps)
        loss += config.c_variance * float(np.sqrt(np.sum(v * v)))
    if config.c_orig != 0.0:
        du = (np.asarray(u_orig_seq) - np.asarray(u_seq)).ravel()
        loss += config.c_orig * float(np.sqrt(np.sum(du * du)))
    return loss


def _control_loss_node(tape, preds, u_vars, s_ref_seq, u_orig_seq, config):
    mean_flat = concat(tape, [p.mean_node for p in preds])
    terms = [l2norm(tape, csub(tape, np.asarray(s_ref_seq).ravel(), mean_flat))]
    if config.c_variance != 0.0:
        var_flat = exp_(tape, concat(tape, [p.logvar_node for p in preds]))
        if config.variance_mode == "per_state":
            var_flat = div(tape, var_flat,
                           shift(tape, abs_(tape, mean_flat), config.per_state_eps))
        terms.append(scale(tape, l2norm(tape, var_flat), config.c_variance))
    if config.c_orig != 0.0:
        u_flat = concat(tape, u_vars)
        terms.append(scale(
            tape, l2norm(tape, csub(tape, np.asarray(u_orig_seq).ravel(), u_flat)),
            config.c_orig))
    return add_n(tape, terms) if len(terms) > 1 else terms[0]


def line_search_minimize(value_fn, grad_fn, u0, gammas, n_epoch, clamp=None):
    """Batched line search: one gradient per round, all step sizes tried.

    value_fn(u) returns (loss, aux); grad_fn(u) the gradient array.  Each
    round keeps the best of {incumbent} + {clamp(u - gamma * grad)}, so
    the returned loss never exceeds the starting loss.  Ties keep the
    smallest step size (candidates are visited in ascending gamma order).
    Returns (u, loss, aux, starting_loss).
    """
    u_cur = np.asarray(u0, dtype=np.float64)
    if clamp is not None:
        u_cur = clamp(u_cur)
    loss_cur, aux = value_fn(u_cur)
    if not np.isfinite(loss_cur):
        raise ControllerError(f"starting loss is not finite ({loss_cur})")
    initial_loss = loss_cur
    for _ in range(n_epoch):
        grad = grad_fn(u_cur)
        best_loss, best = loss_cur, None
        for gamma in gammas:
            cand = u_cur - gamma * grad
            if clamp is not None:
                cand = clamp(cand)
            loss, cand_aux = value_fn(cand)
            if np.isfinite(loss) and loss < best_loss:
                best_loss, best = loss, (cand, cand_aux)
        if best is not None:
            loss_cur = best_loss
            u_cur, aux = best
    return u_cur, loss_cur, aux, initial_loss


def optimize(params, p, state, s_t, s_ref_seq, u_orig_seq, prev_plan, config):
    """Improve the warm-started plan; never returns a loss above the start.

    Each round computes one gradient of the loss with respect to the whole
    command sequence, then evaluates n_batch step sizes from the gamma
    ladder (candidates clamped to the command bounds) with fresh rollouts.
    The incumbent plan competes implicitly; ties keep the smallest step.
    """
    s_ref_seq = np.asarray(s_ref_seq, dtype=np.float64)
    u_orig_seq = np.asarray(u_orig_seq, dtype=np.float64)
    if s_ref_seq.shape != (config.n_seq, params.config.n_s):
        raise ControllerError(
            f"reference sequence has shape {s_ref_seq.shape}, "
            f"expected ({config.n_seq}, {params.config.n_s})")

    lo = (config.command_low - params.stats.mean_u) / params.stats.std_u
    hi = (config.command_high - params.stats.mean_u) / params.stats.std_u

    def value_fn(u_seq):
        tape = Tape()
        preds = rollout(params, state, s_t, list(u_seq), p, tape)
        means = np.array([pr.mean for pr in preds])
        variances = np.array([pr.variance for pr in preds])
        loss = control_loss(means, variances, u_seq, s_ref_seq, u_orig_seq, config)
        return loss, (means, variances)

    def grad_fn(u_seq):
        tape = Tape()
        u_vars = [Var(u_seq[i]) for i in range(config.n_seq)]
        preds = rollout(params, state, s_t, u_vars, p, tape)
        _control_loss_node(tape, preds, u_vars, s_ref_seq, u_orig_seq, config)
        grads = backward(tape, 1.0)
        return np.array([grads[v] for v in u_vars])

    u_cur, loss_cur, (means, variances), loss0 = line_search_minimize(
        value_fn, grad_fn, warm_start(prev_plan),
        gammas=gamma_schedule(config.gamma_max, config.n_batch),
        n_epoch=config.n_epoch,
        clamp=lambda u: np.clip(u, lo, hi),
    )
    return ControlPlan(u_seq=u_cur, loss=loss_cur, means=means,
                       variances=variances, initial_loss=loss0)


class Controller:
    """Tick-by-tick receding-horizon controller around one model.

    Keeps the live recurrent state (never reset during an experiment), the
    previous plan for warm starting, and the pair fed last tick so the
    state can be advanced exactly one step behind the measurements.  The
    bias attribute p may be replaced between ticks by an adaptation loop.
    """

    def __init__(self, params, config, p):
        self.params = params
        self.config = config
        self.p = np.asarray(p, dtype=np.float64)
        self.state = RecurrentState.zeros(params.config.layer_widths[4])
        self.plan = ControlPlan.zeros(config.n_seq, params.config.n_u, params.config.n_s)
        self._prev_pair = None
        self.last_error = None

    def step(self, s_raw, s_ref_seq_raw, u_orig_seq_raw=None):
        """Consume one measurement, return the raw command to emit.

        On optimizer failure the command is all zeros (safe stop) and the
        error is kept in last_error.
        """
        stats = self.params.stats
        s_n = stats.normalize_state(s_raw)
        if self._prev_pair is not None:
            prev_s, prev_u = self._prev_pair
            _, self.state = forward(
                self.params, self.state, prev_s, prev_u, self.p, Tape())
        s_ref_n = np.array([stats.normalize_state(row) for row in np.asarray(s_ref_seq_raw)])
        if u_orig_seq_raw is None:
            u_orig_seq_raw = np.asarray(s_ref_seq_raw)
        u_orig_n = np.array([stats.normalize_command(row) for row in np.asarray(u_orig_seq_raw)])
        try:
            plan = optimize(self.params, self.p, self.state, s_n,
                            s_ref_n, u_orig_n, self.plan, self.config)
        except ControllerError as err:
            self.last_error = err
            u_raw = np.zeros(self.params.config.n_u)
            self._prev_pair = (s_n, stats.normalize_command(u_raw))
            return u_raw
        self.plan = plan
        u_n = plan.u_seq[0]
        u_raw = np.clip(stats.denormalize_command(u_n),
                        self.config.command_low, self.config.command_high)
        self._prev_pair = (s_n, u_n)
        return u_raw
