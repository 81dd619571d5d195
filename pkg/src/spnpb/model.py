"""Stochastic predictive network with parametric bias.

The network maps the current state s_t, command u_t, and a small
per-environment bias vector p, together with the recurrent state of two
LSTM layers, to a Gaussian over the next state: a mean vector and a
per-dimension variance produced by an exponential head.  Layer layout,
input to output:

    concat(u, s, p) -> dense+tanh x4 -> LSTM -> LSTM -> dense+tanh x3
                    -> dense (linear, width 2*n_s)

The first n_s outputs are the predicted mean; the last n_s are log
variance, clamped to [-10, 10] before exponentiation.  All values are in
normalized (z-scored) units; NormStats carries the transform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    ShapeError,
    Tape,
    Var,
    affine,
    as_var,
    clip_,
    concat,
    slice_,
    tanh_,
)
from .layers import DenseLayer, LstmCell, lstm_apply

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0

FORMAT_VERSION = 1

_HIDDEN_WIDTHS = (50, 20, 10, 10, 10, 10, 20, 50)


@dataclass(frozen=True)
class ModelConfig:
    """Network dimensions; widths are fixed apart from the state/command/bias sizes."""

    n_s: int
    n_u: int
    n_p: int = 2
    tick_period: float = 0.2

    def __post_init__(self):
        if self.n_s < 1 or self.n_u < 1 or self.n_p < 1:
            raise ValueError("n_s, n_u, and n_p must all be positive")
        if self.tick_period <= 0:
            raise ValueError("tick_period must be positive")

    @property
    def n_in(self):
        return self.n_u + self.n_s + self.n_p

    @property
    def layer_widths(self):
        """Output width of each of the ten layers; entries 5 and 6 are the LSTMs."""
        return (self.n_in,) + _HIDDEN_WIDTHS + (2 * self.n_s,)


class NormStats:
    """Per-dimension z-score statistics for states and commands.

    Standard deviations are floored at 1e-6 at construction so degenerate
    dimensions cannot produce division blowups.
    """

    STD_FLOOR = 1e-6

    def __init__(self, mean_s, std_s, mean_u, std_u):
        self.mean_s = np.asarray(mean_s, dtype=np.float64)
        self.std_s = np.maximum(np.asarray(std_s, dtype=np.float64), self.STD_FLOOR)
        self.mean_u = np.asarray(mean_u, dtype=np.float64)
        self.std_u = np.maximum(np.asarray(std_u, dtype=np.float64), self.STD_FLOOR)
        if self.mean_s.shape != self.std_s.shape or self.mean_u.shape != self.std_u.shape:
            raise ShapeError("normalization mean/std shapes must match")

    def normalize_state(self, s):
        return (np.asarray(s, dtype=np.float64) - self.mean_s) / self.std_s

    def normalize_command(self, u):
        return (np.asarray(u, dtype=np.float64) - self.mean_u) / self.std_u

    def denormalize_state(self, s):
        return np.asarray(s, dtype=np.float64) * self.std_s + self.mean_s

    def denormalize_command(self, u):
        return np.asarray(u, dtype=np.float64) * self.std_u + self.mean_u

    def denormalize_state_sigma(self, sigma):
        """Map a predicted standard deviation back to raw units."""
        return np.asarray(sigma, dtype=np.float64) * self.std_s


def normalize(stats, s, u):
    """Z-score a state/command pair."""
    return stats.normalize_state(s), stats.normalize_command(u)


@dataclass(frozen=True)
class RecurrentState:
    """The (c, h) pairs of both LSTM layers.  Treated as a value."""

    h1: np.ndarray
    c1: np.ndarray
    h2: np.ndarray
    c2: np.ndarray

    @classmethod
    def zeros(cls, hidden=10):
        return cls(np.zeros(hidden), np.zeros(hidden), np.zeros(hidden), np.zeros(hidden))


@dataclass
class GaussianPrediction:
    """Predicted next-state distribution in normalized units.

    mean_node and logvar_node are the tape nodes the values came from, so
    losses can be built on the same tape.
    """

    mean: np.ndarray
    variance: np.ndarray
    mean_node: Var = field(repr=False, default=None)
    logvar_node: Var = field(repr=False, default=None)


class ModelParams:
    """All trainable tensors plus normalization stats and the PB table.

    pb_table has one row per training trial (the per-trial bias vectors);
    pb_labels carries the matching environment labels.
    """

    def __init__(self, config, dense_in, lstm1, lstm2, dense_out, stats,
                 pb_table=None, pb_labels=None):
        self.config = config
        self.dense_in = list(dense_in)
        self.lstm1 = lstm1
        self.lstm2 = lstm2
        self.dense_out = list(dense_out)
        self.stats = stats
        if pb_table is None:
            pb_table = np.zeros((0, config.n_p))
        self.pb_table = np.asarray(pb_table, dtype=np.float64)
        self.pb_labels = list(pb_labels) if pb_labels is not None else []
        self._validate()

    def _validate(self):
        widths = self.config.layer_widths
        if len(self.dense_in) != 4 or len(self.dense_out) != 4:
            raise ShapeError("expected four dense layers on each side of the LSTMs")
        ins = [self.config.n_in, widths[0], widths[1], widths[2]]
        for layer, n_in, n_out in zip(self.dense_in, ins, widths[:4]):
            if (layer.n_in, layer.n_out) != (n_in, n_out):
                raise ShapeError(
                    f"input dense layer is {layer.n_out}x{layer.n_in}, "
                    f"expected {n_out}x{n_in}"
                )
        outs = widths[6:]
        ins = [widths[5], widths[6], widths[7], widths[8]]
        for layer, n_in, n_out in zip(self.dense_out, ins, outs):
            if (layer.n_in, layer.n_out) != (n_in, n_out):
                raise ShapeError(
                    f"output dense layer is {layer.n_out}x{layer.n_in}, "
                    f"expected {n_out}x{n_in}"
                )
        if self.lstm1.hidden != widths[4] or self.lstm2.hidden != widths[5]:
            raise ShapeError("LSTM hidden sizes do not match the configured widths")
        if self.pb_table.ndim != 2 or self.pb_table.shape[1] != self.config.n_p:
            raise ShapeError(f"pb table must be (k, {self.config.n_p})")
        if self.pb_labels and len(self.pb_labels) != self.pb_table.shape[0]:
            raise ShapeError("pb labels must align with pb table rows")

    @classmethod
    def init(cls, config, stats, rng, n_trials=0, pb_labels=None):
        """Fresh parameters: Glorot-uniform weights, zero biases
        (LSTM forget-gate bias 1), PB rows all zero."""
        w = config.layer_widths
        ins = [config.n_in, w[0], w[1], w[2]]
        dense_in = [DenseLayer.init(i, o, rng) for i, o in zip(ins, w[:4])]
        lstm1 = LstmCell.init(w[3], w[4], rng)
        lstm2 = LstmCell.init(w[4], w[5], rng)
        ins = [w[5], w[6], w[7], w[8]]
        dense_out = [DenseLayer.init(i, o, rng) for i, o in zip(ins, w[6:])]
        return cls(config, dense_in, lstm1, lstm2, dense_out, stats,
                   pb_table=np.zeros((n_trials, config.n_p)), pb_labels=pb_labels)

    def weight_vars(self):
        """All weight Vars in the declared (serialization) order."""
        out = []
        for layer in self.dense_in:
            out.extend((layer.W, layer.b))
        for cell in (self.lstm1, self.lstm2):
            out.extend((cell.Wx, cell.Wh, cell.b))
        for layer in self.dense_out:
            out.extend((layer.W, layer.b))
        return out

    def weight_arrays(self):
        return [v.value for v in self.weight_vars()]

    def pb_for_label(self, label):
        """Centroid of the PB rows trained under the given environment label."""
        rows = [i for i, lab in enumerate(self.pb_labels) if lab == label]
        if not rows:
            raise KeyError(f"no trained bias rows for label {label!r}")
        return self.pb_table[rows].mean(axis=0)


def _step_nodes(params, state_nodes, u, s, p, tape):
    """Core forward pass on tape nodes; returns (mean, logvar, new state nodes)."""
    h1, c1, h2, c2 = state_nodes
    x = concat(tape, (u, s, p))
    for layer in params.dense_in:
        x = tanh_(tape, affine(tape, layer.W, layer.b, x))
    h1, c1 = lstm_apply(params.lstm1, x, h1, c1, tape)
    h2, c2 = lstm_apply(params.lstm2, h1, h2, c2, tape)
    x = h2
    for layer in params.dense_out[:-1]:
        x = tanh_(tape, affine(tape, layer.W, layer.b, x))
    last = params.dense_out[-1]
    out = affine(tape, last.W, last.b, x)
    n_s = params.config.n_s
    mean = slice_(tape, out, 0, n_s)
    logvar = clip_(tape, slice_(tape, out, n_s, 2 * n_s), LOGVAR_MIN, LOGVAR_MAX)
    return mean, logvar, (h1, c1, h2, c2)


def _wrap_state(state):
    return (Var(state.h1), Var(state.c1), Var(state.h2), Var(state.c2))


def _check_step_inputs(params, state, s, u, p):
    cfg = params.config
    if np.shape(as_var(s).value) != (cfg.n_s,):
        raise ShapeError(f"state input must have shape ({cfg.n_s},)")
    if np.shape(as_var(u).value) != (cfg.n_u,):
        raise ShapeError(f"command input must have shape ({cfg.n_u},)")
    if np.shape(as_var(p).value) != (cfg.n_p,):
        raise ShapeError(f"bias input must have shape ({cfg.n_p},)")
    hidden = cfg.layer_widths[4]
    for part in (state.h1, state.c1, state.h2, state.c2):
        if np.shape(part) != (hidden,):
            raise ShapeError("recurrent state vectors must match the LSTM hidden size")


def forward(params, state, s, u, p, tape):
    """One prediction step from normalized inputs.

    Returns (GaussianPrediction, advanced RecurrentState); the input state
    is not mutated.  s, u, p may be arrays or Vars; pass Vars to take
    gradients with respect to them.
    """
    _check_step_inputs(params, state, s, u, p)
    mean, logvar, nodes = _step_nodes(
        params, _wrap_state(state), as_var(u), as_var(s), as_var(p), tape)
    pred = GaussianPrediction(
        mean=mean.value,
        variance=np.exp(logvar.value),
        mean_node=mean,
        logvar_node=logvar,
    )
    new_state = RecurrentState(*(n.value for n in nodes))
    return pred, new_state


def rollout(params, state, s_t, u_seq, p, tape):
    """Closed-loop rollout feeding each predicted mean back as the next state.

    The whole rollout lives on one tape, so gradients of anything built
    from the returned predictions flow to u_seq (and p).  Returns one
    GaussianPrediction per command.
    """
    u_seq = list(u_seq)
    if not u_seq:
        raise ValueError("rollout needs at least one command")
    _check_step_inputs(params, state, s_t, u_seq[0], p)
    nodes = _wrap_state(state)
    p = as_var(p)
    s_node = as_var(s_t)
    preds = []
    for u in u_seq:
        u = as_var(u)
        if u.value.shape != (params.config.n_u,):
            raise ShapeError(f"command input must have shape ({params.config.n_u},)")
        mean, logvar, nodes = _step_nodes(params, nodes, u, s_node, p, tape)
        preds.append(GaussianPrediction(
            mean=mean.value,
            variance=np.exp(logvar.value),
            mean_node=mean,
            logvar_node=logvar,
        ))
        s_node = mean
    return preds


# ---------------------------------------------------------------------------
# persistence


def _dense_to_dict(layer):
    return {"w": layer.W.value.tolist(), "b": layer.b.value.tolist()}


def _lstm_to_dict(cell):
    return {
        "wx": cell.Wx.value.tolist(),
        "wh": cell.Wh.value.tolist(),
        "b": cell.b.value.tolist(),
    }


def save_model(params, path):
    """Write the model as self-describing JSON.

    Floats are serialized with Python's shortest round-trip repr, so a
    save/load cycle reproduces every 64-bit value exactly.
    """
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "spnpb-model",
        "input_order": ["u", "s", "p"],
        "gate_order": ["input", "forget", "output", "candidate"],
        "config": {
            "n_s": params.config.n_s,
            "n_u": params.config.n_u,
            "n_p": params.config.n_p,
            "tick_period": params.config.tick_period,
        },
        "norm": {
            "mean_s": params.stats.mean_s.tolist(),
            "std_s": params.stats.std_s.tolist(),
            "mean_u": params.stats.mean_u.tolist(),
            "std_u": params.stats.std_u.tolist(),
        },
        "dense_in": [_dense_to_dict(l) for l in params.dense_in],
        "lstm": [_lstm_to_dict(params.lstm1), _lstm_to_dict(params.lstm2)],
        "dense_out": [_dense_to_dict(l) for l in params.dense_out],
        "pb": {
            "labels": list(params.pb_labels),
            "vectors": params.pb_table.tolist(),
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("kind") != "spnpb-model":
        raise ValueError(f"{path} is not a model file")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {version!r}")
    cfg = ModelConfig(
        n_s=doc["config"]["n_s"],
        n_u=doc["config"]["n_u"],
        n_p=doc["config"]["n_p"],
        tick_period=doc["config"]["tick_period"],
    )
    stats = NormStats(
        doc["norm"]["mean_s"], doc["norm"]["std_s"],
        doc["norm"]["mean_u"], doc["norm"]["std_u"],
    )
    dense_in = [DenseLayer(d["w"], d["b"]) for d in doc["dense_in"]]
    lstm1, lstm2 = (LstmCell(d["wx"], d["wh"], d["b"]) for d in doc["lstm"])
    dense_out = [DenseLayer(d["w"], d["b"]) for d in doc["dense_out"]]
    pb = doc.get("pb", {})
    vectors = np.asarray(pb.get("vectors", []), dtype=np.float64)
    if vectors.size == 0:
        vectors = np.zeros((0, cfg.n_p))
    return ModelParams(
        cfg, dense_in, lstm1, lstm2, dense_out, stats,
        pb_table=vectors, pb_labels=pb.get("labels", []),
    )
