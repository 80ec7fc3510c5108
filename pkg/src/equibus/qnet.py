"""Message passing Q-network over candidate stops, in plain numpy.

Architecture (every map is affine followed by ReLU unless noted)::

    mu0_b     = relu(W1 x_b + b1)
    w_ub      = relu(W2 [x_u; x_b] + b2)                 per neighbour pair, fixed over rounds
    m_b^{t+1} = relu(W3_t [mu_b^t; mean_u mu_u^t; mean_u w_ub] + b3_t)
    mu_b^{t+1}= relu(W4_t [mu_b^t; m_b^{t+1}] + b4_t)
    Q(b, l)   = W5 [mu_b^T; mean_{u in l} mu_u^T] + b5   (linear)

Neighbours of b are its predecessor and successor on its line.  Means over an
empty neighbourhood are zero vectors.  Gradients are analytic; the TD target
is held constant.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CheckpointError, ConfigurationError
from .mdp import Action, LineAssignment
from .territory import METRO, Scenario
from .transit_graph import BusLine

CHECKPOINT_FORMAT = "equibus-qnet"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class QNetConfig:
    k: int
    n: int = 32
    m: int = 16
    n_prime: int = 32
    T: int = 3
    learning_rate: float = 1e-3
    gamma: float = 0.95
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_steps: int = 200
    grad_clip: float | None = 1.0

    def __post_init__(self):
        for name in ("k", "n", "m", "n_prime"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.T < 0:
            raise ConfigurationError("T must be >= 0")
        if not 0 <= self.gamma < 1:
            raise ConfigurationError("gamma must lie in [0, 1)")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ConfigurationError("grad_clip must be > 0 or None")

    @property
    def d_x(self) -> int:
        return self.k + 5

    def shapes(self) -> dict[str, tuple[int, ...]]:
        out = {"W1": (self.n, self.d_x), "b1": (self.n,),
               "W2": (self.m, 2 * self.d_x), "b2": (self.m,)}
        for t in range(self.T):
            out[f"W3_{t}"] = (self.n_prime, 2 * self.n + self.m)
            out[f"b3_{t}"] = (self.n_prime,)
            out[f"W4_{t}"] = (self.n, self.n + self.n_prime)
            out[f"b4_{t}"] = (self.n,)
        out["W5"] = (2 * self.n,)
        out["b5"] = ()
        return out

    def epsilon(self, step: int) -> float:
        if self.eps_steps <= 0 or step >= self.eps_steps:
            return self.eps_end
        frac = step / self.eps_steps
        return self.eps_start + frac * (self.eps_end - self.eps_start)


@dataclass
class QNetworkParams:
    config: QNetConfig
    weights: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        shapes = self.config.shapes()
        if set(self.weights) != set(shapes):
            raise ConfigurationError(
                f"weight names {sorted(self.weights)} do not match config {sorted(shapes)}")
        for name, shape in shapes.items():
            w = np.asarray(self.weights[name], dtype=np.float64)
            if w.shape != shape:
                raise ConfigurationError(f"{name} has shape {w.shape}, expected {shape}")
            if not np.all(np.isfinite(w)):
                raise ConfigurationError(f"{name} has non-finite entries")
            self.weights[name] = w

    @classmethod
    def init(cls, config: QNetConfig, seed=None) -> "QNetworkParams":
        """Glorot-uniform weights, zero biases."""
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        weights = {}
        for name, shape in config.shapes().items():
            if name.startswith("b"):
                weights[name] = np.zeros(shape)
            else:
                fan_out, fan_in = (1, shape[0]) if len(shape) == 1 else shape
                lim = math.sqrt(6.0 / (fan_in + fan_out))
                weights[name] = rng.uniform(-lim, lim, size=shape)
        return cls(config, weights)

    @classmethod
    def zeros(cls, config: QNetConfig) -> "QNetworkParams":
        return cls(config, {k: np.zeros(s) for k, s in config.shapes().items()})

    def copy(self) -> "QNetworkParams":
        return QNetworkParams(self.config, {k: v.copy() for k, v in self.weights.items()})


# --------------------------------------------------------------------------- #
# inputs

@dataclass(frozen=True)
class GraphInput:
    """Everything the network sees about one state."""

    stop_ids: tuple[int, ...]
    features: np.ndarray      # (N, k + 5)
    adjacency: np.ndarray     # (N, N), 1 where stop i directly precedes stop j on a line
    labels: np.ndarray        # (N,) line index in 0..k-1
    k: int

    @property
    def n_stops(self) -> int:
        return len(self.stop_ids)

    def admissible(self) -> np.ndarray:
        """Boolean (N, k) mask of admissible (stop, target line) moves."""
        sizes = np.bincount(self.labels, minlength=self.k)
        mask = np.ones((self.n_stops, self.k), dtype=bool)
        mask[np.arange(self.n_stops), self.labels] = False
        mask[sizes[self.labels] == 1, :] = False
        return mask

    def permuted(self, perm: Sequence[int], stop_ids: Sequence[int] | None = None) -> "GraphInput":
        """Input with stop ``perm[i]`` moved to position ``i``."""
        perm = np.asarray(perm)
        return GraphInput(
            tuple(stop_ids) if stop_ids is not None else tuple(self.stop_ids[i] for i in perm),
            self.features[perm], self.adjacency[np.ix_(perm, perm)], self.labels[perm], self.k)


def _static_columns(s: Scenario, ids: tuple[int, ...]) -> np.ndarray:
    """State-independent columns (x, y, metro distance, PoI proximity), memoised
    on the scenario instance."""
    cache = s.__dict__.setdefault("_feature_static", {})
    if ids in cache:
        return cache[ids]
    xmin, ymin, xmax, ymax = s.extent
    xspan, yspan = max(xmax - xmin, 1e-12), max(ymax - ymin, 1e-12)
    diag = math.hypot(xspan, yspan)
    xy = np.array([[s.stop_by_id[b].location.x, s.stop_by_id[b].location.y] for b in ids])
    out = np.zeros((len(ids), 4))
    out[:, 0] = (xy[:, 0] - xmin) / xspan
    out[:, 1] = (xy[:, 1] - ymin) / yspan
    metro = np.array([[t.location.x, t.location.y] for t in s.stops if t.kind == METRO])
    if len(metro):
        d = np.sqrt(((xy[:, None, :] - metro[None, :, :]) ** 2).sum(-1)).min(axis=1)
        out[:, 2] = np.minimum(d / diag, 1.0)
    else:
        out[:, 2] = 1.0
    if s.pois:
        pxy = np.array([[p.location.x, p.location.y] for p in s.pois])
        pw = np.array([p.weight for p in s.pois])
        walk = 60.0 * np.sqrt(((xy[:, None, :] - pxy[None, :, :]) ** 2).sum(-1)) / s.walk_speed
        prox = (np.maximum(0.0, 1.0 - walk / s.t_max) * pw).sum(axis=1)
        out[:, 3] = prox / pw.sum() if pw.sum() > 0 else 0.0
    out.flags.writeable = False
    cache[ids] = out
    return out


def build_features(s: Scenario, st: LineAssignment, lines: Sequence[BusLine]):
    """Node features and directed adjacency for the candidate stops of ``st``.

    Columns: normalised x, y; one-hot line (k); nearest-metro distance over the
    extent diagonal; walk-only PoI proximity as a share of total PoI weight;
    own line's headway over T_max.
    """
    ids = st.stop_ids
    index = {b: i for i, b in enumerate(ids)}
    k = st.k
    feats = np.zeros((len(ids), k + 5))
    static = _static_columns(s, ids)
    feats[:, :2] = static[:, :2]
    feats[:, k + 2:k + 4] = static[:, 2:]
    labels = np.array(st.labels) - 1
    feats[np.arange(len(ids)), 2 + labels] = 1.0

    adjacency = np.zeros((len(ids), len(ids)))
    headway = {}
    for line in lines:
        for a, b in zip(line.ordered_stops, line.ordered_stops[1:]):
            adjacency[index[a], index[b]] = 1.0
        for b in line.ordered_stops:
            headway[b] = line.headway
    feats[:, k + 4] = [headway.get(b, 0.0) / s.t_max for b in ids]
    return GraphInput(ids, feats, adjacency, labels, k)


# --------------------------------------------------------------------------- #
# forward / backward

def _relu(x):
    return np.maximum(x, 0.0)


def _check(params: QNetworkParams, inp: GraphInput):
    cfg = params.config
    if inp.features.shape[1] != cfg.d_x or inp.k != cfg.k:
        raise ConfigurationError(
            f"input has d_x={inp.features.shape[1]}, k={inp.k}; "
            f"network expects d_x={cfg.d_x}, k={cfg.k}")


def _forward(params: QNetworkParams, inp: GraphInput):
    """Q matrix (N, k) before masking, plus the cache needed for backprop."""
    _check(params, inp)
    W = params.weights
    cfg = params.config
    X = inp.features
    N = inp.n_stops
    nbr = ((inp.adjacency + inp.adjacency.T) > 0).astype(float)
    np.fill_diagonal(nbr, 0.0)
    deg = nbr.sum(axis=1)
    inv_deg = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    P = nbr * inv_deg[:, None]

    h1 = X @ W["W1"].T + W["b1"]
    mu = _relu(h1)

    dst, src = np.nonzero(nbr)  # edge u=src -> b=dst
    e_in = np.concatenate([X[src], X[dst]], axis=1) if len(src) else np.zeros((0, 2 * cfg.d_x))
    pre2 = e_in @ W["W2"].T + W["b2"]
    w_edge = _relu(pre2)
    wbar = np.zeros((N, cfg.m))
    np.add.at(wbar, dst, w_edge * inv_deg[dst][:, None])

    rounds = []
    for t in range(cfg.T):
        z = np.concatenate([mu, P @ mu, wbar], axis=1)
        pre3 = z @ W[f"W3_{t}"].T + W[f"b3_{t}"]
        msg = _relu(pre3)
        y = np.concatenate([mu, msg], axis=1)
        pre4 = y @ W[f"W4_{t}"].T + W[f"b4_{t}"]
        rounds.append((z, pre3, y, pre4))
        mu = _relu(pre4)

    sizes = np.bincount(inp.labels, minlength=inp.k).astype(float)
    L = np.zeros((inp.k, N))
    L[inp.labels, np.arange(N)] = 1.0
    L /= np.maximum(sizes, 1.0)[:, None]
    pool = L @ mu
    n = cfg.n
    q = (mu @ W["W5"][:n])[:, None] + (pool @ W["W5"][n:])[None, :] + W["b5"]
    cache = dict(P=P, h1=h1, src=src, dst=dst, e_in=e_in, pre2=pre2, inv_deg=inv_deg,
                 rounds=rounds, mu=mu, pool=pool, L=L)
    return q, cache


def q_matrix(params: QNetworkParams, inp: GraphInput) -> np.ndarray:
    """(N, k) Q-values with inadmissible moves set to -inf."""
    q, _ = _forward(params, inp)
    return np.where(inp.admissible(), q, -np.inf)


def forward(params: QNetworkParams, features: GraphInput | np.ndarray,
            adjacency: np.ndarray | None = None, st: LineAssignment | None = None
            ) -> dict[Action, float]:
    """Q-value of every admissible action.

    Accepts either a :class:`GraphInput` or the ``(features, adjacency, state)``
    triple.
    """
    if isinstance(features, GraphInput):
        inp = features
    else:
        inp = GraphInput(st.stop_ids, np.asarray(features, float), np.asarray(adjacency, float),
                         np.array(st.labels) - 1, st.k)
    q = q_matrix(params, inp)
    return {Action(inp.stop_ids[i], int(l) + 1): float(q[i, l])
            for i, l in zip(*np.nonzero(np.isfinite(q)))}


def max_q(params: QNetworkParams, inp: GraphInput) -> float:
    """Largest admissible Q-value; 0 when no action is admissible."""
    q = q_matrix(params, inp)
    return float(q.max()) if np.isfinite(q).any() else 0.0


def q_grads(params: QNetworkParams, inp: GraphInput, stop_index: int, line_index: int):
    """Q(S, a) for a = (stop at ``stop_index``, 0-based ``line_index``) and its gradient."""
    q, c = _forward(params, inp)
    W = params.weights
    cfg = params.config
    n = cfg.n
    g = {name: np.zeros_like(w) for name, w in W.items()}
    g["b5"] = np.array(1.0)
    g["W5"][:n] = c["mu"][stop_index]
    g["W5"][n:] = c["pool"][line_index]
    gmu = np.outer(c["L"][line_index], W["W5"][n:])
    gmu[stop_index] += W["W5"][:n]

    gwbar = np.zeros((inp.n_stops, cfg.m))
    for t in reversed(range(cfg.T)):
        z, pre3, y, pre4 = c["rounds"][t]
        gpre4 = gmu * (pre4 > 0)
        g[f"W4_{t}"] = gpre4.T @ y
        g[f"b4_{t}"] = gpre4.sum(axis=0)
        gy = gpre4 @ W[f"W4_{t}"]
        gpre3 = gy[:, n:] * (pre3 > 0)
        g[f"W3_{t}"] = gpre3.T @ z
        g[f"b3_{t}"] = gpre3.sum(axis=0)
        gz = gpre3 @ W[f"W3_{t}"]
        gmu = gy[:, :n] + gz[:, :n] + c["P"].T @ gz[:, n:2 * n]
        gwbar += gz[:, 2 * n:]

    gpre1 = gmu * (c["h1"] > 0)
    g["W1"] = gpre1.T @ inp.features
    g["b1"] = gpre1.sum(axis=0)

    gw = gwbar[c["dst"]] * c["inv_deg"][c["dst"]][:, None]
    gpre2 = gw * (c["pre2"] > 0)
    g["W2"] = gpre2.T @ c["e_in"]
    g["b2"] = gpre2.sum(axis=0)
    return float(q[stop_index, line_index]), g


@dataclass(frozen=True)
class Transition:
    state: GraphInput
    action: Action
    reward: float
    next_state: GraphInput


def td_target(params: QNetworkParams, tr: Transition, gamma: float) -> float:
    return gamma * max_q(params, tr.next_state) + tr.reward


def loss_and_grads(params: QNetworkParams, tr: Transition, gamma: float | None = None):
    """One-step Q-learning loss ``(gamma max_a' Q(S',a') + r - Q(S,a))^2`` and
    its semi-gradient (target held constant)."""
    gamma = params.config.gamma if gamma is None else gamma
    target = td_target(params, tr, gamma)
    i = tr.state.stop_ids.index(tr.action.stop)
    q, dq = q_grads(params, tr.state, i, tr.action.target_line - 1)
    delta = target - q
    return delta * delta, {name: -2.0 * delta * gw for name, gw in dq.items()}


def clip_grads(grads: dict[str, np.ndarray], max_norm: float | None) -> dict[str, np.ndarray]:
    """Rescale ``grads`` so their global L2 norm is at most ``max_norm``."""
    if max_norm is None:
        return grads
    norm = math.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values()))
    if norm <= max_norm:
        return grads
    return {name: g * (max_norm / norm) for name, g in grads.items()}


def sgd_step(params: QNetworkParams, grads: dict[str, np.ndarray],
             learning_rate: float) -> QNetworkParams:
    """New parameters ``theta - lr * grad``."""
    if set(grads) != set(params.weights):
        raise ConfigurationError("gradient names do not match parameters")
    new = {}
    for name, w in params.weights.items():
        gw = np.asarray(grads[name], dtype=np.float64)
        if gw.shape != w.shape:
            raise ConfigurationError(f"gradient {name} has shape {gw.shape}, expected {w.shape}")
        new[name] = w - learning_rate * gw
    return QNetworkParams(params.config, new)


# --------------------------------------------------------------------------- #
# checkpoints

def save_checkpoint(params: QNetworkParams, path) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(params.config),
        "weights": {name: {"shape": list(w.shape), "data": w.ravel().tolist()}
                    for name, w in sorted(params.weights.items())},
    }
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_checkpoint(path, expected: QNetConfig | None = None) -> QNetworkParams:
    """Read a checkpoint; with ``expected`` the stored architecture must match it."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not an {CHECKPOINT_FORMAT} checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}")
    try:
        config = QNetConfig(**doc["config"])
        weights = {name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
                   for name, entry in doc["weights"].items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from exc
    if expected is not None:
        for dim in ("k", "n", "m", "n_prime", "T"):
            if getattr(expected, dim) != getattr(config, dim):
                raise CheckpointError(
                    f"checkpoint has {dim}={getattr(config, dim)}, "
                    f"expected {dim}={getattr(expected, dim)}")
    try:
        return QNetworkParams(config, weights)
    except ConfigurationError as exc:
        raise CheckpointError(str(exc)) from exc
