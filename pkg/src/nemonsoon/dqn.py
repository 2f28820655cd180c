"""Deep Q-learning over the rectangle environment: a small fully connected
Q-network (numpy, hand-rolled backprop), replay buffer, epsilon-greedy
policy, TD(0) targets, the training loop, and a brute-force placement
oracle used for acceptance checks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geogrid, index
from .errors import NonFiniteLossError
from .geogrid import AreaSet, Rect, SSTField
from .index import SeasonMask


# ---------------------------------------------------------------------------
# Q-network
# ---------------------------------------------------------------------------

class QNetwork:
    """Fully connected net: input -> 64 -> 64 -> n_actions, ReLU hidden
    activations, linear head. float32 for training, float64 for gradient
    checks."""

    def __init__(self, in_dim: int, n_actions: int, rng: np.random.Generator,
                 hidden: tuple[int, int] = (64, 64), dtype=np.float32):
        self.in_dim = in_dim
        self.n_actions = n_actions
        self.dtype = dtype
        dims = [in_dim, *hidden, n_actions]
        self.weights = []
        self.biases = []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            scale = np.sqrt(2.0 / d_in)  # He init for ReLU
            self.weights.append((rng.standard_normal((d_in, d_out)) * scale).astype(dtype))
            self.biases.append(np.zeros(d_out, dtype=dtype))

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Q-values for a batch (or single) of states."""
        h = np.atleast_2d(np.asarray(x, dtype=self.dtype))
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
        out = h @ self.weights[-1] + self.biases[-1]
        return out if np.asarray(x).ndim > 1 else out[0]

    def loss_and_grads(self, states: np.ndarray, actions: np.ndarray,
                       targets: np.ndarray) -> tuple[float, list[np.ndarray]]:
        """Mean-squared TD error on Q(s, a_taken) plus gradients, ordered
        [w0, b0, w1, b1, ...]."""
        x = np.asarray(states, dtype=self.dtype)
        n = x.shape[0]
        acts = [x]
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
            acts.append(h)
        q = h @ self.weights[-1] + self.biases[-1]
        picked = q[np.arange(n), actions]
        err = picked - np.asarray(targets, dtype=self.dtype)
        loss = float(np.mean(err * err))
        # backprop through the picked-action head only
        dq = np.zeros_like(q)
        dq[np.arange(n), actions] = 2.0 * err / n
        grads: list[np.ndarray] = []
        delta = dq
        for layer in range(len(self.weights) - 1, -1, -1):
            grads.append(np.sum(delta, axis=0))        # bias
            grads.append(acts[layer].T @ delta)        # weight
            if layer > 0:
                delta = (delta @ self.weights[layer].T) * (acts[layer] > 0)
        grads.reverse()
        return loss, grads

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def set_params(self, params: list[np.ndarray]) -> None:
        for k in range(len(self.weights)):
            self.weights[k] = params[2 * k].astype(self.dtype)
            self.biases[k] = params[2 * k + 1].astype(self.dtype)

    def clone(self) -> "QNetwork":
        other = object.__new__(QNetwork)
        other.in_dim = self.in_dim
        other.n_actions = self.n_actions
        other.dtype = self.dtype
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other


class Adam:
    """Adaptive-moment optimizer over a flat list of parameter arrays."""

    def __init__(self, params: list[np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


# ---------------------------------------------------------------------------
# Replay buffer and policy
# ---------------------------------------------------------------------------

class ReplayBuffer:
    """FIFO ring buffer of (s, a, r, s', done) transitions."""

    def __init__(self, capacity: int, obs_dim: int):
        self.capacity = capacity
        self.states = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=np.float32)
        self.next_states = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.dones = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._cursor = 0

    def push(self, state, action, reward, next_state, done) -> None:
        i = self._cursor
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.dones[i] = done
        self._cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator):
        idx = rng.choice(self.size, size=min(batch, self.size), replace=False)
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx], self.dones[idx])


@dataclass(frozen=True)
class DQNConfig:
    gamma: float = 0.99
    epsilon_initial: float = 1.0
    epsilon_final: float = 0.1
    decay_fraction: float = 0.1
    total_timesteps: int = 100_000
    batch: int = 64
    buffer_capacity: int = 10_000
    target_sync_every: int = 500
    learn_start: int = 1_000
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if not 0 <= self.epsilon_final <= self.epsilon_initial <= 1:
            raise ValueError("need 0 <= epsilon_final <= epsilon_initial <= 1")


def epsilon_at(t: int, config: DQNConfig) -> float:
    """Linear anneal from epsilon_initial to epsilon_final over the first
    decay_fraction of total timesteps, then constant."""
    if t < 0:
        raise ValueError("t must be non-negative")
    decay_end = config.decay_fraction * config.total_timesteps
    if decay_end <= 0 or t >= decay_end:
        return config.epsilon_final
    frac = t / decay_end
    return config.epsilon_initial + frac * (config.epsilon_final - config.epsilon_initial)


def act(state: np.ndarray, qnet: QNetwork, epsilon: float,
        rng: np.random.Generator) -> int:
    """Epsilon-greedy action; greedy ties go to the smallest index."""
    if not 0 <= epsilon <= 1:
        raise ValueError("epsilon must be in [0, 1]")
    if rng.random() < epsilon:
        return int(rng.integers(qnet.n_actions))
    return int(np.argmax(qnet.forward(state)))


def td_targets(rewards: np.ndarray, next_states: np.ndarray, dones: np.ndarray,
               target_net: QNetwork, gamma: float) -> np.ndarray:
    """y = r + gamma * max_a' Q_target(s', a') * (1 - done)."""
    q_next = target_net.forward(next_states).max(axis=1)
    return np.asarray(rewards) + gamma * q_next * (~np.asarray(dones))


def train_step(qnet: QNetwork, target_net: QNetwork, batch, optimizer: Adam,
               gamma: float) -> float:
    """One gradient step on one sampled batch; returns the pre-step loss."""
    states, actions, rewards, next_states, dones = batch
    targets = td_targets(rewards, next_states, dones, target_net, gamma)
    loss, grads = qnet.loss_and_grads(states, actions, targets)
    if not np.isfinite(loss):
        raise NonFiniteLossError(f"TD loss became {loss}")
    params = qnet.params
    optimizer.step(params, grads)
    qnet.set_params(params)
    return loss


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class HistoryRow:
    step: int
    episode: int
    reward: float
    best_q: float
    epsilon: float


def train(env_factory, config: DQNConfig):
    """Run the full DQN loop; returns (best_areas, best_q, history).

    best_areas is the (A, B) pair of the highest-objective valid state ever
    visited (None for environments without geometry, e.g. toy MDPs), best_q
    its objective, and history one row per timestep.
    """
    best_areas, best_q, history, _ = train_with_net(env_factory, config)
    return best_areas, best_q, history


def train_with_net(env_factory, config: DQNConfig):
    """Like train(), but also returns the trained online network."""
    rng = np.random.default_rng(config.seed)
    env = env_factory()
    qnet = QNetwork(env.obs_dim, env.n_actions, rng)
    target_net = qnet.clone()
    optimizer = Adam(qnet.params, lr=config.lr)
    buffer = ReplayBuffer(config.buffer_capacity, env.obs_dim)

    best_areas = None
    best_q = -np.inf
    history: list[HistoryRow] = []
    episode = 0
    obs = env.reset(rng)
    best_areas, best_q = _maybe_better(env, best_areas, best_q)

    for t in range(config.total_timesteps):
        eps = epsilon_at(t, config)
        a = act(obs, qnet, eps, rng)
        next_obs, reward, done = env.step(a)
        buffer.push(obs, a, reward, next_obs, done)
        best_areas, best_q = _maybe_better(env, best_areas, best_q)
        if t + 1 >= config.learn_start and buffer.size >= config.batch:
            batch = buffer.sample(config.batch, rng)
            train_step(qnet, target_net, batch, optimizer, config.gamma)
        if (t + 1) % config.target_sync_every == 0:
            target_net = qnet.clone()
        history.append(HistoryRow(step=t, episode=episode, reward=float(reward),
                                  best_q=float(best_q), epsilon=eps))
        if done:
            episode += 1
            if t + 1 < config.total_timesteps:
                obs = env.reset(rng)
                best_areas, best_q = _maybe_better(env, best_areas, best_q)
        else:
            obs = next_obs
    return best_areas, best_q, history, qnet


def _maybe_better(env, best_areas, best_q):
    cand = getattr(env, "current_candidate", lambda: None)()
    if cand is not None:
        area_a, area_b, q = cand
        if q is not None and q > best_q:
            return (area_a, area_b), q
    return best_areas, best_q


def write_history_csv(history: list[HistoryRow], path) -> None:
    """Emit `step,episode,reward,best_q,epsilon`."""
    import csv
    import os

    tmp = str(path) + ".tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "episode", "reward", "best_q", "epsilon"])
        for row in history:
            w.writerow([row.step, row.episode, repr(row.reward),
                        repr(row.best_q), repr(row.epsilon)])
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Exhaustive-search oracle
# ---------------------------------------------------------------------------

def _shift_area(area: AreaSet, dlat: float, dlon: float) -> AreaSet:
    return AreaSet(tuple(
        Rect(r.lat_min + dlat, r.lat_max + dlat, r.lon_min + dlon, r.lon_max + dlon)
        for r in area.rects
    ))


def _placements(template: AreaSet, domain: Rect, step: float) -> list[tuple[float, float]]:
    """Rigid-shift offsets (multiples of step) keeping every rect inside
    the domain; lexicographic order."""
    lat_lo = min(r.lat_min for r in template.rects)
    lat_hi = max(r.lat_max for r in template.rects)
    lon_lo = min(r.lon_min for r in template.rects)
    lon_hi = max(r.lon_max for r in template.rects)
    k_lat_min = int(np.ceil((domain.lat_min - lat_lo) / step - 1e-9))
    k_lat_max = int(np.floor((domain.lat_max - lat_hi) / step + 1e-9))
    k_lon_min = int(np.ceil((domain.lon_min - lon_lo) / step - 1e-9))
    k_lon_max = int(np.floor((domain.lon_max - lon_hi) / step + 1e-9))
    return [
        (k_lat * step, k_lon * step)
        for k_lat in range(k_lat_min, k_lat_max + 1)
        for k_lon in range(k_lon_min, k_lon_max + 1)
    ]


def exhaustive_search(
    field: SSTField,
    y_onset: np.ndarray,
    y_retreat: np.ndarray,
    template_a: AreaSet,
    template_b: AreaSet,
    domain: Rect,
    step: float = 0.5,
    min_ocean: float = 0.8,
    mask: SeasonMask | None = None,
) -> tuple[tuple[AreaSet, AreaSet], float]:
    """Evaluate every valid shift-lattice placement of A crossed with every
    valid placement of B; return the argmax-q pair (lexicographic ties go
    to the earlier placement).

    Uses the fact that Pearson r is invariant under the affine
    normalisation of Z, so q is computed from raw mean-SST differences.
    """
    mask = mask or SeasonMask()
    ocean = field.ocean_mask()
    months = field.spec.months()
    sel_on = np.isin(months, list(mask.onset_months))
    sel_re = np.isin(months, list(mask.retreat_months))
    if sel_on.sum() < 3 or sel_re.sum() < 3:
        raise ValueError("time axis too short for seasonal correlations")

    def valid_series(template):
        offsets, series = [], []
        for dlat, dlon in _placements(template, domain, step):
            area = _shift_area(template, dlat, dlon)
            try:
                if geogrid.ocean_fraction(area, ocean, field.spec) < min_ocean:
                    continue
                series.append(geogrid.area_mean_series(field, area))
            except (geogrid.EmptyAreaError, geogrid.NoOceanCellsError):
                continue
            offsets.append((dlat, dlon))
        return offsets, np.array(series)

    offsets_a, series_a = valid_series(template_a)
    offsets_b, series_b = valid_series(template_b)
    if not offsets_a or not offsets_b:
        raise ValueError("no valid placements for A or B in the domain")

    y_on = np.asarray(y_onset, dtype=float)[sel_on]
    y_re = np.asarray(y_retreat, dtype=float)[sel_re]
    yc_on = y_on - y_on.mean()
    yc_re = y_re - y_re.mean()
    sy_on = np.sqrt((yc_on * yc_on).sum())
    sy_re = np.sqrt((yc_re * yc_re).sum())
    if sy_on == 0.0 or sy_re == 0.0:
        raise ValueError("constant rainfall target")

    best_q = -np.inf
    best = None
    for ia, s_a in enumerate(series_a):
        diff = series_b - s_a[None, :]  # (n_b, nt)
        q = _pair_objectives(diff, sel_on, sel_re, yc_on, yc_re, sy_on, sy_re)
        ib = int(np.argmax(q))
        if q[ib] > best_q + 1e-15:
            best_q = float(q[ib])
            best = (ia, ib)
    area_a = _shift_area(template_a, *offsets_a[best[0]])
    area_b = _shift_area(template_b, *offsets_b[best[1]])
    return (area_a, area_b), best_q


def _pair_objectives(diff, sel_on, sel_re, yc_on, yc_re, sy_on, sy_re):
    """Vectorized q for rows of raw index differences; degenerate rows get
    -inf (they would be invalid reports in evaluate_pair)."""
    q = np.full(diff.shape[0], -np.inf)
    for sel, yc, sy, half in ((sel_on, yc_on, sy_on, 0), (sel_re, yc_re, sy_re, 1)):
        d = diff[:, sel]
        dc = d - d.mean(axis=1, keepdims=True)
        sd = np.sqrt((dc * dc).sum(axis=1))
        ok = sd > 0
        r = np.zeros(diff.shape[0])
        r[ok] = (dc[ok] @ yc) / (sd[ok] * sy)
        r = np.clip(r, -1.0, 1.0)
        contrib = 0.5 * r * r
        if half == 0:
            q = np.where(ok, contrib, -np.inf)
        else:
            q = np.where(ok & np.isfinite(q), q + contrib, -np.inf)
    # full-series variance must also be nonzero for normalise() to exist
    full_sd = diff.std(axis=1)
    return np.where(full_sd > 0, q, -np.inf)
