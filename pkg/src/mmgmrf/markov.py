"""Per-link discrete state chain: counting MLE, ancestral sampling, log-probability."""
import json
from dataclasses import dataclass, field

import numpy as np

DEFAULT_SMOOTHING = 0.5


@dataclass(frozen=True)
class CompressedObservation:
    """One vehicle's traversal: links, per-link states and travel times (s)."""

    path: np.ndarray
    states: np.ndarray
    travel_times: np.ndarray
    id: object = None

    def __post_init__(self):
        path = np.asarray(self.path, dtype=np.int64)
        states = np.asarray(self.states, dtype=np.int64)
        tts = np.asarray(self.travel_times, dtype=float)
        if not (path.shape == states.shape == tts.shape) or path.ndim != 1:
            raise ValueError("path, states and travel_times must have equal lengths")
        object.__setattr__(self, "path", path)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "travel_times", tts)

    def __len__(self):
        return self.path.size

    @property
    def total_time(self):
        return float(self.travel_times.sum())

    def variables(self, index):
        return index.offset[self.path] + self.states

    def to_record(self):
        return {"id": self.id,
                "obs": [{"link": int(l), "state": int(s), "tt": float(y)}
                        for l, s, y in zip(self.path, self.states, self.travel_times)]}

    @classmethod
    def from_record(cls, rec):
        obs = rec["obs"]
        return cls(path=[o["link"] for o in obs], states=[o["state"] for o in obs],
                   travel_times=[o["tt"] for o in obs], id=rec.get("id"))


@dataclass
class MarkovCounts:
    """Initial-state and transition counts; merging is addition."""

    modes: np.ndarray
    initial: dict = field(default_factory=dict)
    transitions: dict = field(default_factory=dict)

    def add(self, obs):
        path, states = obs.path, obs.states
        if path.size == 0:
            return self
        l0 = int(path[0])
        c = self.initial.get(l0)
        if c is None:
            c = self.initial[l0] = np.zeros(self.modes[l0], dtype=np.int64)
        c[states[0]] += 1
        for i in range(1, path.size):
            u, l = int(path[i - 1]), int(path[i])
            key = (u, l)
            T = self.transitions.get(key)
            if T is None:
                T = self.transitions[key] = np.zeros((self.modes[u], self.modes[l]), dtype=np.int64)
            T[states[i - 1], states[i]] += 1
        return self

    def merge(self, other):
        out = MarkovCounts(self.modes)
        for src in (self, other):
            for k, v in src.initial.items():
                out.initial[k] = out.initial.get(k, 0) + v
            for k, v in src.transitions.items():
                out.transitions[k] = out.transitions.get(k, 0) + v
        return out


@dataclass(frozen=True)
class MarkovParams:
    """``pi[l]`` initial distribution per link; ``T[(u, l)]`` transition matrix.

    Links or edges absent from the dictionaries use a uniform fallback.
    """

    modes: np.ndarray
    pi: dict
    T: dict
    smoothing: float = DEFAULT_SMOOTHING
    counts: MarkovCounts = field(default=None, compare=False, repr=False)

    def initial(self, l):
        p = self.pi.get(int(l))
        if p is None:
            m = int(self.modes[l])
            return np.full(m, 1.0 / m)
        return p

    def transition(self, u, l):
        T = self.T.get((int(u), int(l)))
        if T is None:
            mu, ml = int(self.modes[u]), int(self.modes[l])
            return np.full((mu, ml), 1.0 / ml)
        return T

    def to_json(self):
        return {"pi": {str(l): p.tolist() for l, p in sorted(self.pi.items())},
                "T": {f"{u}->{l}": T.tolist() for (u, l), T in sorted(self.T.items())},
                "smoothing": self.smoothing,
                "modes": self.modes.tolist()}

    @classmethod
    def from_json(cls, data, modes=None):
        modes = np.asarray(data.get("modes", modes), dtype=np.int64)
        pi = {int(k): np.asarray(v, dtype=float) for k, v in data["pi"].items()}
        T = {}
        for k, v in data["T"].items():
            u, l = k.split("->")
            T[(int(u), int(l))] = np.asarray(v, dtype=float)
        return cls(modes=modes, pi=pi, T=T, smoothing=float(data["smoothing"]))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def _normalize(counts, smoothing):
    c = counts.astype(float) + smoothing
    tot = c.sum(axis=-1, keepdims=True)
    m = c.shape[-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(tot > 0, c / np.where(tot > 0, tot, 1.0), 1.0 / m)
    return out


def count_transitions(observations, modes):
    counts = MarkovCounts(np.asarray(modes, dtype=np.int64))
    for obs in observations:
        counts.add(obs)
    return counts


def params_from_counts(counts, smoothing=DEFAULT_SMOOTHING):
    if smoothing < 0:
        raise ValueError("smoothing must be nonnegative")
    pi = {l: _normalize(c, smoothing) for l, c in counts.initial.items()}
    T = {k: _normalize(c, smoothing) for k, c in counts.transitions.items()}
    return MarkovParams(modes=counts.modes, pi=pi, T=T, smoothing=float(smoothing),
                        counts=counts)


def fit_markov(observations, modes, smoothing=DEFAULT_SMOOTHING):
    """Count-ratio maximum likelihood with additive smoothing.

    Rows with no counts and no smoothing fall back to uniform.
    """
    return params_from_counts(count_transitions(observations, modes), smoothing)


def _draw(cdf, u):
    # index of the first cdf entry exceeding u, per row
    idx = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(idx, cdf.shape[1] - 1)


def sample_state_sequences(params, path, size, rng):
    """``size`` independent ancestral draws along ``path`` as a (size, I) array."""
    path = np.asarray(path, dtype=np.int64)
    out = np.empty((size, path.size), dtype=np.int64)
    if path.size == 0:
        return out
    u = rng.random((size, path.size))
    out[:, 0] = _draw(np.cumsum(params.initial(path[0]))[None, :], u[:, 0])
    for i in range(1, path.size):
        cdf = np.cumsum(params.transition(path[i - 1], path[i]), axis=1)
        out[:, i] = _draw(cdf[out[:, i - 1]], u[:, i])
    return out


def sample_state_sequence(params, path, rng):
    return sample_state_sequences(params, path, 1, rng)[0]


def state_sequence_logprob(params, path, states):
    """log pi[l0][s0] + sum_i log T[l_{i-1} -> l_i][s_{i-1}, s_i]; -inf if impossible."""
    p = params.initial(path[0])[states[0]]
    if p <= 0:
        return -np.inf
    total = np.log(p)
    for i in range(1, len(path)):
        t = params.transition(path[i - 1], path[i])[states[i - 1], states[i]]
        if t <= 0:
            return -np.inf
        total += np.log(t)
    return float(total)


def state_marginals(params, path):
    """Forward recursion for P(S_i = s) along ``path``; list of vectors."""
    p = params.initial(path[0])
    out = [p]
    for i in range(1, len(path)):
        p = p @ params.transition(path[i - 1], path[i])
        out.append(p)
    return out
