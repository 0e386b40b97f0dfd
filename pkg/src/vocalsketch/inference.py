"""Speaker and listener models over an utterance space and a referent corpus.

Three speakers are available:

``baseline``
    softmax over cosine similarity between utterance and referent features.
``communicative``
    softmax over the probability that the baseline listener recovers the
    referent.
``full``
    softmax over expected ontology match of the listener's guess, minus an
    articulation cost.

Each speaker has a matching listener; the level-2 listener inverts the
configured speaker with Bayes' rule. The |U| x |R| similarity matrix is never
materialized: everything that needs a normalization over a whole row or
column streams over tiles.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ontology import OntologyPath
from .vocal_tract import PARAMS, ControlTrajectory, VoiceProfile

MODELS = ("baseline", "communicative", "full")
_NORM_ATOL = 1e-9


class InferenceError(ValueError):
    pass


class EmptySupportError(InferenceError):
    """Every candidate was excluded (all scores -inf or zero mass)."""


@dataclass(frozen=True)
class InferenceConfig:
    beta: float = 5.0
    beta_listener: float | None = None
    beta_speaker: float | None = None
    recursion_depth: int = 2
    w_rate: float = 0.05
    w_extreme: float = 1.0
    extreme_low: float = 0.05
    extreme_high: float = 0.95
    voiced_threshold: float = 0.5
    whisper: bool = False
    memory_budget: int = 2 * 1024 ** 3
    block_size: int | None = None

    def __post_init__(self):
        for name in ("beta", "beta_listener", "beta_speaker"):
            v = getattr(self, name)
            if v is not None and not (np.isfinite(v) and v >= 0):
                raise InferenceError(f"{name} must be finite and non-negative")
        if self.recursion_depth not in (1, 2):
            raise InferenceError("recursion depth must be 1 or 2")
        if self.w_rate < 0 or self.w_extreme < 0:
            raise InferenceError("cost weights must be non-negative")
        if not 0 <= self.extreme_low < self.extreme_high <= 1:
            raise InferenceError("extreme thresholds must satisfy 0 <= low < high <= 1")
        if self.block_size is not None and self.block_size < 1:
            raise InferenceError("block_size must be positive")
        if self.memory_budget < 1:
            raise InferenceError("memory_budget must be positive")

    @property
    def listener_beta(self):
        return self.beta if self.beta_listener is None else self.beta_listener

    @property
    def speaker_beta(self):
        return self.beta if self.beta_speaker is None else self.beta_speaker


@dataclass(frozen=True, eq=False)
class Distribution:
    """A normalized probability vector over utterances or referents."""

    probs: np.ndarray
    domain: str

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise InferenceError("a distribution is a non-empty 1-D vector")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise InferenceError("distribution entries must be finite and non-negative")
        if abs(p.sum() - 1.0) > _NORM_ATOL:
            raise InferenceError(f"distribution sums to {p.sum()!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def __len__(self):
        return self.probs.size

    def __getitem__(self, i):
        return float(self.probs[i])

    def ranking(self) -> np.ndarray:
        """Indices by descending probability; ties go to the lowest index."""
        return np.lexsort((np.arange(self.probs.size), -self.probs))

    def top_k(self, k) -> list[tuple[int, float]]:
        order = self.ranking()[:max(int(k), 0)]
        return [(int(i), float(self.probs[i])) for i in order]

    def argmax(self) -> int:
        return int(self.ranking()[0])

    def to_records(self, ids: Sequence | None = None, k=None) -> list[dict]:
        order = self.ranking()
        if k is not None:
            order = order[:k]
        return [{"index": int(i), "id": (ids[i] if ids is not None else int(i)),
                 "probability": float(self.probs[i])} for i in order]


def _softmax_probs(scores, beta):
    scores = np.asarray(scores, dtype=np.float64)
    if np.any(np.isnan(scores)) or np.any(scores == np.inf):
        raise InferenceError("scores must be finite or -inf")
    keep = scores > -np.inf
    if not keep.any():
        raise EmptySupportError("every score is -inf; nothing left to choose")
    z = beta * scores[keep]
    z -= z.max()
    w = np.exp(z)
    out = np.zeros_like(scores)
    out[keep] = w / w.sum()
    return out


def softmax(scores, beta=1.0, domain="utterance") -> Distribution:
    """p_i proportional to exp(beta * score_i); -inf scores get probability 0."""
    return Distribution(_softmax_probs(scores, beta), domain)


class SimilarityMatrix:
    """Cosine similarities between utterance and referent feature vectors.

    Tiles cover ``block_size`` referent columns and as many utterance rows
    as fit the memory budget. Tile order is deterministic.
    """

    _TEMPORARIES = 4

    def __init__(self, utterances, referents, block_size=None, memory_budget=2 * 1024 ** 3):
        self.u = self._unit_rows(utterances, "utterance")
        self.r = self._unit_rows(referents, "referent")
        if self.u.shape[1] != self.r.shape[1]:
            raise InferenceError("utterance and referent features have different lengths")
        self.block_size = int(block_size) if block_size else self.r.shape[0]
        per_row = 8 * self._TEMPORARIES * min(self.block_size, self.r.shape[0])
        self.row_block = int(max(1, min(self.u.shape[0], memory_budget // per_row)))

    @staticmethod
    def _unit_rows(x, what):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] == 0:
            raise InferenceError(f"{what} features must be a non-empty 2-D matrix")
        norms = np.linalg.norm(x, axis=1)
        if np.any(norms == 0):
            raise InferenceError(f"{what} {int(np.argmin(norms))} has an all-zero feature vector")
        return x / norms[:, None]

    @property
    def shape(self):
        return self.u.shape[0], self.r.shape[0]

    def row(self, u) -> np.ndarray:
        self._check(u, 0)
        return np.clip(self.r @ self.u[u], -1.0, 1.0)

    def column(self, r) -> np.ndarray:
        self._check(r, 1)
        return np.clip(self.u @ self.r[r], -1.0, 1.0)

    def against(self, vector) -> np.ndarray:
        """Similarities of an outside feature vector to every referent."""
        (v,) = self._unit_rows(np.atleast_2d(vector), "query")
        return np.clip(self.r @ v, -1.0, 1.0)

    def _check(self, i, axis):
        if not 0 <= int(i) < self.shape[axis]:
            raise IndexError(f"index {i} out of range for axis of size {self.shape[axis]}")

    def row_blocks(self) -> list[slice]:
        n = self.shape[0]
        return [slice(i, min(i + self.row_block, n)) for i in range(0, n, self.row_block)]

    def col_blocks(self) -> list[slice]:
        n = self.shape[1]
        return [slice(j, min(j + self.block_size, n)) for j in range(0, n, self.block_size)]

    def tile(self, rows: slice, cols: slice) -> np.ndarray:
        return np.clip(self.u[rows] @ self.r[cols].T, -1.0, 1.0)

    def dense(self) -> np.ndarray:
        """The whole matrix; for tests and small fixtures only."""
        return self.tile(slice(None), slice(None))


class RSA:
    """Speaker/listener models sharing one similarity matrix.

    ``paths`` (one ontology path per referent) is needed by the full model;
    ``costs`` holds one articulation cost per utterance (``inf`` removes the
    utterance); ``voiced`` flags utterances that whisper mode excludes from
    every speaker.
    """

    def __init__(self, sim: SimilarityMatrix, cfg: InferenceConfig | None = None, prior=None,
                 paths: Sequence[OntologyPath] | None = None, costs=None, voiced=None):
        self.sim = sim
        self.cfg = cfg or InferenceConfig()
        n_u, n_r = sim.shape
        if prior is None:
            prior = np.full(n_r, 1.0 / n_r)
        self.prior = np.asarray(getattr(prior, "probs", prior), dtype=np.float64)
        if self.prior.shape != (n_r,):
            raise InferenceError("prior must have one entry per referent")
        self.costs = None if costs is None else np.asarray(costs, dtype=np.float64)
        if self.costs is not None and self.costs.shape != (n_u,):
            raise InferenceError("costs must have one entry per utterance")
        if self.costs is not None and (np.any(np.isnan(self.costs)) or np.any(self.costs < 0)):
            raise InferenceError("costs must be non-negative (or +inf)")
        # baseline and communicative speakers have no cost term, so only the
        # whisper constraint removes utterances from their support
        self.whispered = np.zeros(n_u, dtype=bool)
        if self.cfg.whisper:
            if voiced is None:
                raise InferenceError("whisper mode needs the per-utterance voiced flags")
            self.whispered = np.asarray(voiced, dtype=bool).copy()
            if self.whispered.shape != (n_u,):
                raise InferenceError("voiced flags must have one entry per utterance")
        self.excluded = self.whispered.copy()
        if self.costs is not None:
            self.excluded |= ~np.isfinite(self.costs)
        self.paths = list(paths) if paths is not None else None
        if self.paths is not None and len(self.paths) != n_r:
            raise InferenceError("need one ontology path per referent")
        self._log_z = None
        self._node_mass = None
        self._speaker_norm: dict[str, np.ndarray] = {}
        self._membership = None

    # -- base listener --------------------------------------------------

    def listener_log_normalizer(self) -> np.ndarray:
        """log sum_r exp(beta * sim(u, r)) for every utterance u."""
        if self._log_z is None:
            beta = self.cfg.listener_beta
            n_u = self.sim.shape[0]
            log_z = np.empty(n_u)
            cols = self.sim.col_blocks()
            for rows in self.sim.row_blocks():
                m = np.full(rows.stop - rows.start, -np.inf)
                for c in cols:
                    m = np.maximum(m, (beta * self.sim.tile(rows, c)).max(axis=1))
                s = np.zeros_like(m)
                for c in cols:
                    s += np.exp(beta * self.sim.tile(rows, c) - m[:, None]).sum(axis=1)
                log_z[rows] = m + np.log(s)
            self._log_z = log_z
        return self._log_z

    def listener_tile(self, rows: slice, cols: slice) -> np.ndarray:
        """p_L(r | u) for a tile of utterances x referents."""
        log_z = self.listener_log_normalizer()
        return np.exp(self.cfg.listener_beta * self.sim.tile(rows, cols) - log_z[rows, None])

    def baseline_listener(self, u) -> Distribution:
        return softmax(self.sim.row(u), self.cfg.listener_beta, "referent")

    def baseline_speaker(self, r) -> Distribution:
        return self.speaker(r, "baseline")

    # -- utility --------------------------------------------------------

    def _require_paths(self):
        if self.paths is None:
            raise InferenceError("the full model needs an ontology path for every referent")

    def membership(self):
        """(node ids, |R| x nodes 0/1 matrix): referent r lies under node a."""
        if self._membership is None:
            self._require_paths()
            nodes = sorted({n for p in self.paths for n in p.nodes})
            index = {n: i for i, n in enumerate(nodes)}
            a = np.zeros((len(self.paths), len(nodes)))
            for r, p in enumerate(self.paths):
                a[r, [index[n] for n in p.nodes]] = 1.0
            self._membership = (nodes, a, index)
        return self._membership

    def node_mass(self) -> np.ndarray:
        """Listener mass per (utterance, ontology node); shape |U| x nodes."""
        if self._node_mass is None:
            _, a, _ = self.membership()
            mass = np.zeros((self.sim.shape[0], a.shape[1]))
            cols = self.sim.col_blocks()
            for rows in self.sim.row_blocks():
                for c in cols:
                    mass[rows] += self.listener_tile(rows, c) @ a[c]
            self._node_mass = mass
        return self._node_mass

    def _path_columns(self, r):
        _, _, index = self.membership()
        return [index[n] for n in self.paths[r].nodes]

    def utility_column(self, r) -> np.ndarray:
        """Expected ontology match V(u, r) for every utterance."""
        mass = self.node_mass()
        cols = self._path_columns(r)
        out = np.zeros(mass.shape[0])
        for c in cols:
            out += mass[:, c]
        return out

    def utility_tile(self, rows: slice, cols: slice) -> np.ndarray:
        _, a, _ = self.membership()
        return self.node_mass()[rows] @ a[cols].T

    # -- level-2 speakers -----------------------------------------------

    def _cost_vector(self):
        if self.costs is None:
            return np.zeros(self.sim.shape[0])
        return self.costs

    def _level(self, model):
        # a depth-1 model stops at the literal speaker and listener
        if model not in MODELS:
            raise InferenceError(f"unknown model {model!r}; choose from {MODELS}")
        return "baseline" if self.cfg.recursion_depth == 1 else model

    def speaker_scores(self, r, model) -> np.ndarray:
        """Unscaled speaker scores for referent ``r`` over all utterances; -inf = excluded."""
        model = self._level(model)
        if model == "baseline":
            s = self.sim.column(r).copy()
            s[self.whispered] = -np.inf
        elif model == "communicative":
            c = slice(r, r + 1)
            s = np.concatenate([self.listener_tile(rows, c)[:, 0] for rows in self.sim.row_blocks()])
            s[self.whispered] = -np.inf
        else:
            s = self.utility_column(r) - np.where(self.excluded, 0.0, self._cost_vector())
            s[self.excluded] = -np.inf
        return s

    def _score_tile(self, rows, cols, model):
        if model == "communicative":
            s = self.listener_tile(rows, cols)
            s[self.whispered[rows]] = -np.inf
        elif model == "full":
            cost = np.where(self.excluded[rows], 0.0, self._cost_vector()[rows])
            s = self.utility_tile(rows, cols) - cost[:, None]
            s[self.excluded[rows]] = -np.inf
        else:
            s = self.sim.tile(rows, cols)
            s[self.whispered[rows]] = -np.inf
        return s

    def _beta_for(self, model):
        return self.cfg.listener_beta if model == "baseline" else self.cfg.speaker_beta

    def speaker(self, r, model="full") -> Distribution:
        model = self._level(model)
        return softmax(self.speaker_scores(r, model), self._beta_for(model), "utterance")

    def speaker_log_normalizer(self, model) -> np.ndarray:
        """log sum_u exp(beta * score(u, r)) for every referent r."""
        model = self._level(model)
        if model not in self._speaker_norm:
            beta = self._beta_for(model)
            n_r = self.sim.shape[1]
            out = np.empty(n_r)
            rows_list = self.sim.row_blocks()
            for cols in self.sim.col_blocks():
                m = np.full(cols.stop - cols.start, -np.inf)
                for rows in rows_list:
                    m = np.maximum(m, (beta * self._score_tile(rows, cols, model)).max(axis=0))
                if np.any(m == -np.inf):
                    raise EmptySupportError("a referent has no admissible utterance")
                s = np.zeros_like(m)
                for rows in rows_list:
                    s += np.exp(beta * self._score_tile(rows, cols, model) - m).sum(axis=0)
                out[cols] = m + np.log(s)
            self._speaker_norm[model] = out
        return self._speaker_norm[model]

    def speaker_log_prob_row(self, u, model) -> np.ndarray:
        """log p_S(u | r) for one utterance and every referent."""
        model = self._level(model)
        beta = self._beta_for(model)
        rows = slice(u, u + 1)
        scores = np.concatenate([self._score_tile(rows, c, model)[0] for c in self.sim.col_blocks()])
        return beta * scores - self.speaker_log_normalizer(model)

    def listener(self, u, model="full") -> Distribution:
        """Baseline listener for ``model='baseline'``, otherwise the level-2 listener."""
        model = self._level(model)
        if model == "baseline":
            return self.baseline_listener(u)
        return _posterior(self.speaker_log_prob_row(u, model), self.prior)

    # -- outside queries --------------------------------------------------

    def query_listener(self, features, model="full") -> Distribution:
        """Listener for a recording that is not part of the utterance space.

        The query joins the speaker's candidate set as one extra utterance
        with zero cost; every referent's speaker normalizer is extended by
        the query's own term.
        """
        model = self._level(model)
        sims = self.sim.against(features)
        if model == "baseline":
            return softmax(sims, self.cfg.listener_beta, "referent")
        lb = self.cfg.listener_beta
        log_z = _logsumexp(lb * sims)
        p_l = np.exp(lb * sims - log_z)
        if model == "communicative":
            score = p_l
        else:
            _, a, _ = self.membership()
            score = (p_l @ a) @ a.T
        beta = self.cfg.speaker_beta
        log_norm = np.logaddexp(self.speaker_log_normalizer(model), beta * score)
        return _posterior(beta * score - log_norm, self.prior)


def _logsumexp(x):
    m = np.max(x)
    return m + np.log(np.sum(np.exp(x - m)))


def _posterior(log_likelihood, prior) -> Distribution:
    with np.errstate(divide="ignore"):
        log_post = log_likelihood + np.log(prior)
    if not np.any(log_post > -np.inf):
        raise EmptySupportError("zero posterior mass on every referent")
    return softmax(log_post, 1.0, "referent")


# -- module-level forms ------------------------------------------------------

def baseline_speaker(r, sim: SimilarityMatrix, cfg: InferenceConfig | None = None) -> Distribution:
    return RSA(sim, cfg).baseline_speaker(r)


def baseline_listener(u, sim: SimilarityMatrix, cfg: InferenceConfig | None = None) -> Distribution:
    return RSA(sim, cfg).baseline_listener(u)


def s2_speaker_communicative(r, sim: SimilarityMatrix, cfg: InferenceConfig | None = None) -> Distribution:
    return RSA(sim, cfg).speaker(r, "communicative")


def l2_listener(u, sim: SimilarityMatrix, prior=None, cfg: InferenceConfig | None = None,
                model="communicative", **kwargs) -> Distribution:
    return RSA(sim, cfg, prior, **kwargs).listener(u, model)


def full_speaker(r, sim: SimilarityMatrix, cfg: InferenceConfig | None, costs,
                 paths: Sequence[OntologyPath], voiced=None) -> Distribution:
    return RSA(sim, cfg, paths=paths, costs=costs, voiced=voiced).speaker(r, "full")


def expected_utility(r, listener: Distribution, paths: Sequence[OntologyPath]) -> float:
    """Expected number of matching ontology levels between ``r`` and the listener's guess.

    Listener mass is first pooled per ontology node; the utility is then the
    sum of pooled mass over the nodes on ``r``'s own path.
    """
    if len(listener) != len(paths):
        raise InferenceError("listener distribution and paths disagree on the corpus size")
    if any(p is None for p in paths):
        raise InferenceError("every referent needs an ontology path")
    pooled: dict[str, float] = {}
    for p, mass in zip(paths, listener.probs):
        if mass == 0.0:
            continue
        for node in p.nodes:
            pooled[node] = pooled.get(node, 0.0) + mass
    return float(sum(pooled.get(node, 0.0) for node in paths[r].nodes))


# -- costs -----------------------------------------------------------------

def _cost_terms(norm_tracks, frame_rate, cfg):
    # norm_tracks: (..., n_frames) normalized values of one parameter
    if norm_tracks.shape[-1] > 1:
        rate = np.abs(np.diff(norm_tracks, axis=-1)).mean(axis=-1) * frame_rate
    else:
        rate = np.zeros(norm_tracks.shape[:-1])
    extreme = ((norm_tracks < cfg.extreme_low) | (norm_tracks > cfg.extreme_high)).mean(axis=-1)
    return rate, extreme


def utterance_cost(traj: ControlTrajectory, cfg: InferenceConfig, voice: VoiceProfile) -> float:
    """Articulation cost: parameter speed plus time spent at extremes.

    ``w_rate`` weighs the mean absolute per-second change of the normalized
    parameters; ``w_extreme`` weighs the fraction of (parameter, frame) pairs
    outside ``[extreme_low, extreme_high]``. In whisper mode any frame whose
    voicedness exceeds the voiced threshold makes the cost infinite.
    """
    norm = traj.normalized(voice).T
    if cfg.whisper and np.any(norm[PARAMS.index("voicedness")] > cfg.voiced_threshold):
        return float("inf")
    rate, extreme = _cost_terms(norm, traj.frame_rate, cfg)
    return float(cfg.w_rate * rate.mean() + cfg.w_extreme * extreme.mean())


def voiced_frames_exceed(space, cfg: InferenceConfig) -> np.ndarray:
    """Per utterance: does any frame's voicedness exceed the voiced threshold?"""
    table = space.track_table()[PARAMS.index("voicedness")]
    per_pattern = np.any(table > cfg.voiced_threshold, axis=-1)
    return per_pattern[space.decode_all()[:, PARAMS.index("voicedness")]]


def space_costs(space, cfg: InferenceConfig) -> np.ndarray:
    """``utterance_cost`` for every utterance of a space, in index order.

    Both cost terms average over parameters, so the cost of an utterance is
    a sum of per-(parameter, pattern) terms.
    """
    table = space.track_table()
    rate, extreme = _cost_terms(table, space.frame_rate, cfg)
    per = (cfg.w_rate * rate + cfg.w_extreme * extreme) / space.n_params
    ids = space.decode_all()
    cost = np.zeros(len(space))
    for j in range(space.n_params):
        cost += per[j, ids[:, j]]
    if cfg.whisper:
        cost[voiced_frames_exceed(space, cfg)] = np.inf
    return cost
