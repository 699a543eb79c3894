"""Learnable reranking head over frozen retrieval embeddings.

Residual linear adapters refine the query and memory embeddings
(q' = q + W_q q, m' = m + W_m m), relevance is the dot product
s_i = q'. m'_i, and training-mode selection draws M items without
replacement by taking the top M of s_i / tau + Gumbel noise. That
procedure samples from the Plackett-Luce distribution with logits
s_i / tau, so the exact log-probability of the ordered selection is

    sum_t [ z_{i_t} - log sum_{j not picked before t} exp(z_j) ],
    z = s / tau.

REINFORCE uses that log-probability: each selected position contributes
eta * (r_t - b) * grad log p_t to the adapter matrices. Gradients are
analytic (outer products chained through the per-step softmaxes) and are
validated against finite differences in the test suite.

Zero-initialised adapters make the head an exact pass-through of the
retriever ordering, so learning starts from plain-RAG behaviour.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (CorruptFile, DimensionMismatch, MTooLarge,
                     NonFiniteGradient, StaleTrace, TraceModeMismatch)
from .transcripts import atomic_write

GRAD_CLIP_NORM = 10.0

DEFAULT_TAU = 0.5
DEFAULT_ETA = 1e-3
DEFAULT_BASELINE = 0.5


@dataclass
class RerankerParams:
    """The only learned state: two d x d adapters plus hyperparameters."""

    w_q: np.ndarray
    w_m: np.ndarray
    tau: float = DEFAULT_TAU
    eta: float = DEFAULT_ETA
    baseline: float = DEFAULT_BASELINE
    rng_seed: int = 0
    update_count: int = 0

    def __post_init__(self):
        self.w_q = np.asarray(self.w_q, dtype=np.float64)
        self.w_m = np.asarray(self.w_m, dtype=np.float64)
        d = self.w_q.shape[0]
        if self.w_q.shape != (d, d) or self.w_m.shape != (d, d):
            raise DimensionMismatch(
                f"adapters must be square and equal: {self.w_q.shape} vs "
                f"{self.w_m.shape}")
        if not (np.all(np.isfinite(self.w_q))
                and np.all(np.isfinite(self.w_m))):
            raise ValueError("adapter matrices must be finite")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.eta <= 0:
            raise ValueError("eta must be positive")

    @property
    def dimension(self) -> int:
        return int(self.w_q.shape[0])

    @classmethod
    def zero_init(cls, dimension: int, *, tau: float = DEFAULT_TAU,
                  eta: float = DEFAULT_ETA, baseline: float = DEFAULT_BASELINE,
                  rng_seed: int = 0) -> "RerankerParams":
        zeros = np.zeros((dimension, dimension), dtype=np.float64)
        return cls(w_q=zeros.copy(), w_m=zeros.copy(), tau=tau, eta=eta,
                   baseline=baseline, rng_seed=rng_seed)


@dataclass
class SelectionTrace:
    """One rerank decision, with everything the RL update needs."""

    candidate_entry_ids: list[str]
    logits: np.ndarray
    perturbed: np.ndarray | None
    selected_positions: list[int]
    log_prob: float
    mode: str  # "train" | "infer"
    query_embedding: np.ndarray | None = None
    memory_embeddings: np.ndarray | None = None


@dataclass
class UpdateStats:
    grad_norm_w_q: float
    grad_norm_w_m: float
    advantage_sum: float
    clipped: bool
    update_index: int


def _logsumexp(values: np.ndarray) -> float:
    peak = float(np.max(values))
    return peak + math.log(float(np.sum(np.exp(values - peak))))


def selection_log_prob(logits: np.ndarray, selected: list[int],
                       tau: float) -> float:
    """Plackett-Luce log-likelihood of an ordered selection."""
    z = np.asarray(logits, dtype=np.float64) / tau
    remaining = np.ones(z.shape[0], dtype=bool)
    total = 0.0
    for pos in selected:
        total += float(z[pos]) - _logsumexp(z[remaining])
        remaining[pos] = False
    return total


class Reranker:
    """Stateful wrapper: params plus the seeded noise generator."""

    def __init__(self, params: RerankerParams):
        self.params = params
        self._rng = np.random.default_rng(params.rng_seed)
        self._pending: list[tuple[np.ndarray, np.ndarray, float]] = []

    @classmethod
    def zero_init(cls, dimension: int, **kwargs) -> "Reranker":
        return cls(RerankerParams.zero_init(dimension, **kwargs))

    # -- forward pass -------------------------------------------------------

    def adapt(self, q: np.ndarray,
              memories: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Residual adapters: q' = q + W_q q, m'_i = m_i + W_m m_i."""
        q = np.asarray(q, dtype=np.float64)
        memories = np.atleast_2d(np.asarray(memories, dtype=np.float64))
        d = self.params.dimension
        if q.shape != (d,):
            raise DimensionMismatch(f"query shape {q.shape}, expected ({d},)")
        if memories.shape[1] != d:
            raise DimensionMismatch(
                f"memories shape {memories.shape}, expected (*, {d})")
        q_prime = q + self.params.w_q @ q
        m_prime = memories + memories @ self.params.w_m.T
        return q_prime, m_prime

    @staticmethod
    def score(q_prime: np.ndarray, m_prime: np.ndarray) -> np.ndarray:
        """Relevance logits s_i = q'. m'_i."""
        return m_prime @ q_prime

    def select_top_m(self, logits: np.ndarray, m: int, mode: str,
                     candidate_entry_ids: list[str] | None = None
                     ) -> SelectionTrace:
        """Pick M of K candidates; stochastic in train mode, argmax in infer.

        Infer-mode ties go to the lower candidate position, i.e. the better
        retriever rank.
        """
        logits = np.asarray(logits, dtype=np.float64)
        k = logits.shape[0]
        if m < 1 or m > k:
            raise MTooLarge(f"m={m} outside 1..{k}")
        if mode not in ("train", "infer"):
            raise ValueError(f"unknown mode {mode!r}")
        z = logits / self.params.tau
        perturbed = None
        if mode == "train":
            u = np.clip(self._rng.random(k), 1e-300, 1.0 - 1e-16)
            gumbel = -np.log(-np.log(u))
            perturbed = z + gumbel
            order = np.argsort(-perturbed, kind="stable")
        else:
            order = np.argsort(-logits, kind="stable")
        selected = [int(i) for i in order[:m]]
        log_prob = selection_log_prob(logits, selected, self.params.tau)
        ids = (list(candidate_entry_ids) if candidate_entry_ids is not None
               else [str(i) for i in range(k)])
        if len(ids) != k:
            raise ValueError("candidate id count must match logits")
        return SelectionTrace(
            candidate_entry_ids=ids,
            logits=logits,
            perturbed=perturbed,
            selected_positions=selected,
            log_prob=log_prob,
            mode=mode,
        )

    def rerank(self, q: np.ndarray, memories: np.ndarray, m: int, mode: str,
               candidate_entry_ids: list[str] | None = None) -> SelectionTrace:
        """Full pass (adapt, score, select) with inputs attached for RL."""
        q = np.asarray(q, dtype=np.float64)
        memories = np.atleast_2d(np.asarray(memories, dtype=np.float64))
        q_prime, m_prime = self.adapt(q, memories)
        logits = self.score(q_prime, m_prime)
        trace = self.select_top_m(logits, m, mode, candidate_entry_ids)
        trace.query_embedding = q.copy()
        trace.memory_embeddings = memories.copy()
        return trace

    # -- gradients and updates -----------------------------------------------

    def _recompute_logits(self, q: np.ndarray,
                          memories: np.ndarray) -> tuple[np.ndarray, ...]:
        q_prime, m_prime = self.adapt(q, memories)
        return self.score(q_prime, m_prime), q_prime, m_prime

    def grad_log_prob(self, q: np.ndarray, memories: np.ndarray,
                      trace: SelectionTrace
                      ) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Analytic d(log p_t)/dW_q and d(log p_t)/dW_m per selected position.

        For step t with remaining candidate set A_t and softmax weights p
        over A_t (at logits s/tau):

            d(log p_t)/ds_j = (1/tau) * ([j == i_t] - p_j * [j in A_t])
            ds_j/dW_q = outer(m'_j, q),   ds_j/dW_m = outer(q', m_j)
        """
        q = np.asarray(q, dtype=np.float64)
        memories = np.atleast_2d(np.asarray(memories, dtype=np.float64))
        logits, q_prime, m_prime = self._recompute_logits(q, memories)
        if logits.shape != trace.logits.shape or not np.array_equal(
                logits, trace.logits):
            raise StaleTrace(
                "recomputed logits differ from the trace; inputs or "
                "parameters changed since selection")
        z = logits / self.params.tau
        k = z.shape[0]
        remaining = np.ones(k, dtype=bool)
        grads_w_q: list[np.ndarray] = []
        grads_w_m: list[np.ndarray] = []
        for pos in trace.selected_positions:
            weights = np.zeros(k, dtype=np.float64)
            zr = z[remaining]
            soft = np.exp(zr - np.max(zr))
            soft /= np.sum(soft)
            weights[remaining] = -soft
            weights[pos] += 1.0
            weights /= self.params.tau
            grads_w_q.append(np.outer(m_prime.T @ weights, q))
            grads_w_m.append(np.outer(q_prime, memories.T @ weights))
            remaining[pos] = False
        return grads_w_q, grads_w_m

    def _trace_delta(self, trace: SelectionTrace, rewards: list[int],
                     credit: str) -> tuple[np.ndarray, np.ndarray, float, bool]:
        """Reward-weighted gradient for one trace, clipped, without eta."""
        if trace.mode != "train":
            raise TraceModeMismatch(
                f"RL update needs a train-mode trace, got {trace.mode!r}")
        m = len(trace.selected_positions)
        if len(rewards) != m:
            raise ValueError(f"{len(rewards)} rewards for {m} selections")
        if any(r not in (1, -1) for r in rewards):
            raise ValueError("rewards must be +1 or -1")
        if trace.query_embedding is None or trace.memory_embeddings is None:
            raise ValueError(
                "trace carries no embeddings; produce it with rerank()")
        grads_w_q, grads_w_m = self.grad_log_prob(
            trace.query_embedding, trace.memory_embeddings, trace)
        b = self.params.baseline
        if credit == "per_position":
            coeffs = [r - b for r in rewards]
        elif credit == "set_mean":
            mean_r = sum(rewards) / m
            coeffs = [mean_r - b] * m
        else:
            raise ValueError(f"unknown credit mode {credit!r}")
        delta_w_q = sum(c * g for c, g in zip(coeffs, grads_w_q))
        delta_w_m = sum(c * g for c, g in zip(coeffs, grads_w_m))
        if not (np.all(np.isfinite(delta_w_q))
                and np.all(np.isfinite(delta_w_m))):
            raise NonFiniteGradient("update rejected: non-finite gradient")
        norm = math.sqrt(float(np.sum(delta_w_q ** 2))
                         + float(np.sum(delta_w_m ** 2)))
        clipped = False
        if norm > GRAD_CLIP_NORM:
            scale = GRAD_CLIP_NORM / norm
            delta_w_q = delta_w_q * scale
            delta_w_m = delta_w_m * scale
            clipped = True
        advantage = sum(r - b for r in rewards)
        return delta_w_q, delta_w_m, advantage, clipped

    def reinforce_update(self, trace: SelectionTrace, rewards: list[int],
                         credit: str = "per_position") -> UpdateStats:
        """Apply one policy-gradient step: W += eta * sum_t (r_t - b) grad_t."""
        delta_w_q, delta_w_m, advantage, clipped = self._trace_delta(
            trace, rewards, credit)
        self.params.w_q += self.params.eta * delta_w_q
        self.params.w_m += self.params.eta * delta_w_m
        self.params.update_count += 1
        return UpdateStats(
            grad_norm_w_q=float(np.linalg.norm(delta_w_q)),
            grad_norm_w_m=float(np.linalg.norm(delta_w_m)),
            advantage_sum=advantage,
            clipped=clipped,
            update_index=self.params.update_count,
        )

    def accumulate(self, trace: SelectionTrace, rewards: list[int],
                   credit: str = "per_position") -> UpdateStats:
        """Stage one trace's gradient; params change at apply_accumulated."""
        delta_w_q, delta_w_m, advantage, clipped = self._trace_delta(
            trace, rewards, credit)
        self._pending.append((delta_w_q, delta_w_m, advantage))
        return UpdateStats(
            grad_norm_w_q=float(np.linalg.norm(delta_w_q)),
            grad_norm_w_m=float(np.linalg.norm(delta_w_m)),
            advantage_sum=advantage,
            clipped=clipped,
            update_index=self.params.update_count + len(self._pending),
        )

    @property
    def pending_count(self) -> int:
        return len(self._pending)

    def apply_accumulated(self) -> int:
        """Apply all staged trace gradients as one parameter step."""
        if not self._pending:
            return 0
        total_w_q = sum(d for d, _, _ in self._pending)
        total_w_m = sum(d for _, d, _ in self._pending)
        applied = len(self._pending)
        self.params.w_q += self.params.eta * total_w_q
        self.params.w_m += self.params.eta * total_w_m
        self.params.update_count += applied
        self._pending.clear()
        return applied

    # -- persistence ---------------------------------------------------------

    def save(self, path: str | Path) -> None:
        save_params(self.params, path)

    @classmethod
    def load(cls, path: str | Path,
             dimension: int | None = None) -> "Reranker":
        return cls(load_params(path, dimension=dimension))


def save_params(params: RerankerParams, path: str | Path) -> None:
    record = {
        "dimension": params.dimension,
        "tau": params.tau,
        "eta": params.eta,
        "baseline": params.baseline,
        "rng_seed": params.rng_seed,
        "update_count": params.update_count,
        "w_q": [[float(x) for x in row] for row in params.w_q],
        "w_m": [[float(x) for x in row] for row in params.w_m],
    }
    atomic_write(path, json.dumps(record, sort_keys=True,
                                  separators=(",", ":")) + "\n")


def load_params(path: str | Path,
                dimension: int | None = None) -> RerankerParams:
    try:
        record = json.loads(Path(path).read_text(encoding="utf-8"))
    except ValueError as exc:
        raise CorruptFile(f"{path}: {exc}") from exc
    for key in ("dimension", "tau", "eta", "baseline", "rng_seed",
                "update_count", "w_q", "w_m"):
        if key not in record:
            raise CorruptFile(f"{path}: missing key {key!r}")
    d = int(record["dimension"])
    if dimension is not None and d != dimension:
        raise DimensionMismatch(
            f"params file is d={d}, runtime expects d={dimension}")
    w_q = np.asarray(record["w_q"], dtype=np.float64)
    w_m = np.asarray(record["w_m"], dtype=np.float64)
    if w_q.shape != (d, d) or w_m.shape != (d, d):
        raise CorruptFile(f"{path}: matrix shapes do not match dimension {d}")
    return RerankerParams(
        w_q=w_q, w_m=w_m, tau=float(record["tau"]), eta=float(record["eta"]),
        baseline=float(record["baseline"]), rng_seed=int(record["rng_seed"]),
        update_count=int(record["update_count"]))
