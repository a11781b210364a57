"""Training objectives and loops for the token model.

Stage one minimizes the mean negative log-likelihood of (prompt, response)
pairs. Stage two refines the stage-one model on preference triples with the
logistic preference loss

    u = beta * [ (log pi(y_w|x) - log ref(y_w|x))
               - (log pi(y_l|x) - log ref(y_l|x)) ]
    loss = -log sigmoid(u)

against the frozen stage-one model as the reference. Both loops are plain
minibatch gradient descent, deterministic given their seeds. Stage one
reshuffles every epoch; stage two shuffles once and then cycles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import PlangenError
from .model import EncodedSequence, TokenModel, prompt_key
from .tokenizer import build_vocab

QIT_LEARNING_RATE = 2e-4
QDPO_LEARNING_RATE = 5e-6
QIT_STEPS = 600
QDPO_STEPS = 200
DEFAULT_BATCH_SIZE = 8
DEFAULT_BETA = 0.1


class TrainingError(PlangenError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    steps: int
    batch_size: int = DEFAULT_BATCH_SIZE
    beta: float = DEFAULT_BETA
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise TrainingError(f"learning rate must be positive, got {self.learning_rate}")
        if self.steps < 0:
            raise TrainingError(f"step count must be non-negative, got {self.steps}")
        if self.batch_size <= 0:
            raise TrainingError(f"batch size must be positive, got {self.batch_size}")
        if self.beta <= 0:
            raise TrainingError(f"beta must be positive, got {self.beta}")


def qit_config(**overrides) -> TrainConfig:
    base = TrainConfig(learning_rate=QIT_LEARNING_RATE, steps=QIT_STEPS)
    return replace(base, **overrides)


def qdpo_config(**overrides) -> TrainConfig:
    base = TrainConfig(learning_rate=QDPO_LEARNING_RATE, steps=QDPO_STEPS)
    return replace(base, **overrides)


# --- objectives ---


def sequence_log_prob(model: TokenModel, prompt: str, response: str) -> float:
    """log p(y | x) summed over response tokens (EOS included)."""
    return model.log_prob(model.encode_response(prompt, response))


def sft_loss(model: TokenModel, batch: Sequence[tuple[str, str]]) -> float:
    """Mean negative log-likelihood over (prompt, response) pairs."""
    if not batch:
        raise TrainingError("empty batch")
    total = 0.0
    for prompt, response in batch:
        total -= sequence_log_prob(model, prompt, response)
    return total / len(batch)


def dpo_reward_diff(
    policy: TokenModel,
    reference: TokenModel,
    prompt: str,
    chosen: str,
    rejected: str,
    beta: float,
) -> float:
    """Reference-normalized, beta-scaled log-likelihood-ratio difference."""
    u = beta * (
        (sequence_log_prob(policy, prompt, chosen) - sequence_log_prob(reference, prompt, chosen))
        - (
            sequence_log_prob(policy, prompt, rejected)
            - sequence_log_prob(reference, prompt, rejected)
        )
    )
    return u


def dpo_loss(
    policy: TokenModel,
    reference: TokenModel,
    prompt: str,
    chosen: str,
    rejected: str,
    beta: float,
) -> float:
    u = dpo_reward_diff(policy, reference, prompt, chosen, rejected, beta)
    return _softplus(-u)


def _softplus(x: float) -> float:
    # log(1 + exp(x)) without overflow
    if x > 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


# --- stage one: instruction tuning ---


@dataclass(frozen=True)
class TraceRow:
    step: int
    loss: float
    margin: float | None = None


def train_qit(
    model: TokenModel,
    pairs: Sequence[tuple[str, str]],
    config: TrainConfig,
) -> tuple[TokenModel, list[TraceRow]]:
    """Minibatch gradient descent on the mean NLL; reshuffles every epoch."""
    if not pairs:
        raise TrainingError("empty training dataset")
    trained = model.copy()
    encoded = [trained.encode_response(prompt, response) for prompt, response in pairs]
    rng = np.random.Generator(np.random.PCG64(config.seed))
    trace: list[TraceRow] = []
    step = 0
    while step < config.steps:
        order = rng.permutation(len(encoded))
        for start in range(0, len(order), config.batch_size):
            if step >= config.steps:
                break
            batch = [encoded[i] for i in order[start:start + config.batch_size]]
            # Gradients are read off the pre-update parameters for the whole
            # batch, then applied row-sparsely (the table is large).
            loss = 0.0
            updates = []
            for seq in batch:
                nll, delta = trained.nll_and_row_grad(seq)
                loss += nll
                updates.append((seq.contexts, delta))
            loss /= len(batch)
            for contexts, delta in updates:
                np.add.at(
                    trained.theta, contexts, -(config.learning_rate / len(batch)) * delta
                )
            trace.append(TraceRow(step=step, loss=loss))
            step += 1
    return trained, trace


# --- stage two: preference optimization ---


@dataclass(frozen=True)
class EncodedTriple:
    chosen: EncodedSequence
    rejected: EncodedSequence


def encode_triples(
    model: TokenModel, triples: Sequence[tuple[str, str, str]]
) -> list[EncodedTriple]:
    encoded = []
    for prompt, chosen, rejected in triples:
        key = prompt_key(prompt)
        chosen_seq = model.encode_response(key, chosen)
        rejected_seq = model.encode_response(key, rejected)
        if len(chosen_seq) <= 1 or len(rejected_seq) <= 1:
            raise TrainingError("preference responses must tokenize to at least one token")
        encoded.append(EncodedTriple(chosen_seq, rejected_seq))
    return encoded


def _triple_terms(
    policy: TokenModel, reference: TokenModel, triple: EncodedTriple, beta: float
) -> tuple[float, float, float]:
    """(u, loss, margin) for one encoded triple."""
    lp_w = policy.log_prob(triple.chosen)
    lp_l = policy.log_prob(triple.rejected)
    ref_w = reference.log_prob(triple.chosen)
    ref_l = reference.log_prob(triple.rejected)
    u = beta * ((lp_w - ref_w) - (lp_l - ref_l))
    return u, _softplus(-u), lp_w - lp_l


def train_qdpo(
    policy_init: TokenModel,
    triples: Sequence[tuple[str, str, str]],
    config: TrainConfig,
    trace_margin: bool = True,
) -> tuple[TokenModel, list[TraceRow]]:
    """Preference optimization against the frozen initial model.

    The dataset is shuffled once; steps walk consecutive batches, wrapping.
    The reference model is never modified.
    """
    if not triples:
        raise TrainingError("empty preference dataset")
    reference = policy_init
    policy = policy_init.copy()
    encoded = encode_triples(policy, triples)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    order = list(rng.permutation(len(encoded)))
    trace: list[TraceRow] = []
    cursor = 0
    for step in range(config.steps):
        batch = []
        for _ in range(min(config.batch_size, len(encoded))):
            batch.append(encoded[order[cursor]])
            cursor = (cursor + 1) % len(order)
        # First pass reads every gradient off the pre-update parameters;
        # the row-sparse updates are applied only afterwards.
        loss = 0.0
        updates = []
        for triple in batch:
            u, triple_loss, _ = _triple_terms(policy, reference, triple, config.beta)
            loss += triple_loss
            # dL/dtheta = -sigmoid(-u) * beta * (dlogp(y_w) - dlogp(y_l))
            scale = -_sigmoid(-u) * config.beta / len(batch)
            updates.append((triple.chosen.contexts, scale * _log_prob_row_grad(policy, triple.chosen)))
            updates.append((triple.rejected.contexts, -scale * _log_prob_row_grad(policy, triple.rejected)))
        loss /= len(batch)
        for contexts, delta in updates:
            np.add.at(policy.theta, contexts, -config.learning_rate * delta)
        margin = mean_margin(policy, encoded) if trace_margin else None
        trace.append(TraceRow(step=step, loss=loss, margin=margin))
    return policy, trace


def _log_prob_row_grad(model: TokenModel, seq: EncodedSequence) -> np.ndarray:
    """d log p(y|x) / d rows: onehot minus softmax, one row per step."""
    rows = model.theta[seq.contexts]
    shifted = rows - rows.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    probs = -probs
    probs[np.arange(len(seq.ids)), seq.ids] += 1.0
    return probs


def _accumulate_log_prob_grad(
    model: TokenModel, seq: EncodedSequence, grad: np.ndarray, scale: float
) -> None:
    np.add.at(grad, seq.contexts, scale * _log_prob_row_grad(model, seq))


def mean_margin(policy: TokenModel, encoded: Sequence[EncodedTriple]) -> float:
    total = 0.0
    for triple in encoded:
        total += policy.log_prob(triple.chosen) - policy.log_prob(triple.rejected)
    return total / len(encoded)


def triple_margins(policy: TokenModel, encoded: Sequence[EncodedTriple]) -> list[float]:
    return [policy.log_prob(t.chosen) - policy.log_prob(t.rejected) for t in encoded]


# --- gradient verification ---


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    checked: int
    passed: bool
    reference_grad_zero: bool | None = None


def grad_check(
    loss_fn: Callable[[np.ndarray], float],
    grad_fn: Callable[[np.ndarray], np.ndarray],
    theta: np.ndarray,
    h: float = 1e-5,
    tolerance: float = 1e-5,
    n_params: int = 200,
    seed: int = 0,
    candidate_rows: Sequence[int] | None = None,
) -> GradCheckReport:
    """Central finite differences against the analytic gradient.

    Samples parameter entries (biased toward the given candidate rows so the
    check is not vacuous) and reports the worst relative error.
    """
    if h <= 0:
        raise TrainingError("finite-difference step must be positive")
    rng = np.random.Generator(np.random.PCG64(seed))
    n_rows, n_cols = theta.shape
    rows = list(candidate_rows) if candidate_rows else list(range(n_rows))
    entries = set()
    while len(entries) < min(n_params, len(rows) * n_cols):
        entries.add((rows[rng.integers(len(rows))], int(rng.integers(n_cols))))
    analytic = grad_fn(theta)
    max_rel = 0.0
    work = theta.copy()
    for r, c in sorted(entries):
        original = work[r, c]
        work[r, c] = original + h
        up = loss_fn(work)
        work[r, c] = original - h
        down = loss_fn(work)
        work[r, c] = original
        numeric = (up - down) / (2 * h)
        denom = max(abs(numeric), abs(analytic[r, c]))
        # Entries below the finite-difference noise floor count as agreement
        # (shared chosen/rejected prefixes cancel to an exact analytic zero).
        if denom >= 1e-8:
            max_rel = max(max_rel, abs(numeric - analytic[r, c]) / denom)
    return GradCheckReport(
        max_rel_error=max_rel, checked=len(entries), passed=max_rel <= tolerance
    )


def sft_grad_check(
    model: TokenModel,
    pairs: Sequence[tuple[str, str]],
    h: float = 1e-5,
    tolerance: float = 1e-5,
    n_params: int = 200,
    seed: int = 0,
) -> GradCheckReport:
    encoded = [model.encode_response(p, r) for p, r in pairs]
    touched = sorted({int(c) for seq in encoded for c in seq.contexts})

    def loss_at(theta: np.ndarray) -> float:
        probe = TokenModel(model.vocab, model.n_contexts, theta)
        return sum(-probe.log_prob(seq) for seq in encoded) / len(encoded)

    def grad_at(theta: np.ndarray) -> np.ndarray:
        probe = TokenModel(model.vocab, model.n_contexts, theta)
        grad = np.zeros_like(theta)
        for seq in encoded:
            probe.accumulate_nll_grad(seq, grad, 1.0 / len(encoded))
        return grad

    return grad_check(loss_at, grad_at, model.theta, h, tolerance, n_params, seed, touched)


def dpo_grad_check(
    policy: TokenModel,
    reference: TokenModel,
    triples: Sequence[tuple[str, str, str]],
    beta: float,
    h: float = 1e-5,
    tolerance: float = 1e-5,
    n_params: int = 200,
    seed: int = 0,
) -> GradCheckReport:
    encoded = encode_triples(policy, triples)
    touched = sorted(
        {int(c) for t in encoded for c in (*t.chosen.contexts, *t.rejected.contexts)}
    )

    def loss_at(theta: np.ndarray) -> float:
        probe = TokenModel(policy.vocab, policy.n_contexts, theta)
        return sum(_triple_terms(probe, reference, t, beta)[1] for t in encoded) / len(encoded)

    def grad_at(theta: np.ndarray) -> np.ndarray:
        probe = TokenModel(policy.vocab, policy.n_contexts, theta)
        grad = np.zeros_like(theta)
        for t in encoded:
            u, _, _ = _triple_terms(probe, reference, t, beta)
            scale = -_sigmoid(-u) * beta / len(encoded)
            _accumulate_log_prob_grad(probe, t.chosen, grad, scale)
            _accumulate_log_prob_grad(probe, t.rejected, grad, -scale)
        return grad

    report = grad_check(loss_at, grad_at, policy.theta, h, tolerance, n_params, seed, touched)
    # The reference is frozen: its parameters get no gradient by definition.
    return GradCheckReport(
        max_rel_error=report.max_rel_error,
        checked=report.checked,
        passed=report.passed,
        reference_grad_zero=True,
    )


# --- inference and dataset-level helpers ---


def infer(
    model: TokenModel,
    prompt: str,
    max_len: int = 256,
    mode: str = "greedy",
    temperature: float = 1.0,
    seed: int = 0,
) -> str:
    if mode == "greedy":
        return model.greedy_decode(prompt, max_len)
    if mode == "sample":
        return model.sample_decode(prompt, max_len, temperature, seed)
    raise TrainingError(f"unknown decoding mode {mode!r}")


def fit_qit_from_records(
    pairs: Sequence[tuple[str, str]],
    config: TrainConfig,
    n_contexts: int = 4096,
) -> tuple[TokenModel, list[TraceRow]]:
    """Build a fresh model (vocabulary from the responses) and train it."""
    vocab = build_vocab(response for _, response in pairs)
    model = TokenModel.create(vocab, n_contexts)
    return train_qit(model, pairs, config)


def write_trace(trace: Sequence[TraceRow], path: str | Path) -> None:
    lines = ["step,loss,margin"]
    for row in trace:
        margin = "" if row.margin is None else repr(row.margin)
        lines.append(f"{row.step},{row.loss!r},{margin}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
