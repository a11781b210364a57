import math

import numpy as np
import pytest

from plangen.dataset import build_prompt
from plangen.model import TokenModel
from plangen.plans import parse_response, render_response
from plangen.sql import parse_sql
from plangen.tokenizer import build_vocab
from plangen.training import (
    TrainConfig,
    TrainingError,
    dpo_grad_check,
    encode_triples,
    fit_qit_from_records,
    infer,
    mean_margin,
    qdpo_config,
    qit_config,
    sft_grad_check,
    train_qdpo,
    train_qit,
    triple_margins,
    write_trace,
)


@pytest.fixture(scope="module")
def overfit_pair(micro_catalog):
    query = parse_sql(
        "SELECT * FROM title, movie_companies, movie_info_idx "
        "WHERE title.movie_id = movie_companies.movie_id "
        "AND title.movie_id = movie_info_idx.movie_id AND title.product_year > 1950;"
    )
    prompt = build_prompt(query, micro_catalog)
    response = render_response(
        parse_response(
            "Therefore, the final answer is:\n"
            "HashJoin(movie_info_idx HashJoin(movie_companies title))."
        )
    )
    return prompt, response


def test_qit_overfits_single_sample(overfit_pair):
    prompt, response = overfit_pair
    model, trace = fit_qit_from_records([overfit_pair], qit_config(seed=1))
    # Loss decreases on average over the run.
    first_quarter = [r.loss for r in trace[: len(trace) // 4]]
    last_quarter = [r.loss for r in trace[-len(trace) // 4:]]
    assert sum(last_quarter) / len(last_quarter) < sum(first_quarter) / len(first_quarter)
    decoded = model.greedy_decode(prompt, max_len=256)
    assert parse_response(decoded, lenient=True) == parse_response(response)
    # Token-for-token reproduction of the target (modulo whitespace layout).
    from plangen.tokenizer import split_tokens

    assert split_tokens(decoded) == split_tokens(response)


def test_qit_zero_steps_no_change(overfit_pair):
    vocab = build_vocab([overfit_pair[1]])
    model = TokenModel.create(vocab, 512)
    trained, trace = train_qit(model, [overfit_pair], qit_config(steps=0))
    assert np.array_equal(trained.theta, model.theta)
    assert trace == []


def test_qit_same_seed_bit_identical(overfit_pair, micro_catalog):
    a, _ = fit_qit_from_records([overfit_pair], qit_config(steps=50, seed=9))
    b, _ = fit_qit_from_records([overfit_pair], qit_config(steps=50, seed=9))
    assert np.array_equal(a.theta, b.theta)
    # With several samples the shuffle order matters, so seeds separate runs.
    pairs = [overfit_pair] + [
        (p, w) for p, w, _ in _toy_triples(micro_catalog)
    ] + [(p, l) for p, _, l in _toy_triples(micro_catalog)]
    d, _ = fit_qit_from_records(pairs, qit_config(steps=50, batch_size=2, seed=9))
    e, _ = fit_qit_from_records(pairs, qit_config(steps=50, batch_size=2, seed=10))
    assert not np.array_equal(d.theta, e.theta)


def _toy_triples(micro_catalog):
    specs = [
        (
            "SELECT * FROM title, cast_info WHERE title.movie_id = cast_info.movie_id;",
            "HashJoin(cast_info title)",
            "NestLoopJoin(title cast_info)",
        ),
        (
            "SELECT * FROM title, movie_keyword WHERE title.movie_id = movie_keyword.movie_id;",
            "MergeJoin(movie_keyword title)",
            "NestLoopJoin(movie_keyword title)",
        ),
    ]
    triples = []
    for sql, good, bad in specs:
        prompt = build_prompt(parse_sql(sql), micro_catalog)
        triples.append(
            (
                prompt,
                render_response(parse_response(f"Therefore, the final answer is:\n{good}.")),
                render_response(parse_response(f"Therefore, the final answer is:\n{bad}.")),
            )
        )
    return triples


def test_qdpo_margin_strictly_increases(micro_catalog):
    triples = _toy_triples(micro_catalog)[:1]
    vocab = build_vocab([t[1] for t in triples] + [t[2] for t in triples])
    policy = TokenModel.create(vocab, 512)
    trained, trace = train_qdpo(policy, triples, qdpo_config(steps=40, learning_rate=0.05, seed=2))
    margins = [row.margin for row in trace]
    assert all(b > a for a, b in zip(margins, margins[1:]))
    assert margins[-1] > margins[0]


def test_qdpo_step0_loss_is_ln2(micro_catalog):
    triples = _toy_triples(micro_catalog)
    vocab = build_vocab([t[1] for t in triples] + [t[2] for t in triples])
    policy = TokenModel.create(vocab, 512)
    _, trace = train_qdpo(policy, triples, qdpo_config(steps=1, seed=0))
    assert trace[0].loss == pytest.approx(math.log(2.0), abs=1e-12)


def test_qdpo_reference_never_mutated(micro_catalog):
    triples = _toy_triples(micro_catalog)
    vocab = build_vocab([t[1] for t in triples] + [t[2] for t in triples])
    policy = TokenModel.create(vocab, 512)
    before = policy.theta.tobytes()
    trained, _ = train_qdpo(policy, triples, qdpo_config(steps=30, learning_rate=0.05, seed=4))
    assert policy.theta.tobytes() == before
    assert not np.array_equal(trained.theta, policy.theta)


def test_beta_zero_rejected():
    with pytest.raises(TrainingError, match="beta"):
        TrainConfig(learning_rate=0.1, steps=1, beta=0.0)


def test_negative_lr_rejected():
    with pytest.raises(TrainingError, match="learning rate"):
        TrainConfig(learning_rate=-1.0, steps=1)


def test_grad_check_zero_params_vacuous(overfit_pair):
    vocab = build_vocab([overfit_pair[1]])
    model = TokenModel.create(vocab, 512)
    report = sft_grad_check(model, [overfit_pair], n_params=0)
    assert report.checked == 0
    assert report.passed
    assert report.max_rel_error == 0.0


def test_sft_grad_check(overfit_pair):
    vocab = build_vocab([overfit_pair[1]])
    model = TokenModel.create(vocab, 512)
    rng = np.random.Generator(np.random.PCG64(8))
    model.theta = rng.normal(0, 0.5, size=model.theta.shape)
    report = sft_grad_check(model, [overfit_pair], n_params=200, seed=1)
    assert report.checked >= 200
    assert report.passed, report.max_rel_error
    assert report.max_rel_error <= 1e-5


def test_dpo_grad_check(micro_catalog):
    triples = _toy_triples(micro_catalog)
    vocab = build_vocab([t[1] for t in triples] + [t[2] for t in triples])
    rng = np.random.Generator(np.random.PCG64(5))
    policy = TokenModel.create(vocab, 512)
    policy.theta = rng.normal(0, 0.5, size=policy.theta.shape)
    reference = TokenModel.create(vocab, 512)
    reference.theta = rng.normal(0, 0.5, size=reference.theta.shape)
    report = dpo_grad_check(policy, reference, triples, beta=0.1, n_params=200, seed=2)
    assert report.checked >= 200
    assert report.passed, report.max_rel_error
    assert report.reference_grad_zero is True


def test_beta_controls_divergence(micro_catalog):
    # Higher beta saturates the preference gradient sooner, ending closer to
    # the reference model.
    triples = _toy_triples(micro_catalog)
    vocab = build_vocab([t[1] for t in triples] + [t[2] for t in triples])
    policy = TokenModel.create(vocab, 512)
    small, _ = train_qdpo(
        policy, triples, qdpo_config(steps=2500, learning_rate=0.05, beta=0.05, seed=3),
        trace_margin=False,
    )
    large, _ = train_qdpo(
        policy, triples, qdpo_config(steps=2500, learning_rate=0.05, beta=0.5, seed=3),
        trace_margin=False,
    )
    disp_small = float(np.linalg.norm(small.theta - policy.theta))
    disp_large = float(np.linalg.norm(large.theta - policy.theta))
    assert disp_large < disp_small


def test_infer_modes(overfit_pair):
    model, _ = fit_qit_from_records([overfit_pair], qit_config(steps=30, seed=0))
    assert infer(model, overfit_pair[0], max_len=5) == model.greedy_decode(overfit_pair[0], 5)
    sampled = infer(model, overfit_pair[0], max_len=5, mode="sample", temperature=2.0, seed=1)
    assert isinstance(sampled, str)
    with pytest.raises(TrainingError):
        infer(model, overfit_pair[0], mode="beam")


def test_write_trace(tmp_path, overfit_pair):
    _, trace = fit_qit_from_records([overfit_pair], qit_config(steps=3, seed=0))
    path = tmp_path / "trace.csv"
    write_trace(trace, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,loss,margin"
    assert len(lines) == 4


def test_qdpo_margin_oracle_consistency(micro_catalog):
    # margin helpers agree with direct log-prob differences
    triples = _toy_triples(micro_catalog)
    vocab = build_vocab([t[1] for t in triples] + [t[2] for t in triples])
    policy = TokenModel.create(vocab, 512)
    rng = np.random.Generator(np.random.PCG64(11))
    policy.theta = rng.normal(0, 1, size=policy.theta.shape)
    encoded = encode_triples(policy, triples)
    margins = triple_margins(policy, encoded)
    from plangen.training import sequence_log_prob

    want = [
        sequence_log_prob(policy, p, w) - sequence_log_prob(policy, p, l)
        for p, w, l in triples
    ]
    assert margins == pytest.approx(want, abs=1e-10)
    assert mean_margin(policy, encoded) == pytest.approx(sum(want) / len(want), abs=1e-10)
