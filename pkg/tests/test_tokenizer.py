from plangen.tokenizer import (
    BOS,
    EOS,
    UNK,
    build_vocab,
    detokenize,
    split_tokens,
    tokenize,
)


def test_split_bracket_tokens():
    assert split_tokens("HashJoin(a b)") == ["HashJoin", "(", "a", "b", ")"]


def test_split_step_line():
    assert split_tokens("Step1: [a, b, MergeJoin],") == [
        "Step1", ":", "[", "a", ",", "b", ",", "MergeJoin", "]", ",",
    ]


def test_movie_bracket_token_count():
    # The lexer rule gives nine tokens for the three-table bracket: two
    # operator words, two '(', three table names, two ')'.
    tokens = split_tokens("HashJoin(movie_info_idx HashJoin(movie_companies title))")
    assert tokens == [
        "HashJoin", "(", "movie_info_idx", "HashJoin", "(",
        "movie_companies", "title", ")", ")",
    ]
    assert len(tokens) == 9


def test_tokenize_appends_eos_for_responses():
    vocab = build_vocab(["HashJoin(a b)"])
    assert tokenize("HashJoin(a b)", vocab) == vocab.encode(["HashJoin", "(", "a", "b", ")"])
    assert tokenize("HashJoin(a b)", vocab, response=True)[-1] == vocab.eos_id


def test_tokenize_empty():
    vocab = build_vocab(["x"])
    assert tokenize("", vocab) == []
    assert tokenize("", vocab, response=True) == [vocab.eos_id]


def test_unknown_words_map_to_unk():
    vocab = build_vocab(["alpha"])
    ids = tokenize("alpha omega", vocab)
    assert ids[0] != vocab.unk_id
    assert ids[1] == vocab.unk_id


def test_vocab_round_trip():
    vocab = build_vocab(["MergeJoin(a b)", "Step1: [a, b, MergeJoin],"])
    tokens = split_tokens("Step1: [a, b, MergeJoin],")
    assert vocab.decode(vocab.encode(tokens)) == tokens
    assert vocab.tokens[:3] == (BOS, EOS, UNK)
    assert sorted(set(vocab.tokens)) == sorted(vocab.tokens)  # ids dense and unique


def test_detokenize_round_trips_through_parser(movie_plan):
    from plangen.plans import parse_response, render_response

    text = render_response(movie_plan)
    vocab = build_vocab([text])
    ids = tokenize(text, vocab, response=True)
    rebuilt = detokenize(vocab.decode(ids))
    assert parse_response(rebuilt) == movie_plan


def test_detokenize_spacing():
    assert detokenize(["Therefore", ",", "the", "final", "answer", "is", ":"]) == (
        "Therefore, the final answer is:"
    )
    assert detokenize(["HashJoin", "(", "a", "b", ")", "."]) == "HashJoin(a b)."
