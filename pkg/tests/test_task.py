"""Synthetic task generation tests: incumbent model, user edits, persistence."""

import numpy as np
import pytest

from fedcorrect.client import EligibilitySpec, valid_corrections
from fedcorrect.errors import ConfigError
from fedcorrect.task import (
    TaskSpec,
    build_incumbent,
    embeddings,
    generate_clients,
    load_dataset,
    save_dataset,
    word_probs,
)


def make_task(**kw):
    defaults = dict(
        vocab_size=30, feature_dim=4, embedding_seed=3, feature_noise=0.1,
        hard_words={1: 11, 4: 14, 9: 19}, p_err=0.6,
        utterance_len_range=(3, 6), n_clients=12, examples_per_client=4,
        fix_prob=0.7, garble_prob=0.1, garble_len_range=(1, 12),
        eval_size=20,
    )
    defaults.update(kw)
    return TaskSpec(**defaults)


# --- validation -----------------------------------------------------------

def test_task_rejects_out_of_vocab_hard_words():
    with pytest.raises(ConfigError):
        make_task(hard_words={50: 1})
    with pytest.raises(ConfigError):
        make_task(hard_words={1: 50})
    with pytest.raises(ConfigError):
        make_task(hard_words={1: 1})


def test_task_rejects_bad_probabilities():
    with pytest.raises(ConfigError):
        make_task(p_err=1.5)
    with pytest.raises(ConfigError):
        make_task(fix_prob=0.8, garble_prob=0.3)


def test_task_rejects_bad_ranges():
    with pytest.raises(ConfigError):
        make_task(utterance_len_range=(0, 3))
    with pytest.raises(ConfigError):
        make_task(garble_len_range=(5, 2))


# --- word distribution and embeddings -------------------------------------

def test_word_probs_zipf_shape():
    p = word_probs(make_task())
    assert p.sum() == pytest.approx(1.0)
    assert np.all(np.diff(p) < 0)  # strictly decreasing with word id


def test_embeddings_fixed_by_embedding_seed():
    a = embeddings(make_task())
    b = embeddings(make_task(feature_noise=0.5))
    assert np.array_equal(a, b)
    c = embeddings(make_task(embedding_seed=4))
    assert not np.array_equal(a, c)


# --- incumbent ------------------------------------------------------------

def test_incumbent_perfect_when_no_error_rate():
    inc = build_incumbent(make_task(p_err=0.0))
    truth = (1, 4, 9, 2, 3)
    assert inc.transcribe(truth, key=(0, 0)) == truth


def test_incumbent_always_confuses_at_full_rate():
    inc = build_incumbent(make_task(p_err=1.0, hard_words={4: 14}))
    assert inc.transcribe((4, 2, 4), key=(1, 2)) == (14, 2, 14)


def test_incumbent_never_touches_easy_words():
    inc = build_incumbent(make_task(p_err=1.0))
    truth = (0, 2, 3, 5, 6)
    assert inc.transcribe(truth, key=(5,)) == truth


def test_incumbent_error_rate_binomial():
    task = make_task(p_err=0.5, hard_words={7: 8})
    inc = build_incumbent(task)
    n = 10_000
    flips = sum(
        inc.transcribe((7,), key=(k,)) != (7,) for k in range(n)
    )
    sigma = np.sqrt(n * 0.25)
    assert abs(flips - n * 0.5) < 3 * sigma


def test_incumbent_deterministic_per_key():
    inc = build_incumbent(make_task())
    truth = (1, 4, 9, 1, 4, 9)
    assert inc.transcribe(truth, key=(3, 3)) == inc.transcribe(truth, key=(3, 3))


# --- client generation ----------------------------------------------------

def test_all_fixes_word_list_covers_errors():
    task = make_task(fix_prob=1.0, garble_prob=0.0)
    data = generate_clients(task, seed=5)
    hard = set(task.hard_words)
    seen_errors = set()
    for client in data.clients:
        for ex in client:
            assert ex.is_correction == (ex.final_transcript != ex.incumbent_transcript)
            if ex.incumbent_transcript != ex.truth:
                # Every incumbent error was fixed to the truth.
                assert ex.final_transcript == ex.truth
                seen_errors.update(
                    t for t, i in zip(ex.truth, ex.incumbent_transcript) if t != i
                )
    assert data.word_list.words == seen_errors
    assert data.word_list.words <= hard


def test_no_edits_yield_zero_corrections():
    data = generate_clients(make_task(fix_prob=0.0, garble_prob=0.0), seed=5)
    spec = EligibilitySpec(min_corrections=1, max_word_len_diff=100)
    for client in data.clients:
        assert valid_corrections(client, spec) == []


def test_perfect_incumbent_means_no_corrections_ever():
    data = generate_clients(
        make_task(p_err=0.0, fix_prob=0.5, garble_prob=0.5), seed=6
    )
    assert all(not ex.is_correction for c in data.clients for ex in c)
    assert len(data.word_list.words) == 0


def test_oversized_garbles_all_fail_heuristic():
    task = make_task(
        fix_prob=0.0, garble_prob=1.0, garble_len_range=(30, 40), p_err=1.0,
        hard_words={0: 5, 1: 11},
    )
    data = generate_clients(task, seed=7)
    spec = EligibilitySpec(min_corrections=1, max_word_len_diff=2)
    n_corrections = sum(ex.is_correction for c in data.clients for ex in c)
    assert n_corrections > 0
    for client in data.clients:
        assert valid_corrections(client, spec) == []


def test_noise_free_features_equal_embeddings():
    task = make_task(feature_noise=0.0)
    data = generate_clients(task, seed=8)
    emb = embeddings(task)
    ex = data.clients[0][0]
    assert np.array_equal(ex.features, emb[list(ex.truth)])
    u = data.eval_set[0]
    assert np.array_equal(u.features, emb[list(u.truth)])


def test_generation_deterministic():
    task = make_task()
    d1 = generate_clients(task, seed=9)
    d2 = generate_clients(task, seed=9)
    assert d1.word_list.words == d2.word_list.words
    for c1, c2 in zip(d1.clients, d2.clients):
        for a, b in zip(c1, c2):
            assert a.truth == b.truth
            assert a.incumbent_transcript == b.incumbent_transcript
            assert a.final_transcript == b.final_transcript
            assert a.features.tobytes() == b.features.tobytes()
    d3 = generate_clients(task, seed=10)
    assert any(
        a.truth != b.truth for c1, c2 in zip(d1.clients, d3.clients)
        for a, b in zip(c1, c2)
    )


def test_eval_set_shape():
    task = make_task(eval_size=15)
    data = generate_clients(task, seed=11)
    assert len(data.eval_set) == 15
    for u in data.eval_set:
        assert len(u.truth) == len(u.incumbent) == len(u.features)
        lo, hi = task.utterance_len_range
        assert lo <= len(u.truth) <= hi


# --- persistence ----------------------------------------------------------

def test_dataset_round_trip(tmp_path):
    task = make_task()
    data = generate_clients(task, seed=12)
    path = tmp_path / "data.npz"
    save_dataset(data, path)
    loaded = load_dataset(path)
    assert loaded.word_list.words == data.word_list.words
    assert len(loaded.clients) == len(data.clients)
    for c1, c2 in zip(data.clients, loaded.clients):
        for a, b in zip(c1, c2):
            assert a.truth == b.truth
            assert a.incumbent_transcript == b.incumbent_transcript
            assert a.final_transcript == b.final_transcript
            assert a.features.tobytes() == b.features.tobytes()
    for u1, u2 in zip(data.eval_set, loaded.eval_set):
        assert u1.truth == u2.truth
        assert u1.incumbent == u2.incumbent
        assert u1.features.tobytes() == u2.features.tobytes()
