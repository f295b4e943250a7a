"""Eligibility, filtering, corrected-word extraction, and local-update tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedcorrect.client import (
    ClientExample,
    EligibilitySpec,
    LocalUpdate,
    compute_example_weight,
    corrected_words,
    eligibility_test,
    filter_batch,
    local_update,
    quality_heuristic,
    training_labels,
    valid_corrections,
)
from fedcorrect.errors import ConfigError, ContractError, DataError, EligibilityError
from fedcorrect.model import backward, forward
from fedcorrect.params import ModelArch, init_model
from fedcorrect.stats import AccTable, FreqTable

ARCH = ModelArch(vocab_size=12, feature_dim=3, hidden_dims=(6, 5))


def ex(incumbent, final, seed=0, truth=None):
    rng = np.random.default_rng(seed)
    return ClientExample(
        features=rng.normal(size=(len(incumbent), 3)),
        truth=tuple(truth if truth is not None else incumbent),
        incumbent_transcript=tuple(incumbent),
        final_transcript=tuple(final),
        is_correction=tuple(final) != tuple(incumbent),
    )


SPEC = EligibilitySpec(min_corrections=2, max_word_len_diff=1)


# --- example validation ---------------------------------------------------

def test_example_rejects_feature_mismatch():
    with pytest.raises(DataError):
        ClientExample(
            features=np.zeros((2, 3)), truth=(1,), incumbent_transcript=(1,),
            final_transcript=(1,), is_correction=False,
        )


def test_example_rejects_wrong_correction_flag():
    with pytest.raises(DataError):
        ClientExample(
            features=np.zeros((1, 3)), truth=(1,), incumbent_transcript=(1,),
            final_transcript=(2,), is_correction=False,
        )


def test_update_rejects_negative_weight():
    with pytest.raises(DataError):
        LocalUpdate(gradients={}, weight=-0.5, example_count=1)


# --- quality heuristic ----------------------------------------------------

def test_heuristic_single_word_swap_passes():
    # One word replaced by one word, threshold 1.
    assert quality_heuristic(ex([5], [6]), 1) is True


def test_heuristic_garbled_expansion_fails():
    # One word replaced by four, threshold 1.
    assert quality_heuristic(ex([5], [6, 7, 8, 9]), 1) is False


def test_heuristic_equal_length_zero_threshold():
    assert quality_heuristic(ex([5, 6], [5, 7]), 0) is True


def test_heuristic_rejects_non_correction():
    with pytest.raises(ContractError):
        quality_heuristic(ex([5], [5]), 1)


# --- eligibility and filtering --------------------------------------------

def test_eligibility_no_corrections():
    assert eligibility_test([ex([1], [1]), ex([2], [2])], SPEC) is False


def test_eligibility_two_valid():
    assert eligibility_test([ex([1], [2]), ex([3], [4])], SPEC) is True


def test_eligibility_counts_only_heuristic_survivors():
    data = [ex([1], [2]), ex([1], [2, 3, 4, 5]), ex([6], [7, 8, 9, 10])]
    # Three corrections but two fail the length check.
    assert eligibility_test(data, SPEC) is False


def test_filter_takes_first_survivors_in_order():
    data = [ex([1], [1]), ex([2], [3], seed=1), ex([4], [5], seed=2),
            ex([6], [7], seed=3)]
    batch = filter_batch(data, SPEC, 2)
    assert batch == [data[1], data[2]]


def test_filter_exact_fit_returns_all():
    data = [ex([1], [2]), ex([3], [4], seed=1)]
    assert filter_batch(data, SPEC, 2) == data


def test_filter_shortfall_raises():
    with pytest.raises(EligibilityError):
        filter_batch([ex([1], [2])], SPEC, 2)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3), st.integers(1, 4)),
                max_size=8))
def test_property_filter_law(raw):
    data = [ex([a], [b] * n, seed=i) for i, (a, b, n) in enumerate(raw)
            if not (n == 1 and a == b) or True]
    data = [d for d in data if True]
    spec = EligibilitySpec(min_corrections=1, max_word_len_diff=1)
    for got in valid_corrections(data, spec):
        assert got.is_correction
        assert quality_heuristic(got, spec.max_word_len_diff)


# --- corrected words and labels -------------------------------------------

def test_corrected_words_positionwise():
    assert corrected_words(ex([1, 2, 3], [1, 9, 3])) == [9]


def test_corrected_words_insertions():
    assert corrected_words(ex([1, 2], [1, 2, 7, 8])) == [7, 8]


def test_corrected_words_mixed_alignment():
    # 1->1 match, 2->5 sub, 3 deleted.
    assert corrected_words(ex([1, 2, 3], [1, 5])) == [5]


def test_corrected_words_multiplicity_tokens():
    assert corrected_words(ex([1, 1], [2, 2])) == [2, 2]


def test_labels_equal_length_are_final():
    got = training_labels(ex([1, 2, 3], [1, 9, 3]))
    assert got.tolist() == [1, 9, 3]


def test_labels_deletion_keeps_incumbent_frame():
    got = training_labels(ex([1, 2, 3], [1, 3]))
    assert got.tolist() == [1, 2, 3]


def test_labels_insertion_has_no_frame():
    got = training_labels(ex([1, 2], [1, 9, 2]))
    assert got.tolist() == [1, 2]


def test_labels_substitution_under_deletion():
    # Backtrace tie-break aligns 3->5 and deletes 2, so frame 1 keeps its
    # incumbent label.
    got = training_labels(ex([1, 2, 3], [1, 5]))
    assert got.tolist() == [1, 2, 5]


# --- example weights ------------------------------------------------------

def freq(counts, floor=1.0):
    return FreqTable(counts=counts, epsilon=1.0, floor=floor)


def test_weight_uniform_is_one():
    assert compute_example_weight(ex([1], [2]), "uniform") == 1.0


def test_weight_frequency_unit_values():
    # Corrected words 3 and 4 with freqs 2 and 4: 1/2 + 1/4.
    example = ex([1, 2], [3, 4])
    got = compute_example_weight(example, "frequency", freq({3: 2.0, 4: 4.0}))
    assert got == 0.75


def test_weight_freq_accuracy_unit_values():
    example = ex([1, 2], [3, 4])
    got = compute_example_weight(
        example, "freq_accuracy", freq({3: 2.0, 4: 4.0}),
        AccTable(acc={3: 1.0, 4: 0.5}),
    )
    assert got == 0.125


def test_weight_no_corrections_is_zero():
    example = ex([1, 2], [1, 2])
    assert compute_example_weight(example, "frequency", freq({1: 1.0})) == 0.0


def test_weight_missing_word_uses_fallback_and_counts_miss():
    table = freq({3: 8.0})
    got = compute_example_weight(ex([1], [9]), "frequency", table)
    assert got == 1.0 / 8.0
    assert table.misses == 1


def test_weight_multiplicity_flag():
    example = ex([1, 1], [2, 2])
    table = freq({2: 2.0})
    assert compute_example_weight(example, "frequency", table) == 0.5
    assert compute_example_weight(example, "frequency", table,
                                  use_multiplicity=True) == 1.0


def test_weight_scheme_validation():
    with pytest.raises(ConfigError):
        compute_example_weight(ex([1], [2]), "softmax")
    with pytest.raises(ConfigError):
        compute_example_weight(ex([1], [2]), "frequency")
    with pytest.raises(ConfigError):
        compute_example_weight(ex([1], [2]), "freq_accuracy", freq({1: 1.0}))


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 10.0), st.integers(1, 30), st.integers(1, 30))
def test_property_weight_scales_inversely_with_frequency(c, f1, f2):
    example = ex([1, 2], [3, 4])
    base = compute_example_weight(
        example, "frequency", freq({3: float(f1), 4: float(f2)})
    )
    scaled = compute_example_weight(
        example, "frequency",
        freq({3: c * f1, 4: c * f2}, floor=min(1.0, c * min(f1, f2))),
    )
    assert scaled == pytest.approx(base / c, rel=1e-12)


# --- local update ---------------------------------------------------------

def test_local_update_single_example_uniform():
    params = init_model(ARCH, seed=1)
    example = ex([1, 2, 3], [1, 9, 3], seed=4)
    update = local_update(params, [example], "uniform")
    assert update.weight == 1.0
    assert update.example_count == 1
    direct = backward(
        params, forward(params, example.features), training_labels(example)
    )
    for name, g in direct.items():
        assert np.array_equal(update.gradients[name], g)


def test_local_update_matches_per_example_oracle():
    params = init_model(ARCH, seed=2)
    table = freq({9: 2.0, 7: 4.0, 8: 4.0})
    batch = [ex([1, 2, 3], [1, 9, 3], seed=5), ex([4, 5], [7, 8], seed=6)]
    update = local_update(params, batch, "frequency", table)
    expected_w = 0.0
    acc = {}
    for example in batch:
        w = compute_example_weight(example, "frequency", table)
        expected_w += w
        grads = backward(
            params, forward(params, example.features), training_labels(example)
        )
        for name, g in grads.items():
            acc[name] = acc.get(name, 0.0) + w * g.astype(np.float64)
    assert update.weight == expected_w
    for name in acc:
        assert np.array_equal(update.gradients[name], acc[name].astype(np.float32))


def test_local_update_duplicate_example_doubles():
    params = init_model(ARCH, seed=3)
    example = ex([1, 2], [3, 4], seed=7)
    table = freq({3: 2.0, 4: 4.0})
    single = local_update(params, [example], "frequency", table)
    double = local_update(params, [example, example], "frequency", table)
    assert double.weight == pytest.approx(2 * single.weight, rel=0, abs=0)
    for name, g in single.gradients.items():
        np.testing.assert_allclose(
            double.gradients[name], 2.0 * g.astype(np.float64), rtol=1e-6
        )


def test_local_update_zero_weight_batch():
    params = init_model(ARCH, seed=4)
    example = ex([1, 2], [3, 4], seed=8)
    update = local_update(
        params, [example], "freq_accuracy", freq({3: 2.0, 4: 2.0}),
        AccTable(acc={3: 1.0, 4: 1.0}),
    )
    assert update.weight == 0.0
    assert all(not g.any() for g in update.gradients.values())


def test_local_update_deterministic():
    params = init_model(ARCH, seed=5)
    batch = [ex([1, 2], [3, 4], seed=9)]
    table = freq({3: 2.0, 4: 4.0})
    u1 = local_update(params, batch, "frequency", table)
    u2 = local_update(params, batch, "frequency", table)
    assert u1.weight == u2.weight
    for name in u1.gradients:
        assert u1.gradients[name].tobytes() == u2.gradients[name].tobytes()


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4))
def test_property_uniform_weight_equals_batch_size(n):
    params = init_model(ARCH, seed=6)
    batch = [ex([1, 2], [3, 4], seed=10 + i) for i in range(n)]
    assert local_update(params, batch, "uniform").weight == float(n)
