"""Per-client behavior: eligibility, correction filtering, weighted gradients.

A client's training data is the set of user corrections that survive the
length-difference quality check.  Each round the client computes one batch of
per-example gradients against the corrected transcript, weights them by
corrected-word rarity (and optionally incumbent accuracy), and uploads the
weight-combined gradient sum with the weight total.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError, DataError, EligibilityError
from .model import backward, forward
from .params import ParameterSet
from .stats import AccTable, FreqTable, align

WEIGHT_SCHEMES = ("uniform", "frequency", "freq_accuracy")


@dataclass
class ClientExample:
    """One utterance with incumbent transcript and the user's final edit."""

    features: np.ndarray  # (len(incumbent_transcript), feature_dim)
    truth: tuple[int, ...]
    incumbent_transcript: tuple[int, ...]
    final_transcript: tuple[int, ...]
    is_correction: bool

    def __post_init__(self):
        self.truth = tuple(int(w) for w in self.truth)
        self.incumbent_transcript = tuple(int(w) for w in self.incumbent_transcript)
        self.final_transcript = tuple(int(w) for w in self.final_transcript)
        if len(self.features) != len(self.incumbent_transcript):
            raise DataError("features must align with the incumbent transcript")
        if self.is_correction != (self.final_transcript != self.incumbent_transcript):
            raise DataError("is_correction flag contradicts the transcripts")


@dataclass(frozen=True)
class EligibilitySpec:
    min_corrections: int
    max_word_len_diff: int

    def __post_init__(self):
        if self.min_corrections < 1:
            raise ConfigError("min_corrections must be at least 1")
        if self.max_word_len_diff < 0:
            raise ConfigError("max_word_len_diff must be non-negative")


@dataclass
class LocalUpdate:
    """Client upload: G_i = sum_j w_ij G_ij and w_i = sum_j w_ij."""

    gradients: dict[str, np.ndarray]
    weight: float
    example_count: int

    def __post_init__(self):
        if self.weight < 0:
            raise DataError("client weight must be non-negative")


def quality_heuristic(example: ClientExample, max_word_len_diff: int) -> bool:
    """Length-difference check marking suspect (garbled) corrections."""
    if not example.is_correction:
        raise ContractError("quality heuristic is only defined for corrections")
    diff = abs(len(example.final_transcript) - len(example.incumbent_transcript))
    return diff <= max_word_len_diff


def valid_corrections(
    dataset: Sequence[ClientExample], spec: EligibilitySpec
) -> list[ClientExample]:
    """Corrections passing the quality check, in stable on-device order."""
    return [
        ex
        for ex in dataset
        if ex.is_correction and quality_heuristic(ex, spec.max_word_len_diff)
    ]


def eligibility_test(dataset: Sequence[ClientExample], spec: EligibilitySpec) -> bool:
    return len(valid_corrections(dataset, spec)) >= spec.min_corrections


def filter_batch(
    dataset: Sequence[ClientExample], spec: EligibilitySpec, batch_size: int
) -> list[ClientExample]:
    survivors = valid_corrections(dataset, spec)
    if len(survivors) < batch_size:
        raise EligibilityError(
            f"{len(survivors)} valid corrections but batch needs {batch_size}"
        )
    return survivors[:batch_size]


def corrected_words(example: ClientExample) -> list[int]:
    """Final-transcript words the user changed, in transcript order.

    Equal-length transcripts compare position by position; otherwise an edit
    alignment supplies the changed (substituted or inserted) final words.
    """
    inc, fin = example.incumbent_transcript, example.final_transcript
    if len(inc) == len(fin):
        return [f for i, f in zip(inc, fin) if i != f]
    return [fin[j] for op, _, j in align(inc, fin) if op in ("sub", "ins")]


def training_labels(example: ClientExample) -> np.ndarray:
    """Per-frame label ids for training against the corrected transcript.

    Frames keep their incumbent label where the user deleted a word; inserted
    words have no frame and only contribute to the corrected-word set.
    """
    inc, fin = example.incumbent_transcript, example.final_transcript
    if len(inc) == len(fin):
        return np.asarray(fin, dtype=np.int64)
    labels = list(inc)
    for op, i, j in align(inc, fin):
        if op in ("match", "sub"):
            labels[i] = fin[j]
    return np.asarray(labels, dtype=np.int64)


def compute_example_weight(
    example: ClientExample,
    scheme: str,
    freq_table: FreqTable | None = None,
    acc_table: AccTable | None = None,
    use_multiplicity: bool = False,
) -> float:
    """Per-example weight w_ij.

    frequency sums 1/freq over the corrected words; freq_accuracy scales each
    term by (1 - incumbent accuracy).  By default words count once each (the
    corrected-word set); multiplicity counting is available behind the flag.
    """
    if scheme not in WEIGHT_SCHEMES:
        raise ConfigError(f"unknown weight scheme {scheme!r}")
    if scheme == "uniform":
        return 1.0
    if freq_table is None:
        raise ConfigError(f"scheme {scheme!r} needs a frequency table")
    if scheme == "freq_accuracy" and acc_table is None:
        raise ConfigError("freq_accuracy needs an accuracy table")
    words = corrected_words(example)
    ordered = sorted(words) if use_multiplicity else sorted(set(words))
    total = 0.0
    for w in ordered:
        term = 1.0 / freq_table.get(w)
        if scheme == "freq_accuracy":
            term *= 1.0 - acc_table.get(w)
        total += term
    return total


def local_update(
    params: ParameterSet,
    batch: Sequence[ClientExample],
    scheme: str,
    freq_table: FreqTable | None = None,
    acc_table: AccTable | None = None,
    use_multiplicity: bool = False,
) -> LocalUpdate:
    """One FedSGD step's upload: weight-combined gradients over one batch."""
    names = params.trainable_names()
    acc64 = {n: np.zeros(params.get(n).data.size, dtype=np.float64) for n in names}
    total_weight = 0.0
    for ex in batch:
        w = compute_example_weight(
            ex, scheme, freq_table, acc_table, use_multiplicity
        )
        total_weight += w
        if w == 0.0:
            continue
        grads = backward(params, forward(params, ex.features), training_labels(ex))
        for name in names:
            acc64[name] += w * grads[name].astype(np.float64)
    return LocalUpdate(
        gradients={n: acc64[n].astype(np.float32) for n in names},
        weight=total_weight,
        example_count=len(batch),
    )
