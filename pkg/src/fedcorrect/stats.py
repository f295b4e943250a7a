"""Word-error-rate metrics, DP word-frequency table, incumbent accuracy table.

The frequency table is a one-shot differentially private histogram over the
client pool (per-client clipping, double-exponential noise, integer rounding,
then a floor of 1 so downstream reciprocals stay bounded).  The accuracy table
scores how well the incumbent transcriber recognizes each word on a labeled
eval set.  Both serialize to ``word_id<TAB>value`` lines.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError

# --- edit alignment -------------------------------------------------------

def edit_distance(source: Sequence[int], target: Sequence[int]) -> int:
    """Minimum unit-cost edits (sub/ins/del) turning source into target."""
    n, m = len(source), len(target)
    prev = list(range(m + 1))
    for i in range(1, n + 1):
        cur = [i] + [0] * m
        si = source[i - 1]
        for j in range(1, m + 1):
            cur[j] = min(
                prev[j - 1] + (si != target[j - 1]),
                prev[j] + 1,
                cur[j - 1] + 1,
            )
        prev = cur
    return prev[m]


def align(source: Sequence[int], target: Sequence[int]) -> list[tuple[str, int | None, int | None]]:
    """Minimum-edit alignment as (op, source index, target index) steps.

    Ops are match/sub (both indices), del (source only), ins (target only).
    Backtrace prefers diagonal, then deletion, then insertion, so the
    alignment is deterministic.
    """
    n, m = len(source), len(target)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i, j] = min(
                d[i - 1, j - 1] + (source[i - 1] != target[j - 1]),
                d[i - 1, j] + 1,
                d[i, j - 1] + 1,
            )
    ops: list[tuple[str, int | None, int | None]] = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (source[i - 1] != target[j - 1]):
            op = "match" if source[i - 1] == target[j - 1] else "sub"
            ops.append((op, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and d[i, j] == d[i - 1, j] + 1:
            ops.append(("del", i - 1, None))
            i -= 1
        else:
            ops.append(("ins", None, j - 1))
            j -= 1
    ops.reverse()
    return ops


# --- word error rate ------------------------------------------------------

def wer(hypothesis: Sequence[int], reference: Sequence[int]) -> float:
    if len(reference) == 0:
        raise DataError("WER is undefined for an empty reference")
    return edit_distance(hypothesis, reference) / len(reference)


def corpus_wer(pairs: Iterable[tuple[Sequence[int], Sequence[int]]]) -> float:
    """Pooled WER: total edits over total reference words."""
    errors = words = 0
    for hyp, ref in pairs:
        if len(ref) == 0:
            raise DataError("WER is undefined for an empty reference")
        errors += edit_distance(hyp, ref)
        words += len(ref)
    if words == 0:
        raise DataError("corpus WER needs at least one utterance")
    return errors / words


# --- frequency table ------------------------------------------------------

@dataclass
class FreqTable:
    """Noisy word counts with a positive floor and max-frequency fallback."""

    counts: dict[int, float]
    epsilon: float
    floor: float = 1.0
    misses: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.floor <= 0:
            raise ConfigError("frequency floor must be positive")
        for w, c in self.counts.items():
            if c < self.floor:
                raise ConfigError(f"frequency for word {w} below floor")

    @property
    def fallback(self) -> float:
        # Largest observed frequency: an unknown word is treated as common,
        # which floors its weight contribution instead of inflating it.
        return max(self.counts.values(), default=self.floor)

    def get(self, word: int) -> float:
        if word in self.counts:
            return self.counts[word]
        self.misses += 1
        return self.fallback

    def save(self, path: str | Path) -> None:
        write_table(path, self.counts)

    @classmethod
    def load(cls, path: str | Path, epsilon: float, floor: float = 1.0) -> "FreqTable":
        return cls(counts=read_table(path), epsilon=epsilon, floor=floor)


def dp_histogram(
    client_word_multisets: Iterable[Sequence[int]],
    epsilon: float,
    clip_per_client: int,
    rng: np.random.Generator,
) -> FreqTable:
    """Differentially private histogram of corrected words across clients.

    Each client contributes at most ``clip_per_client`` words (truncated in
    the client's own order), every observed bin gets double-exponential noise
    of scale clip/epsilon, and the noisy count is rounded to the nearest
    integer then floored at 1.
    """
    if epsilon <= 0:
        raise ConfigError("epsilon must be positive")
    if clip_per_client < 1:
        raise ConfigError("clip_per_client must be at least 1")
    true: dict[int, int] = {}
    for words in client_word_multisets:
        for w in list(words)[:clip_per_client]:
            true[int(w)] = true.get(int(w), 0) + 1
    bins = sorted(true)
    noise = rng.laplace(0.0, clip_per_client / epsilon, size=len(bins))
    counts = {
        w: float(max(np.rint(true[w] + noise[k]), 1.0)) for k, w in enumerate(bins)
    }
    return FreqTable(counts=counts, epsilon=epsilon)


# --- accuracy table -------------------------------------------------------

@dataclass
class AccTable:
    """Per-word incumbent accuracy in [0, 1]; unseen words count as 1.0."""

    acc: dict[int, float]

    def __post_init__(self):
        self.acc = {int(w): min(1.0, max(0.0, float(a))) for w, a in self.acc.items()}

    def get(self, word: int) -> float:
        return self.acc.get(word, 1.0)

    def save(self, path: str | Path) -> None:
        write_table(path, self.acc)

    @classmethod
    def load(cls, path: str | Path) -> "AccTable":
        return cls(acc=read_table(path))


def accuracy_table(
    transcripts: Iterable[tuple[Sequence[int], Sequence[int]]]
) -> AccTable:
    """Per-word recognition accuracy from (truth, incumbent output) pairs."""
    correct: dict[int, int] = {}
    total: dict[int, int] = {}
    empty = True
    for truth, hyp in transcripts:
        empty = False
        if len(truth) != len(hyp):
            raise DataError("incumbent transcript length must match truth")
        for t, h in zip(truth, hyp):
            total[int(t)] = total.get(int(t), 0) + 1
            if t == h:
                correct[int(t)] = correct.get(int(t), 0) + 1
    if empty:
        raise ConfigError("accuracy table needs a non-empty eval set")
    return AccTable(acc={w: correct.get(w, 0) / n for w, n in total.items()})


# --- corrected-word list --------------------------------------------------

@dataclass(frozen=True)
class CorrectedWordList:
    """The target-domain word set: words users actually fixed."""

    words: frozenset[int]

    def __contains__(self, word: int) -> bool:
        return word in self.words

    def __len__(self) -> int:
        return len(self.words)

    def intersects(self, sequence: Sequence[int]) -> bool:
        return any(w in self.words for w in sequence)


def target_subset(eval_refs: Iterable[Sequence[int]], word_list: CorrectedWordList) -> list[int]:
    """Indices of utterances whose reference touches the corrected-word list."""
    return [i for i, ref in enumerate(eval_refs) if word_list.intersects(ref)]


# --- table IO -------------------------------------------------------------

def write_table(path: str | Path, mapping: dict[int, float]) -> None:
    lines = [f"{w}\t{mapping[w]!r}" for w in sorted(mapping)]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_table(path: str | Path) -> dict[int, float]:
    out: dict[int, float] = {}
    for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            word, value = line.split("\t")
            out[int(word)] = float(value)
        except ValueError:
            raise DataError(f"bad table line {ln}: {line!r}") from None
    return out
