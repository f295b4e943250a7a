"""Synthetic transcription task: vocabulary embeddings, an error-prone
incumbent transcriber, and simulated user edits.

Words follow a Zipf distribution; each word has a fixed embedding and an
utterance's features are the embeddings of its true words plus gaussian
noise.  The incumbent transcribes every word correctly except a configured
hard set, where it substitutes a confusable word with probability p_err.
Users react to incumbent errors: with probability q they fix the transcript
to the truth, with probability r they submit a garbled word string, and
otherwise they leave the error alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .client import ClientExample
from .errors import ConfigError, DataError
from .stats import CorrectedWordList

# Stream tags for the seeded generators.
_EMBED = 0
_CLIENT = 1
_EVAL = 2
_INCUMBENT = 3


@dataclass(frozen=True)
class TaskSpec:
    vocab_size: int
    feature_dim: int
    embedding_seed: int
    feature_noise: float
    hard_words: dict[int, int]  # true word -> confusable output
    p_err: float
    utterance_len_range: tuple[int, int]
    n_clients: int
    examples_per_client: int
    fix_prob: float
    garble_prob: float
    garble_len_range: tuple[int, int]
    zipf_exponent: float = 1.2
    eval_size: int = 200

    def __post_init__(self):
        object.__setattr__(self, "hard_words",
                           {int(k): int(v) for k, v in self.hard_words.items()})
        object.__setattr__(self, "utterance_len_range",
                           tuple(int(x) for x in self.utterance_len_range))
        object.__setattr__(self, "garble_len_range",
                           tuple(int(x) for x in self.garble_len_range))
        if self.vocab_size < 2 or self.feature_dim < 1:
            raise ConfigError("vocab_size and feature_dim must be positive")
        for w, conf in self.hard_words.items():
            if not (0 <= w < self.vocab_size and 0 <= conf < self.vocab_size):
                raise ConfigError(f"hard word pair {w}->{conf} outside vocabulary")
            if w == conf:
                raise ConfigError(f"hard word {w} confuses to itself")
        for p, label in ((self.p_err, "p_err"), (self.fix_prob, "fix_prob"),
                         (self.garble_prob, "garble_prob")):
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{label} must be in [0, 1]")
        if self.fix_prob + self.garble_prob > 1.0:
            raise ConfigError("fix_prob + garble_prob must not exceed 1")
        lo, hi = self.utterance_len_range
        if not 1 <= lo <= hi:
            raise ConfigError("bad utterance length range")
        glo, ghi = self.garble_len_range
        if not 1 <= glo <= ghi:
            raise ConfigError("bad garble length range")
        if self.n_clients < 1 or self.examples_per_client < 1:
            raise ConfigError("need at least one client and one example each")
        if self.feature_noise < 0:
            raise ConfigError("feature_noise must be non-negative")
        if self.zipf_exponent <= 0:
            raise ConfigError("zipf_exponent must be positive")
        if self.eval_size < 1:
            raise ConfigError("eval_size must be at least 1")


@dataclass
class EvalUtterance:
    features: np.ndarray
    truth: tuple[int, ...]
    incumbent: tuple[int, ...]


@dataclass
class GeneratedData:
    clients: list[list[ClientExample]]
    eval_set: list[EvalUtterance]
    word_list: CorrectedWordList


def word_probs(task: TaskSpec) -> np.ndarray:
    """Zipf word distribution: id 0 is the most common word."""
    ranks = np.arange(1, task.vocab_size + 1, dtype=np.float64)
    p = ranks ** -task.zipf_exponent
    return p / p.sum()


def embeddings(task: TaskSpec) -> np.ndarray:
    rng = np.random.default_rng((task.embedding_seed, _EMBED))
    return rng.normal(size=(task.vocab_size, task.feature_dim))


class Incumbent:
    """Frozen reference transcriber with confusions on the hard-word set."""

    def __init__(self, task: TaskSpec):
        self.task = task

    def transcribe(self, truth: Sequence[int], key: tuple[int, ...]) -> tuple[int, ...]:
        task = self.task
        rng = np.random.default_rng((task.embedding_seed, _INCUMBENT) + tuple(key))
        out = []
        for w in truth:
            w = int(w)
            if w in task.hard_words and rng.random() < task.p_err:
                out.append(task.hard_words[w])
            else:
                out.append(w)
        return tuple(out)


def build_incumbent(task: TaskSpec) -> Incumbent:
    return Incumbent(task)


def _utterance_features(
    emb: np.ndarray, truth: Sequence[int], noise: float, rng: np.random.Generator
) -> np.ndarray:
    feats = emb[list(truth)].astype(np.float64)
    if noise > 0:
        feats = feats + rng.normal(scale=noise, size=feats.shape)
    return feats


def _final_transcript(
    task: TaskSpec,
    truth: tuple[int, ...],
    incumbent: tuple[int, ...],
    rng: np.random.Generator,
) -> tuple[int, ...]:
    """Simulated user edit: fix, garble, or leave the transcript alone."""
    if incumbent == truth:
        return incumbent
    u = rng.random()
    if u < task.fix_prob:
        return truth
    if u < task.fix_prob + task.garble_prob:
        glo, ghi = task.garble_len_range
        length = int(rng.integers(glo, ghi + 1))
        garble = tuple(int(w) for w in rng.integers(0, task.vocab_size, size=length))
        if garble == incumbent:  # vanishing chance; force a visible edit
            garble = garble + (int(truth[0]),)
        return garble
    return incumbent


def generate_clients(task: TaskSpec, seed: int) -> GeneratedData:
    """Materialize the client pool, the held-out eval set, and the corrected
    word list (words users fixed to their true value)."""
    emb = embeddings(task)
    probs = word_probs(task)
    incumbent = build_incumbent(task)
    lo, hi = task.utterance_len_range

    corrected: set[int] = set()
    clients: list[list[ClientExample]] = []
    for cid in range(task.n_clients):
        examples = []
        for j in range(task.examples_per_client):
            rng = np.random.default_rng((seed, _CLIENT, cid, j))
            length = int(rng.integers(lo, hi + 1))
            truth = tuple(int(w) for w in rng.choice(task.vocab_size, size=length,
                                                     p=probs))
            inc = incumbent.transcribe(truth, key=(seed, _CLIENT, cid, j))
            features = _utterance_features(emb, truth, task.feature_noise, rng)
            final = _final_transcript(task, truth, inc, rng)
            if final == truth and final != inc:
                corrected.update(
                    t for t, i in zip(truth, inc) if t != i
                )
            examples.append(ClientExample(
                features=features, truth=truth, incumbent_transcript=inc,
                final_transcript=final, is_correction=final != inc,
            ))
        clients.append(examples)

    eval_set = []
    for k in range(task.eval_size):
        rng = np.random.default_rng((seed, _EVAL, k))
        length = int(rng.integers(lo, hi + 1))
        truth = tuple(int(w) for w in rng.choice(task.vocab_size, size=length, p=probs))
        inc = incumbent.transcribe(truth, key=(seed, _EVAL, k))
        features = _utterance_features(emb, truth, task.feature_noise, rng)
        eval_set.append(EvalUtterance(features=features, truth=truth, incumbent=inc))

    return GeneratedData(
        clients=clients, eval_set=eval_set,
        word_list=CorrectedWordList(words=frozenset(corrected)),
    )


# --- dataset persistence --------------------------------------------------

def save_dataset(data: GeneratedData, path: str | Path) -> None:
    """Flat npz encoding: concatenated sequences plus length tables."""
    feat_rows, truths, incs, finals = [], [], [], []
    inc_lens, final_lens, client_sizes = [], [], []
    for examples in data.clients:
        client_sizes.append(len(examples))
        for ex in examples:
            feat_rows.append(ex.features)
            truths.extend(ex.truth)
            incs.extend(ex.incumbent_transcript)
            finals.extend(ex.final_transcript)
            inc_lens.append(len(ex.incumbent_transcript))
            final_lens.append(len(ex.final_transcript))
    ev_feat, ev_truth, ev_inc, ev_lens = [], [], [], []
    for u in data.eval_set:
        ev_feat.append(u.features)
        ev_truth.extend(u.truth)
        ev_inc.extend(u.incumbent)
        ev_lens.append(len(u.truth))
    np.savez_compressed(
        path,
        features=np.concatenate(feat_rows, axis=0) if feat_rows else np.zeros((0, 0)),
        truths=np.asarray(truths, dtype=np.int64),
        incumbents=np.asarray(incs, dtype=np.int64),
        finals=np.asarray(finals, dtype=np.int64),
        inc_lens=np.asarray(inc_lens, dtype=np.int64),
        final_lens=np.asarray(final_lens, dtype=np.int64),
        client_sizes=np.asarray(client_sizes, dtype=np.int64),
        eval_features=np.concatenate(ev_feat, axis=0) if ev_feat else np.zeros((0, 0)),
        eval_truths=np.asarray(ev_truth, dtype=np.int64),
        eval_incumbents=np.asarray(ev_inc, dtype=np.int64),
        eval_lens=np.asarray(ev_lens, dtype=np.int64),
        word_list=np.asarray(sorted(data.word_list.words), dtype=np.int64),
    )


def load_dataset(path: str | Path) -> GeneratedData:
    with np.load(path) as z:
        features = z["features"]
        truths, incs, finals = z["truths"], z["incumbents"], z["finals"]
        inc_lens, final_lens = z["inc_lens"], z["final_lens"]
        client_sizes = z["client_sizes"]
        clients: list[list[ClientExample]] = []
        fpos = tpos = ipos = gpos = 0
        k = 0
        for size in client_sizes:
            examples = []
            for _ in range(int(size)):
                n_inc = int(inc_lens[k])
                n_fin = int(final_lens[k])
                inc = tuple(int(w) for w in incs[ipos:ipos + n_inc])
                truth = tuple(int(w) for w in truths[tpos:tpos + n_inc])
                final = tuple(int(w) for w in finals[gpos:gpos + n_fin])
                examples.append(ClientExample(
                    features=features[fpos:fpos + n_inc].copy(),
                    truth=truth, incumbent_transcript=inc,
                    final_transcript=final, is_correction=final != inc,
                ))
                fpos += n_inc
                tpos += n_inc
                ipos += n_inc
                gpos += n_fin
                k += 1
            clients.append(examples)
        if k != len(inc_lens):
            raise DataError("client sizes do not cover all stored examples")
        eval_set = []
        pos = rpos = 0
        for n in z["eval_lens"]:
            n = int(n)
            eval_set.append(EvalUtterance(
                features=z["eval_features"][pos:pos + n].copy(),
                truth=tuple(int(w) for w in z["eval_truths"][rpos:rpos + n]),
                incumbent=tuple(int(w) for w in z["eval_incumbents"][rpos:rpos + n]),
            ))
            pos += n
            rpos += n
        word_list = CorrectedWordList(words=frozenset(int(w) for w in z["word_list"]))
    return GeneratedData(clients=clients, eval_set=eval_set, word_list=word_list)
