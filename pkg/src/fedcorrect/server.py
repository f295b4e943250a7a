"""Round loop: selection, dispatch, aggregation, and the server model update.

The master model stays at full f32 precision.  Every round it is frozen per
the trainable set, quantized for dispatch, and the clients compute gradients
on the exact bytes they would receive on the wire.  Aggregated gradients are
applied back to the master, so frozen variables never change.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .client import (
    ClientExample,
    EligibilitySpec,
    LocalUpdate,
    eligibility_test,
    filter_batch,
    local_update,
)
from .errors import ConfigError, EligibilityError, ShapeError
from .metrics import MetricsRecord
from .model import peak_memory_estimate, predict_many
from .params import ParameterSet
from .partial import TrainableSet, freeze, resolve
from .payload import (
    Payload,
    PrecisionPolicy,
    apply_policy,
    dequantize_trainable,
    deserialize,
    encode_update,
    measure_transport,
    serialize,
)
from .stats import AccTable, CorrectedWordList, FreqTable, corpus_wer, target_subset

AGGREGATION_RULES = ("simple_avg", "example_weighted", "wca")

# Stream tag separating round rngs from any other seeded draw.
_ROUND_STREAM = 7


@dataclass(frozen=True)
class RoundConfig:
    report_goal: int
    batch_size: int
    aggregation: str
    weight_scheme: str
    omc_enabled: bool
    trainable_set: TrainableSet
    learning_rate: float
    rounds: int
    seed: int
    # Ablation toggles: the initial arm skips the eligibility test and trains
    # on raw device data instead of filtered corrections.
    selection_enabled: bool = True
    filtering_enabled: bool = True
    max_word_len_diff: int = 2
    checkpointing: bool = False
    use_multiplicity: bool = False

    def __post_init__(self):
        if self.report_goal < 1:
            raise ConfigError("report_goal must be at least 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.aggregation not in AGGREGATION_RULES:
            raise ConfigError(f"unknown aggregation rule {self.aggregation!r}")
        if self.weight_scheme not in ("uniform", "frequency", "freq_accuracy"):
            raise ConfigError(f"unknown weight scheme {self.weight_scheme!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.rounds < 0:
            raise ConfigError("rounds must be non-negative")
        if self.max_word_len_diff < 0:
            raise ConfigError("max_word_len_diff must be non-negative")

    def eligibility(self) -> EligibilitySpec:
        return EligibilitySpec(
            min_corrections=self.batch_size,
            max_word_len_diff=self.max_word_len_diff,
        )


@dataclass
class FederatedEnv:
    """Everything the round loop touches besides the model and config."""

    clients: Sequence[Sequence[ClientExample]]
    eval_set: Sequence  # items expose .features and .truth
    word_list: CorrectedWordList
    freq_table: FreqTable | None = None
    acc_table: AccTable | None = None


@dataclass
class ServerState:
    params: ParameterSet
    round_index: int = 0


@dataclass
class RoundResult:
    participants: list[int]
    update: dict[str, np.ndarray] | None
    metrics: MetricsRecord
    pool_exhausted: bool = False


def select_clients(
    pool: Sequence[Sequence[ClientExample]],
    spec: EligibilitySpec,
    report_goal: int,
    rng: np.random.Generator,
) -> tuple[list[int], bool]:
    """Probe clients in rng order until the report goal is met.

    Returns the admitted ids and whether the pool ran out first.  A pool with
    zero eligible clients aborts the round.
    """
    if not len(pool):
        raise ConfigError("client pool is empty")
    ids: list[int] = []
    for i in rng.permutation(len(pool)):
        if eligibility_test(pool[int(i)], spec):
            ids.append(int(i))
            if len(ids) == report_goal:
                return ids, False
    if not ids:
        raise EligibilityError("no eligible clients in the pool")
    return ids, True


def prepare_model(
    params: ParameterSet, config: RoundConfig, stats=None
) -> tuple[ParameterSet, Payload]:
    """Freeze, quantize, re-widen trainables, and encode for dispatch.

    Returns the frozen master (the update target) and the wire payload.
    """
    names = resolve(config.trainable_set, params.arch())
    frozen = freeze(params, names)
    quantized = apply_policy(frozen, PrecisionPolicy(config.omc_enabled), stats)
    ready = dequantize_trainable(quantized, names)
    return frozen, serialize(ready)


def aggregate(
    updates: Sequence[tuple[int, LocalUpdate]], rule: str
) -> dict[str, np.ndarray] | None:
    """Combine client uploads into one f32 gradient map.

    wca divides the summed weighted gradients by the summed weights;
    simple_avg averages each client's weight-normalized gradient;
    example_weighted weights those by example counts.  Zero-weight clients
    contribute nothing; an all-zero round returns None (skip).
    """
    if rule not in AGGREGATION_RULES:
        raise ConfigError(f"unknown aggregation rule {rule!r}")
    if not updates:
        raise ConfigError("aggregate needs at least one update")
    ordered = sorted(updates, key=lambda pair: pair[0])
    active = [(cid, u) for cid, u in ordered if u.weight > 0]
    if not active:
        return None
    names = list(active[0][1].gradients)
    totals = {n: np.zeros(active[0][1].gradients[n].size, dtype=np.float64)
              for n in names}
    if rule == "wca":
        weight_sum = 0.0
        for _, u in active:
            weight_sum += u.weight
            for n in names:
                totals[n] += u.gradients[n].astype(np.float64)
        return {n: (totals[n] / weight_sum).astype(np.float32) for n in names}
    if rule == "simple_avg":
        for _, u in active:
            for n in names:
                totals[n] += u.gradients[n].astype(np.float64) / u.weight
        return {n: (totals[n] / len(active)).astype(np.float32) for n in names}
    example_sum = 0
    for _, u in active:
        example_sum += u.example_count
        for n in names:
            totals[n] += u.gradients[n].astype(np.float64) * (u.example_count / u.weight)
    return {n: (totals[n] / example_sum).astype(np.float32) for n in names}


def apply_update(
    params: ParameterSet, agg: dict[str, np.ndarray], learning_rate: float
) -> ParameterSet:
    """SGD step at f32 on trainable variables; frozen variables untouched."""
    replaced = {}
    lr = np.float32(learning_rate)
    for name in sorted(agg):
        v = params.get(name)
        if not v.trainable:
            raise ConfigError(f"gradient supplied for frozen variable {name!r}")
        g = np.asarray(agg[name], dtype=np.float32)
        if g.shape != v.data.shape:
            raise ShapeError(
                f"{name}: gradient shape {g.shape} vs data {v.data.shape}"
            )
        replaced[name] = v.replace(data=(v.data - lr * g).astype(np.float32))
    return params.replace_variables(replaced)


def evaluate_model(
    params: ParameterSet, eval_set: Sequence, word_list: CorrectedWordList
) -> tuple[float, float | None]:
    """General and target corpus WER of the model on the eval set."""
    hyps = predict_many(params, [u.features for u in eval_set])
    pairs = [(h.tolist(), list(u.truth)) for h, u in zip(hyps, eval_set)]
    general = corpus_wer(pairs)
    idx = target_subset([u.truth for u in eval_set], word_list)
    target = corpus_wer([pairs[i] for i in idx]) if idx else None
    return general, target


def run_round(state: ServerState, config: RoundConfig, env: FederatedEnv) -> RoundResult:
    spec = config.eligibility()
    rng = np.random.default_rng((config.seed, _ROUND_STREAM, state.round_index))
    if config.selection_enabled:
        ids, exhausted = select_clients(env.clients, spec, config.report_goal, rng)
    else:
        order = rng.permutation(len(env.clients))
        ids = [int(i) for i in order[: config.report_goal]]
        exhausted = len(ids) < config.report_goal

    frozen_master, payload = prepare_model(state.params, config)
    view = deserialize(payload)
    arch = view.arch()
    trainable = set(view.trainable_names())
    policy = PrecisionPolicy(config.omc_enabled)

    misses_before = env.freq_table.misses if env.freq_table else 0
    updates: list[tuple[int, LocalUpdate]] = []
    upload_raw = upload_compressed = None
    filtered_total = 0
    memory = []
    for cid in sorted(ids):
        data = env.clients[cid]
        if config.filtering_enabled:
            batch = filter_batch(data, spec, config.batch_size)
        else:
            batch = list(data)[: config.batch_size]
        filtered_total += len(batch)
        update = local_update(
            view, batch, config.weight_scheme, env.freq_table, env.acc_table,
            config.use_multiplicity,
        )
        blob = encode_update(update.gradients, update.weight, update.example_count)
        if upload_raw is None:
            upload_raw = len(blob)
            upload_compressed = measure_transport(blob, True)
        seq_len = max(len(ex.features) for ex in batch)
        memory.append(peak_memory_estimate(
            arch, config.checkpointing, policy, trainable, seq_len
        ).total_bytes)
        updates.append((cid, update))

    agg = aggregate(updates, config.aggregation)
    skipped = agg is None
    new_params = state.params if skipped else apply_update(
        frozen_master, agg, config.learning_rate
    )
    general, target = evaluate_model(new_params, env.eval_set, env.word_list)
    misses_after = env.freq_table.misses if env.freq_table else 0

    metrics = MetricsRecord(
        round=state.round_index,
        general_wer=general,
        target_wer=target,
        download_raw_bytes=payload.size,
        download_compressed_bytes=measure_transport(payload, True),
        upload_raw_bytes=upload_raw or 0,
        upload_compressed_bytes=upload_compressed or 0,
        peak_memory_bytes=int(np.mean(memory)) if memory else 0,
        participants=len(ids),
        filtered_examples=filtered_total,
        weight_table_misses=misses_after - misses_before,
        skipped=skipped,
        pool_exhausted=exhausted,
    )
    state.params = new_params
    state.round_index += 1
    return RoundResult(
        participants=sorted(ids), update=agg, metrics=metrics,
        pool_exhausted=exhausted,
    )


def run_experiment(
    params: ParameterSet, config: RoundConfig, env: FederatedEnv
) -> tuple[ParameterSet, list[RoundResult]]:
    state = ServerState(params=params)
    results = []
    for _ in range(config.rounds):
        results.append(run_round(state, config, env))
    return state.params, results
