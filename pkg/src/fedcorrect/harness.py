"""Experiment harness: config file, ablation ladder, warm start, metrics files.

A run covers one or more ablation arms over one or more seeds.  Per seed the
harness generates the client pool once, warm-starts the global model on
incumbent-labeled utterances (so federated rounds start from a working
transcriber), builds the frequency and accuracy tables, and then executes the
round loop per arm.  Metrics land in ``<out>/<arm>/seed<N>/metrics.jsonl``
plus a cross-arm summary table.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .client import corrected_words, valid_corrections
from .errors import ConfigError
from .model import batch_gradient
from .params import ModelArch, ParameterSet, init_model
from .partial import TrainableSet
from .payload import wrap_transport
from .server import (
    FederatedEnv,
    RoundConfig,
    RoundResult,
    apply_update,
    prepare_model,
    run_experiment,
)
from .stats import AccTable, FreqTable, accuracy_table, dp_histogram
from .task import (
    GeneratedData,
    TaskSpec,
    build_incumbent,
    embeddings,
    generate_clients,
    word_probs,
)

_WARM = 5
_TABLES = 6

# Ablation ladder: each arm's overrides on top of the round template.
ARMS = {
    "initial": dict(selection_enabled=False, filtering_enabled=False,
                    aggregation="example_weighted", weight_scheme="uniform"),
    "select": dict(selection_enabled=True, filtering_enabled=False,
                   aggregation="example_weighted", weight_scheme="uniform"),
    "filter": dict(selection_enabled=True, filtering_enabled=True,
                   aggregation="example_weighted", weight_scheme="uniform"),
    "wca-freq": dict(selection_enabled=True, filtering_enabled=True,
                     aggregation="wca", weight_scheme="frequency"),
    "wca-freqacc": dict(selection_enabled=True, filtering_enabled=True,
                        aggregation="wca", weight_scheme="freq_accuracy"),
}
ARM_ORDER = ("initial", "select", "filter", "wca-freq", "wca-freqacc")


@dataclass(frozen=True)
class HarnessConfig:
    task: TaskSpec
    hidden_dims: tuple[int, ...]
    init_seed: int
    round_template: dict
    epsilon: float
    clip_per_client: int
    seeds: tuple[int, ...]
    warm_steps: int
    warm_lr: float
    warm_batch: int

    @property
    def arch(self) -> ModelArch:
        return ModelArch(
            vocab_size=self.task.vocab_size,
            feature_dim=self.task.feature_dim,
            hidden_dims=self.hidden_dims,
        )


def _section(raw: dict, name: str) -> dict:
    got = raw.get(name)
    if not isinstance(got, dict):
        raise ConfigError(f"config is missing the {name!r} section")
    return got


def load_config(path: str | Path) -> HarnessConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"unparseable config: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")

    task_raw = _section(raw, "task")
    try:
        task = TaskSpec(**task_raw)
    except TypeError as exc:
        raise ConfigError(f"bad task section: {exc}") from None

    model_raw = _section(raw, "model")
    hidden = model_raw.get("hidden_dims")
    if not hidden:
        raise ConfigError("model.hidden_dims is required")

    round_raw = dict(_section(raw, "round"))
    if "trainable_set" in round_raw:
        round_raw["trainable_set"] = TrainableSet.from_spec(
            str(round_raw["trainable_set"])
        )
    privacy = _section(raw, "privacy")
    harness = _section(raw, "harness")
    seeds = harness.get("seeds")
    if not seeds:
        raise ConfigError("harness.seeds must list at least one seed")

    cfg = HarnessConfig(
        task=task,
        hidden_dims=tuple(int(h) for h in hidden),
        init_seed=int(model_raw.get("init_seed", 0)),
        round_template=round_raw,
        epsilon=float(privacy.get("epsilon", 1.0)),
        clip_per_client=int(privacy.get("clip_per_client", 8)),
        seeds=tuple(int(s) for s in seeds),
        warm_steps=int(harness.get("warm_start_steps", 0)),
        warm_lr=float(harness.get("warm_start_lr", 0.05)),
        warm_batch=int(harness.get("warm_start_batch", 8)),
    )
    # Fail fast on bad round fields.
    arm_round_config(cfg, ARM_ORDER[0], int(cfg.seeds[0]))
    if cfg.epsilon <= 0 or cfg.clip_per_client < 1:
        raise ConfigError("privacy section needs epsilon > 0 and clip >= 1")
    if cfg.warm_steps < 0 or cfg.warm_lr <= 0 or cfg.warm_batch < 1:
        raise ConfigError("bad warm start settings")
    return cfg


def arm_round_config(cfg: HarnessConfig, arm: str, seed: int) -> RoundConfig:
    if arm not in ARMS:
        raise ConfigError(f"unknown arm {arm!r}; choose from {sorted(ARMS)}")
    fields = dict(cfg.round_template)
    fields.update(ARMS[arm])
    fields["seed"] = seed
    try:
        return RoundConfig(**fields)
    except TypeError as exc:
        raise ConfigError(f"bad round section: {exc}") from None


def warm_start(cfg: HarnessConfig, seed: int) -> ParameterSet:
    """Pre-train on incumbent-labeled utterances so round 0 starts from a
    model that behaves like the incumbent transcriber."""
    task = cfg.task
    params = init_model(cfg.arch, (cfg.init_seed, seed))
    if cfg.warm_steps == 0:
        return params
    emb = embeddings(task)
    probs = word_probs(task)
    incumbent = build_incumbent(task)
    lo, hi = task.utterance_len_range
    for step in range(cfg.warm_steps):
        rng = np.random.default_rng((seed, _WARM, step))
        batch = []
        for b in range(cfg.warm_batch):
            length = int(rng.integers(lo, hi + 1))
            truth = tuple(int(w) for w in rng.choice(task.vocab_size, size=length,
                                                     p=probs))
            labels = incumbent.transcribe(truth, key=(seed, _WARM, step, b))
            feats = emb[list(truth)].astype(np.float64)
            if task.feature_noise > 0:
                feats = feats + rng.normal(scale=task.feature_noise,
                                           size=feats.shape)
            batch.append((feats, np.asarray(labels, dtype=np.int64)))
        grad = batch_gradient(params, batch)
        params = apply_update(params, grad, cfg.warm_lr)
    return params


def correction_multisets(clients, spec) -> list[list[int]]:
    """Per-client corrected-word tokens from heuristic-passing corrections."""
    out = []
    for data in clients:
        words: list[int] = []
        for ex in valid_corrections(data, spec):
            words.extend(corrected_words(ex))
        out.append(words)
    return out


def build_tables(
    cfg: HarnessConfig, data: GeneratedData, seed: int
) -> tuple[FreqTable, AccTable]:
    spec_cfg = arm_round_config(cfg, "filter", seed)
    multisets = correction_multisets(data.clients, spec_cfg.eligibility())
    freq = dp_histogram(
        multisets, cfg.epsilon, cfg.clip_per_client,
        rng=np.random.default_rng((seed, _TABLES)),
    )
    acc = accuracy_table((u.truth, u.incumbent) for u in data.eval_set)
    return freq, acc


def run_arm(
    cfg: HarnessConfig,
    arm: str,
    seed: int,
    data: GeneratedData,
    start_params: ParameterSet,
    freq: FreqTable,
    acc: AccTable,
) -> tuple[ParameterSet, list[RoundResult]]:
    config = arm_round_config(cfg, arm, seed)
    env = FederatedEnv(
        clients=data.clients,
        eval_set=data.eval_set,
        word_list=data.word_list,
        # Fresh table per arm so miss counters never leak across arms.
        freq_table=FreqTable(counts=dict(freq.counts), epsilon=freq.epsilon,
                             floor=freq.floor),
        acc_table=acc,
    )
    return run_experiment(start_params, config, env)


def run_suite(
    cfg: HarnessConfig,
    arms: Sequence[str],
    seeds: Sequence[int],
    out_dir: str | Path,
) -> dict[tuple[str, int], list[RoundResult]]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    all_results: dict[tuple[str, int], list[RoundResult]] = {}
    for seed in seeds:
        data = generate_clients(cfg.task, seed)
        start = warm_start(cfg, seed)
        freq, acc = build_tables(cfg, data, seed)
        for arm in arms:
            final, results = run_arm(cfg, arm, seed, data, start, freq, acc)
            all_results[(arm, seed)] = results
            run_dir = out / arm / f"seed{seed}"
            run_dir.mkdir(parents=True, exist_ok=True)
            lines = "".join(r.metrics.to_json() + "\n" for r in results)
            (run_dir / "metrics.jsonl").write_text(lines)
            freq.save(run_dir / "freq_table.tsv")
            acc.save(run_dir / "acc_table.tsv")
            config = arm_round_config(cfg, arm, seed)
            _, payload = prepare_model(final, config)
            (run_dir / "payload.bin").write_bytes(
                wrap_transport(payload, compressed=True)
            )
    (out / "summary.tsv").write_text(summarize(all_results, arms, seeds))
    return all_results


def summarize(
    results: dict[tuple[str, int], list[RoundResult]],
    arms: Sequence[str],
    seeds: Sequence[int],
) -> str:
    """Final-round WER per run plus per-arm means, tab separated."""
    lines = ["arm\tseed\tfinal_general_wer\tfinal_target_wer"]
    for arm in arms:
        finals_g, finals_t = [], []
        for seed in seeds:
            runs = results.get((arm, seed))
            if not runs:
                continue
            m = runs[-1].metrics
            finals_g.append(m.general_wer)
            target = m.target_wer if m.target_wer is not None else float("nan")
            finals_t.append(target)
            lines.append(f"{arm}\t{seed}\t{m.general_wer:.6f}\t{target:.6f}")
        if finals_g:
            lines.append(
                f"{arm}\tmean\t{np.mean(finals_g):.6f}\t{np.mean(finals_t):.6f}"
            )
    return "\n".join(lines) + "\n"
