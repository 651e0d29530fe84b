"""Cycle loop, two-step protocol, evaluation and multi-run comparison."""

from __future__ import annotations

import csv
import logging
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..acquisition import SelectionRequest, select, write_score_csv
from ..data import (
    BudgetLedger,
    IndexPartition,
    LabelOracle,
    SamplePool,
    annotate,
    class_counts,
    cycle_quota,
    initial_random_sample,
    load_fer2013_csv,
    minmax_scale,
    mixture_means,
    sample_mixture,
)
from ..models import (
    ConvEncoder,
    IdentityEncoder,
    MLPEncoder,
    build_classifier,
    predict_logits,
    train_supervised,
)
from ..numcore import ContractError, RngStream
from ..ssl import pretrain
from .config import ConfigError, ExperimentConfig

log = logging.getLogger(__name__)

CYCLE_HEADER = ["cycle", "labeled_count", "train_loss", "eval_accuracy", "wall_time_s"]
SUMMARY_HEADER = ["strategy", "pretrain", "mean_acc", "std_acc", "seeds"]

# child-stream keys under a run seed
_DATA, _INIT, _PRETRAIN, _INITIAL, _SELECT, _TRAIN = range(6)


@dataclass
class CycleRecord:
    cycle: int
    labeled_count: int
    eval_accuracy: float
    train_loss: float
    selected_indices: list
    wall_time: float = 0.0
    per_class: list = field(default_factory=list)


@dataclass
class RunSummary:
    config_hash: str
    strategy: str
    pretrain: str
    seeds: list
    final_accuracies: list
    records: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(self.final_accuracies))

    @property
    def std(self) -> float:
        """Sample standard deviation over seeds (0 for a single seed)."""
        if len(self.final_accuracies) < 2:
            return 0.0
        return float(np.std(self.final_accuracies, ddof=1))


@dataclass
class Dataset:
    pool: SamplePool
    oracle: LabelOracle
    eval_features: np.ndarray
    eval_labels: np.ndarray


def load_dataset(config: ExperimentConfig, seed: int) -> Dataset:
    if config.dataset == "fer2013":
        pool, oracle = load_fer2013_csv(config.fer2013_path, "Training")
        eval_pool, eval_oracle = load_fer2013_csv(config.fer2013_path, config.eval_split)
        # evaluation labels are not part of the labeling budget
        eval_labels = eval_oracle._reveal(np.arange(len(eval_oracle)))
        return Dataset(pool, oracle, eval_pool.features, eval_labels)

    data_seed = seed if config.data_seed < 0 else config.data_seed
    rng = RngStream(data_seed).child(_DATA)
    weights = np.asarray(config.synth_imbalance, dtype=float)
    weights = weights / weights.sum()
    means = mixture_means(config.synth_classes, config.synth_dims, rng.child(0))
    x, y = sample_mixture(
        means, class_counts(config.synth_pool_size, weights), config.synth_spread, rng.child(1)
    )
    ex, ey = sample_mixture(
        means, class_counts(config.synth_eval_size, weights), config.synth_spread, rng.child(2)
    )
    x, lo, hi = minmax_scale(x)
    ex, _, _ = minmax_scale(ex, lo, hi)
    pool = SamplePool(x, config.synth_classes, dataset_id=f"synthetic-{data_seed}")
    return Dataset(pool, LabelOracle(y, config.synth_classes), ex, ey)


def make_encoder(config: ExperimentConfig, pool: SamplePool):
    if config.model == "linear":
        return IdentityEncoder(pool.dims)
    if config.model == "mlp":
        return MLPEncoder(pool.dims, config.hidden)
    if pool.image_shape is None:
        raise ConfigError("model = conv needs image-shaped features")
    return ConvEncoder(pool.image_shape)


def evaluate(model, features, labels, return_per_class: bool = False):
    """Arg-max accuracy; ties resolve to the lowest class index."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ContractError("evaluation set is empty")
    pred = np.argmax(predict_logits(model, features), axis=1)
    acc = float(np.mean(pred == labels))
    if not return_per_class:
        return acc
    per_class = []
    for k in range(model.num_classes):
        mask = labels == k
        per_class.append((k, int(mask.sum()), float(np.mean(pred[mask] == k)) if mask.any() else 0.0))
    return acc, per_class


def run_seed(config: ExperimentConfig, seed: int, out_dir: Path | None = None) -> list[CycleRecord]:
    """One complete active-learning run (optional pre-training, then ``c`` cycles)."""
    rng = RngStream(seed)
    data = load_dataset(config, seed)
    pool, oracle = data.pool, data.oracle
    ledger = BudgetLedger.from_fractions(
        len(pool), config.budget_fraction, config.initial_fraction, config.cycles
    )
    quotas = [cycle_quota(ledger, j) for j in range(1, config.cycles + 1)]
    if min(quotas[1:]) < 1:
        raise ConfigError(
            f"budget leaves no samples for some cycle: n={ledger.total_budget}, "
            f"s={ledger.initial_size}, c={config.cycles}"
        )
    partition = IndexPartition(len(pool))
    encoder = make_encoder(config, pool)

    enc_params = None
    if config.pretrain != "none":
        pcfg = config.pretrain_config(
            int(rng.child(_PRETRAIN).integers(2**63)), image_shape=pool.image_shape
        )
        loss_csv = out_dir / f"pretrain_{seed}.csv" if out_dir else None
        enc_params, _ = pretrain(encoder, pool, config.pretrain, config.pretrain_epochs, pcfg, loss_csv=loss_csv)
    if oracle.query_count != 0:
        raise AssertionError("oracle queried before the initial random sample")

    labels_by_index: dict[int, int] = {}
    first = initial_random_sample(partition, ledger, oracle, rng.child(_INITIAL))
    labels_by_index.update(zip(partition.labeled, first.tolist()))
    selected = list(partition.labeled)

    records = []
    model = None
    for cycle in range(1, config.cycles + 1):
        t0 = time.perf_counter()
        if cycle > 1:
            req = SelectionRequest(
                batch_size=quotas[cycle - 1],
                unlabeled=partition.unlabeled,
                model=model,
                features=pool.features,
                rng=rng.child(_SELECT, cycle),
                labeled=partition.labeled_array,
                labeled_labels=np.array([labels_by_index[i] for i in partition.labeled]),
                params=config.strategy_params(),
                n_jobs=config.n_jobs,
            )
            result = select(config.strategy, req)
            new = annotate(partition, ledger, oracle, result.chosen)
            labels_by_index.update(zip(result.chosen.tolist(), new.tolist()))
            selected = result.chosen.tolist()
            if config.dump_scores and out_dir and result.scores is not None:
                write_score_csv(out_dir / f"scores_{seed}_cycle{cycle}.csv", result.scores, result.chosen)

        if model is None or not config.warm_start:
            model = build_classifier(
                encoder,
                pool.num_classes,
                rng.child(_INIT),
                config.dropout_rate,
                encoder_params=enc_params,
            )
        train_seed = int(rng.child(_TRAIN, cycle).integers(2**63))
        labeled = partition.labeled_array
        model, loss = train_supervised(
            model,
            pool.features,
            labeled,
            [labels_by_index[i] for i in labeled],
            config.train_config(train_seed),
            freeze_encoder=config.freeze_encoder,
        )
        acc, per_class = evaluate(model, data.eval_features, data.eval_labels, return_per_class=True)
        records.append(
            CycleRecord(
                cycle, labeled.size, acc, loss, selected, time.perf_counter() - t0, per_class
            )
        )
        log.info("seed %d cycle %d labeled %d acc %.4f", seed, cycle, labeled.size, acc)

    if ledger.spent != ledger.total_budget or oracle.query_count != ledger.total_budget:
        raise AssertionError("labeling budget not exactly spent")
    if out_dir is not None:
        write_cycle_files(out_dir, seed, records, config.record_wall_time)
    return records


def _atomic_write(path: Path, rows) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerows(rows)
    os.replace(tmp, path)


def write_cycle_files(out_dir: Path, seed: int, records, record_wall_time: bool = False) -> None:
    out_dir = Path(out_dir)
    rows = [CYCLE_HEADER]
    for r in records:
        wall = f"{r.wall_time:.3f}" if record_wall_time else "0"
        rows.append([r.cycle, r.labeled_count, repr(r.train_loss), repr(r.eval_accuracy), wall])
    _atomic_write(out_dir / f"cycles_{seed}.csv", rows)
    _atomic_write(
        out_dir / f"selections_{seed}.csv",
        [["cycle", "index"]] + [[r.cycle, i] for r in records for i in r.selected_indices],
    )
    _atomic_write(
        out_dir / f"per_class_{seed}.csv",
        [["cycle", "class", "support", "accuracy"]]
        + [[r.cycle, k, n, repr(a)] for r in records for (k, n, a) in r.per_class],
    )


def _run_seed_job(args):
    config, seed, out_dir = args
    return seed, run_seed(config, seed, out_dir)


def run_experiment(
    config: ExperimentConfig, seeds=None, out_dir=None, write_summary: bool = True
) -> RunSummary:
    seeds = list(seeds if seeds else config.seeds)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    jobs = [(config, s, out) for s in seeds]
    if config.seed_workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=config.seed_workers) as ex:
            results = dict(ex.map(_run_seed_job, jobs))
    else:
        results = dict(map(_run_seed_job, jobs))
    summary = RunSummary(
        config.digest(),
        config.strategy,
        config.pretrain,
        seeds,
        [results[s][-1].eval_accuracy for s in seeds],
        {s: results[s] for s in seeds},
    )
    if out is not None and write_summary:
        _atomic_write(out / "summary.csv", [SUMMARY_HEADER, _summary_row(summary)])
    return summary


def _summary_row(s: RunSummary):
    return [s.strategy, s.pretrain, repr(s.mean), repr(s.std), " ".join(str(x) for x in s.seeds)]


def compare_strategies(configs, out_dir=None) -> list[RunSummary]:
    """Run each config on the same seeds; rank rows by mean final accuracy."""
    configs = list(configs)
    if not configs:
        raise ConfigError("no configs to compare")
    seeds = tuple(configs[0].seeds)
    for c in configs[1:]:
        if tuple(c.seeds) != seeds:
            raise ConfigError(f"seed lists differ: {seeds} vs {tuple(c.seeds)}")
    summaries = []
    for i, c in enumerate(configs):
        sub = Path(out_dir) / f"run{i}_{c.strategy}_{c.pretrain}" if out_dir else None
        summaries.append(run_experiment(c, out_dir=sub))
    if out_dir is not None:
        order = sorted(range(len(summaries)), key=lambda i: (-summaries[i].mean, i))
        rank = {i: r + 1 for r, i in enumerate(order)}
        rows = [SUMMARY_HEADER + ["rank"]]
        rows += [_summary_row(s) + [rank[i]] for i, s in enumerate(summaries)]
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        _atomic_write(Path(out_dir) / "summary.csv", rows)
    return summaries


SWEEP_AXES = ("initial_fraction", "cycles", "epochs_per_cycle", "budget_fraction", "optimizer")


def sweep_configs(axis: str, values, base: ExperimentConfig) -> list[ExperimentConfig]:
    """Build (and validate) one config per value before anything runs."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    caster = {"cycles": int, "epochs_per_cycle": int, "optimizer": str}.get(axis, float)
    configs = []
    for v in values:
        try:
            configs.append(base.replace(**{axis: caster(v)}))
        except (ValueError, ConfigError, ContractError) as exc:
            raise ConfigError(f"invalid value {v!r} for axis {axis}: {exc}") from None
    return configs


def sweep(axis: str, values, base: ExperimentConfig, out_dir=None) -> list[tuple[object, RunSummary]]:
    configs = sweep_configs(axis, values, base)
    results = []
    for v, cfg in zip(values, configs):
        sub = Path(out_dir) / f"{axis}_{v}" if out_dir else None
        results.append((getattr(cfg, axis), run_experiment(cfg, out_dir=sub)))
    if out_dir is not None:
        rows = [["axis_value", "mean", "std"]] + [[v, repr(s.mean), repr(s.std)] for v, s in results]
        _atomic_write(Path(out_dir) / f"sweep_{axis}.csv", rows)
    return results
