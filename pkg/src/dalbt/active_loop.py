"""Stage-by-stage active learning: train, fit, score, select, annotate, commit."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import data_pool as dp
from .config import CifarDataset, ExperimentConfig, IdxDataset, OodBlobs, OodCifar, OodIdx, SynthBlobsDataset
from .errors import ConfigurationError, StrategyUnavailableError
from .network import ArchSpec, NetworkParams, conv_encoder, init_params, mlp_encoder, predict_latents
from .sampling import select_min_confidence, select_random, select_weibull_max
from .trainer import evaluate, train_stage
from .weibull_openset import collect_correct_latents, fit_open_set, outlier_score

log = logging.getLogger(__name__)

# stream tags for derived seeds
_INIT, _TRAIN, _SELECT = 1, 2, 3


def derive_seed(seed, stage, purpose) -> int:
    return int(np.random.SeedSequence([seed, stage, purpose]).generate_state(1)[0])


@dataclass
class StageMetrics:
    stage: int
    strategy: str
    labeled_size: int  # size of the pool the stage trained on
    unlabeled_size: int  # size of the pool the stage selected from
    test_accuracy: float
    selected_count: int
    ood_selected_count: int
    ood_rejected_count: int
    in_dist_precision: float
    ce_term: float
    bt_invariance: float
    bt_redundancy: float
    wall_time_s: float
    weibull_fallback: bool = False
    val_accuracy: float | None = None
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ExperimentData:
    """Everything a seed's run needs besides the pool itself."""

    bank: dp.SampleBank  # in-distribution train samples plus any OOD samples
    test_x: np.ndarray
    test_y: np.ndarray
    oracle: dp.OracleSim
    train_samples: list
    ood_samples: list
    num_classes: int

    @property
    def input_shape(self) -> tuple:
        return tuple(self.bank.pixels.shape[1:])


@dataclass
class StageContext:
    cfg: ExperimentConfig
    data: ExperimentData
    arch: ArchSpec
    seed: int
    val_ids: list = field(default_factory=list)

    @property
    def train_size(self) -> int:
        return len(self.data.train_samples)


# ---------------------------------------------------------------------------
# data assembly


def _limit(samples, n):
    return samples if n is None else samples[:n]


def _synth_datasets(ds: SynthBlobsDataset):
    rng = np.random.default_rng(ds.seed)
    means = ds.class_means if ds.class_means is not None else rng.uniform(0.2, 0.8, (ds.num_classes, ds.dim))
    train = dp.synth_blobs(ds.num_classes, ds.dim, ds.per_class, means, ds.noise_sigma, ds.seed + 1)
    test = dp.synth_blobs(ds.num_classes, ds.dim, ds.test_per_class, means, ds.noise_sigma, ds.seed + 2,
                          id_offset=len(train))
    return train, test


def _file_datasets(ds):
    if isinstance(ds, IdxDataset):
        train = _limit(dp.load_idx(ds.train_images, ds.train_labels), ds.train_limit)
        test = dp.load_idx(ds.test_images, ds.test_labels) if ds.test_images else []
    else:
        train = _limit(dp.load_cifar_binary(ds.train_paths), ds.train_limit)
        test = dp.load_cifar_binary(ds.test_paths) if ds.test_paths else []
    test = _limit(test, ds.test_limit)
    if not test:
        if ds.test_size <= 0:
            raise ConfigurationError("dataset has no test files; set dataset.test_size to carve a test set")
        # carved with a fixed seed so every run seed evaluates on the same samples
        rng = np.random.default_rng(0)
        order = rng.permutation(len(train))
        test = [train[i] for i in sorted(order[:ds.test_size])]
        train = [train[i] for i in sorted(order[ds.test_size:])]
    return train, test


def _ood_samples(sources, train, start_id):
    out = []
    dim_shape = train[0].pixels.shape
    next_id = start_id
    for src in sources:
        if isinstance(src, OodBlobs):
            if dim_shape[:2] != (1, 1):
                raise ConfigurationError("synthetic OOD blobs need a synthetic (1x1xdim) dataset")
            dim = dim_shape[2]
            mean = None if src.mean is None else [src.mean]
            got = dp.synth_blobs(1, dim, src.count, mean, src.noise_sigma, src.seed, origin=src.origin,
                                 id_offset=next_id, labeled=False)
        elif isinstance(src, OodIdx):
            got = _limit(dp.load_idx(src.images, None, src.origin, next_id), src.limit)
        elif isinstance(src, OodCifar):
            got = _limit(dp.load_cifar_binary(src.paths, src.origin, next_id), src.limit)
            for s in got:
                s.label = None
        else:  # pragma: no cover
            raise ConfigurationError(f"unknown OOD source {src!r}")
        for s in got:
            if s.pixels.shape != dim_shape:
                raise ConfigurationError(
                    f"OOD source {src.origin} has images of shape {s.pixels.shape}, dataset uses {dim_shape}"
                )
        out += got
        next_id += len(got)
    return out


def load_experiment_data(cfg: ExperimentConfig) -> ExperimentData:
    ds = cfg.dataset
    if isinstance(ds, SynthBlobsDataset):
        train, test = _synth_datasets(ds)
    elif isinstance(ds, (IdxDataset, CifarDataset)):
        train, test = _file_datasets(ds)
    else:  # pragma: no cover
        raise ConfigurationError(f"unknown dataset {ds!r}")
    train = [dp.Sample(i, s.pixels, s.label, s.origin) for i, s in enumerate(train)]
    ood = _ood_samples(cfg.ood, train, len(train))
    everything = train + ood
    bank = dp.SampleBank.from_samples(everything)
    labels = sorted({s.label for s in train} | {s.label for s in test})
    num_classes = int(max(labels)) + 1
    test_x = np.stack([s.pixels for s in test]).astype(np.float64)
    test_y = np.array([s.label for s in test], dtype=np.int64)
    return ExperimentData(bank, test_x, test_y, dp.OracleSim.from_samples(everything), train, ood, num_classes)


def build_arch(cfg: ExperimentConfig, input_shape, num_classes) -> ArchSpec:
    a = cfg.arch
    if a.encoder == "mlp":
        encoder = mlp_encoder(a.hidden, a.latent_dim)
    else:
        encoder = conv_encoder(a.conv_channels, a.latent_dim, a.conv_kernel)
    return ArchSpec(tuple(input_shape), encoder, num_classes, tuple(a.projector))


def initial_pool(cfg: ExperimentConfig, data: ExperimentData, seed: int):
    pool, val_ids, _ = dp.make_splits(data.train_samples, cfg.splits.initial_labeled, cfg.splits.val_size,
                                      seed, stratified=cfg.splits.stratified)
    if data.ood_samples:
        pool = dp.inject_ood(pool, data.ood_samples)
    return pool, val_ids


# ---------------------------------------------------------------------------
# the loop


def stopping_check(pool: dp.Pool, cfg: ExperimentConfig, train_size: int) -> bool:
    """True once all stages ran, the labeled cap is reached, or nothing is left to select."""
    if pool.stage >= cfg.stages:
        return True
    if train_size and len(pool.labeled) >= cfg.labeled_fraction_cap * train_size:
        return True
    return not pool.selectable(cfg.exclude_rejected)


def _acquire(pool, params, ctx: StageContext, candidates):
    """Run the configured strategy; returns ``(selected_ids, fell_back)``."""
    cfg, data = ctx.cfg, ctx.data
    b = cfg.budget
    rng = np.random.default_rng(derive_seed(ctx.seed, pool.stage, _SELECT))
    if cfg.strategy == "random":
        return select_random(candidates, b, rng).selected_ids, False
    x_u, _ = data.bank.take(candidates)
    if cfg.strategy == "min_confidence":
        _, probs = predict_latents(params, x_u)
        return select_min_confidence(dict(zip(candidates, probs)), b).selected_ids, False
    labeled = sorted(pool.labeled)
    x_l, y_l = data.bank.take(labeled)
    try:
        open_set = fit_open_set(collect_correct_latents(params, x_l, y_l), cfg.weibull)
    except StrategyUnavailableError as exc:
        log.warning("stage %d: Weibull sampling unavailable (%s); selecting at random", pool.stage, exc)
        return select_random(candidates, b, rng).selected_ids, True
    z_u, _ = predict_latents(params, x_u)
    scores = outlier_score(open_set.models, open_set.means, z_u)
    keep = np.ones(len(candidates), dtype=bool)
    if cfg.ood_reject_threshold is not None:
        keep = scores <= cfg.ood_reject_threshold
    kept = {int(i): float(s) for i, s, k in zip(candidates, scores, keep) if k}
    return select_weibull_max(kept, b).selected_ids, False


def run_stage(pool: dp.Pool, params: NetworkParams | None, oracle: dp.OracleSim, ctx: StageContext):
    """One round: train on the labeled pool, pick ``budget`` ids, label them, evaluate.

    Returns ``(pool', params', StageMetrics)``. Accuracy is that of the model
    trained on the pool before this round's labels are added.
    """
    cfg, data = ctx.cfg, ctx.data
    candidates = pool.selectable(cfg.exclude_rejected)
    if not candidates:
        raise ConfigurationError("run_stage needs a nonempty unlabeled pool")
    t0 = time.monotonic()
    stage = pool.stage
    if params is None or cfg.train.reinit_per_stage:
        params = init_params(ctx.arch, derive_seed(ctx.seed, stage, _INIT))
    labeled = sorted(pool.labeled)
    x_l, y_l = data.bank.take(labeled)
    val = data.bank.take(ctx.val_ids) if ctx.val_ids else None
    params, epoch_log = train_stage(params, x_l, y_l, cfg.augment, cfg.loss, cfg.train, ids=labeled, val=val,
                                    seed=derive_seed(ctx.seed, stage, _TRAIN))

    selected, fell_back = _acquire(pool, params, ctx, candidates)
    annotated, rejected = dp.oracle_annotate(oracle, selected, pool)
    new_pool = dp.commit_labels(pool, annotated, rejected)

    test_acc = evaluate(params, data.test_x, data.test_y)
    val_acc = evaluate(params, *val) if val is not None else None
    n_ood = int(np.sum(data.bank.is_ood(selected))) if selected else 0
    last = epoch_log[-1] if epoch_log else None
    metrics = StageMetrics(
        stage=stage,
        strategy=cfg.strategy,
        labeled_size=len(pool.labeled),
        unlabeled_size=len(pool.unlabeled),
        test_accuracy=test_acc,
        selected_count=len(selected),
        ood_selected_count=n_ood,
        ood_rejected_count=len(rejected),
        in_dist_precision=(len(selected) - n_ood) / len(selected) if selected else 1.0,
        ce_term=last.ce_term if last else 0.0,
        bt_invariance=last.bt_invariance if last else 0.0,
        bt_redundancy=last.bt_redundancy if last else 0.0,
        wall_time_s=time.monotonic() - t0,
        weibull_fallback=fell_back,
        val_accuracy=val_acc,
        seed=ctx.seed,
    )
    return new_pool, params, metrics


@dataclass
class ExperimentResult:
    records: dict  # seed -> list of StageMetrics
    summary: list
    failures: dict  # seed -> error message


def summarize(records: dict) -> list:
    """Mean and standard deviation of test accuracy per (strategy, stage) across seeds."""
    groups: dict = {}
    for recs in records.values():
        for m in recs:
            groups.setdefault((m.strategy, m.stage), []).append(m)
    rows = []
    for (strategy, stage), ms in sorted(groups.items()):
        acc = np.array([m.test_accuracy for m in ms])
        rows.append({
            "strategy": strategy,
            "stage": stage,
            "labeled_size": float(np.mean([m.labeled_size for m in ms])),
            "mean_acc": float(acc.mean()),
            "std_acc": float(acc.std(ddof=1)) if len(acc) > 1 else 0.0,
            "n_seeds": len(ms),
        })
    return rows


def run_seed(cfg: ExperimentConfig, seed: int, data: ExperimentData | None = None, sink=None) -> list:
    data = data if data is not None else load_experiment_data(cfg)
    arch = build_arch(cfg, data.input_shape, data.num_classes)
    pool, val_ids = initial_pool(cfg, data, seed)
    ctx = StageContext(cfg, data, arch, seed, val_ids)
    total = pool.size
    params = None
    out = []
    while not stopping_check(pool, cfg, ctx.train_size):
        pool, params, metrics = run_stage(pool, params, data.oracle, ctx)
        if pool.labeled & pool.unlabeled or pool.size != total:
            raise AssertionError("pool invariants violated")
        out.append(metrics)
        if sink is not None:
            sink(metrics)
    return out


def run_experiment(cfg: ExperimentConfig, sink=None) -> ExperimentResult:
    """Run every seed in ``cfg.seeds``; a failing seed keeps its finished stages."""
    records, failures = {}, {}
    data = None
    for seed in cfg.seeds:
        done: list = []

        def collect(m, _done=done):
            _done.append(m)
            if sink is not None:
                sink(m)

        try:
            if data is None:
                data = load_experiment_data(cfg)
            run_seed(cfg, seed, data, collect)
        except Exception as exc:  # noqa: BLE001 - a seed's failure must not lose other seeds
            log.exception("seed %d aborted", seed)
            failures[seed] = f"{type(exc).__name__}: {exc}"
        records[seed] = done
    return ExperimentResult(records, summarize(records), failures)
