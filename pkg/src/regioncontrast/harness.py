"""Experiment orchestration: config, training loop, evaluation, ablation grids.

Per batch item: backbone forward, supervised losses over the item's labeled
tasks, then for every (source, target) pair from the schedule the source
label and target prediction are mapped into the joint space and contrasted
region-by-region.  The item objective is L_Sup + lambda_rc * mean(L_RC over
pairs); the batch applies Adam to the mean item gradient.

Determinism contract: separate RNG streams (init [seed,0], shuffle [seed,1],
pixel subsampling [seed,2,epoch,item,pair]); batch-item gradients are
reduced in item index order, so --threads never changes results bitwise.
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tape, Tensor, add, scale
from .contrast import (
    NEGATIVE_SOURCES,
    STRATEGIES,
    ContrastConfig,
    cross_task_region_contrast,
    pair_schedule,
)
from .errors import ConfigError, DataError, NumericError
from .gaussdist import DISTANCES
from .nets import (
    OptimState,
    adam_step,
    aux_map_forward,
    backbone_forward,
    init_params,
    load_params,
    param_names,
    save_params,
    task_to_adapter_input,
)
from .regions import RegionMask, downsample_mask, make_patch_grid
from .supervision import (
    MetricAccumulator,
    depth_l1_loss,
    normal_cosine_loss,
    seg_ce_loss,
)
from .synthworld import Scene, read_dataset
from .tasks import TASKS

SETTINGS = ("onelabel", "random", "full")
EXTRACTIONS = ("region", "patch")
CSV_HEADER = "epoch,split,miou,aerr,merr,loss_sup,loss_rc,regions_used,regions_skipped"


@dataclass
class RunConfig:
    data_dir: str = ""
    out_dir: str = "out"
    setting: str = "onelabel"
    strategy: str = "gaussian"
    extraction: str = "region"
    patch_h: int = 4
    patch_w: int = 4
    distance: str = "wasserstein"
    cov_mode: str = "diag"
    negative_source: str = "partner_map"
    tau: float = 1.0
    eps: float = 1e-5
    lambda_rc: float = 1.0
    epochs: int = 30
    batch: int = 8
    lr: float = 1e-3
    seed: int = 1
    threads: int = 1

    def validate(self) -> "RunConfig":
        if not self.data_dir:
            raise ConfigError("data_dir is required")
        for name, value, allowed in (("setting", self.setting, SETTINGS),
                                     ("strategy", self.strategy, STRATEGIES),
                                     ("extraction", self.extraction, EXTRACTIONS),
                                     ("distance", self.distance, DISTANCES),
                                     ("cov_mode", self.cov_mode, ("diag", "full")),
                                     ("negative_source", self.negative_source,
                                      NEGATIVE_SOURCES)):
            if value not in allowed:
                raise ConfigError(f"{name} = {value!r}; expected one of {allowed}")
        if self.tau <= 0 or self.eps <= 0 or self.lr <= 0:
            raise ConfigError("tau, eps and lr must be positive")
        if self.lambda_rc < 0:
            raise ConfigError("lambda_rc must be non-negative")
        if self.patch_h < 1 or self.patch_w < 1:
            raise ConfigError("patch extents must be positive")
        if self.epochs < 0 or self.batch < 1 or self.threads < 1:
            raise ConfigError("epochs must be >= 0; batch and threads >= 1")
        return self


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def parse_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Key = value file (UTF-8, '#' comments) with flag overrides on top."""
    values: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, val = (part.strip() for part in line.split("=", 1))
            values[key] = val
    for key, val in (overrides or {}).items():
        values[key] = val
    kwargs = {}
    for key, val in values.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(val, str):
            kind = _FIELD_TYPES[key]
            try:
                val = int(val) if kind == "int" else float(val) if kind == "float" else val
            except ValueError:
                raise ConfigError(f"{key} = {val!r} is not a valid {kind}") from None
        kwargs[key] = val
    return RunConfig(**kwargs).validate()


@dataclass
class EpochRecord:
    epoch: int
    split: str
    miou: float
    aerr: float
    merr: float
    loss_sup: float = 0.0
    loss_rc: float = 0.0
    regions_used: int = 0
    regions_skipped: int = 0

    def csv_row(self) -> str:
        return (f"{self.epoch},{self.split},{self.miou:.6f},{self.aerr:.6f},"
                f"{self.merr:.6f},{self.loss_sup:.6f},{self.loss_rc:.6f},"
                f"{self.regions_used},{self.regions_skipped}")


@dataclass
class TrainResult:
    params: dict
    checkpoint_path: Path
    csv_path: Path
    records: list = field(default_factory=list)
    batch_log: list = field(default_factory=list)  # (loss_sup, loss_rc, total) per batch


def _dataset_classes(scenes) -> int:
    top = max(int(sc.seg.max()) for sc in scenes)
    return max(top + 1, 2)


def _split_scenes(scenes):
    """Last 20% by index is validation; no shuffling across the boundary."""
    n_val = len(scenes) // 5
    return scenes[:len(scenes) - n_val], scenes[len(scenes) - n_val:]


def _check_extents(scenes):
    h, w = scenes[0].seg.shape
    if h % 2 or w % 2:
        raise DataError(f"scene extents {h}x{w} not divisible by 2")
    for i, sc in enumerate(scenes):
        if sc.seg.shape != (h, w):
            raise DataError(f"scene {i} extents {sc.seg.shape} differ from ({h},{w})")
    return h, w


def _forward_metrics(acc: MetricAccumulator, preds: dict, scene: Scene) -> None:
    acc.add_seg(np.argmax(preds["seg"].values, axis=0), scene.seg)
    acc.add_depth(preds["depth"].values[0], scene.depth)
    acc.add_normals(preds["normal"].values, scene.normals)


def _metrics_record(params, scenes, n_classes: int, epoch: int, split: str) -> EpochRecord:
    acc = MetricAccumulator(n_classes)
    for sc in scenes:
        tape = Tape()
        preds = backbone_forward(tape, params, Tensor(sc.image), n_classes)
        _forward_metrics(acc, preds, sc)
    return EpochRecord(epoch, split, acc.miou(), acc.aerr(), acc.merr())


def _scene_label(scene: Scene, task: str):
    if task == "seg":
        return scene.seg
    return scene.depth if task == "depth" else scene.normals


class _ItemOutcome:
    __slots__ = ("grads", "loss_sup", "loss_rc", "n_pairs", "used", "skipped", "acc")


def _process_item(cfg: RunConfig, params, scene: Scene, item_id: int, epoch: int,
                  n_classes: int, mask: RegionMask, ccfg: ContrastConfig,
                  schedule) -> _ItemOutcome:
    tape = Tape()
    local = {name: Tensor(p.values) for name, p in params.items()}
    preds = backbone_forward(tape, local, Tensor(scene.image), n_classes)

    sup = None
    for task in scene.labeled_tasks:
        if task == "seg":
            term = seg_ce_loss(tape, preds["seg"], scene.seg)
        elif task == "depth":
            term = depth_l1_loss(tape, preds["depth"], scene.depth)
        else:
            term = normal_cosine_loss(tape, preds["normal"], scene.normals)
        sup = term if sup is None else add(tape, sup, term)
    if sup is None:
        sup = Tensor(0.0)
    if not np.isfinite(sup.values):
        raise NumericError(f"non-finite supervised loss (item {item_id}, epoch {epoch})")

    out = _ItemOutcome()
    out.used = out.skipped = 0
    rc_sum = None
    for pair_idx, (src, tgt) in enumerate(schedule):
        enc_label = task_to_adapter_input(tape, src, _scene_label(scene, src), n_classes)
        enc_pred = task_to_adapter_input(tape, tgt, preds[tgt], n_classes)
        map_src = aux_map_forward(tape, local, src, enc_label)
        map_tgt = aux_map_forward(tape, local, tgt, enc_pred)
        rng = np.random.default_rng([cfg.seed, 2, epoch, item_id, pair_idx])
        loss_pair, report = cross_task_region_contrast(tape, map_tgt, map_src, mask,
                                                       ccfg, rng)
        if not np.isfinite(loss_pair.values):
            raise NumericError(f"non-finite contrast loss (item {item_id}, epoch "
                               f"{epoch}, pair {src}->{tgt})")
        out.used += report.regions_contrasted
        out.skipped += report.regions_skipped
        rc_sum = loss_pair if rc_sum is None else add(tape, rc_sum, loss_pair)

    if rc_sum is not None:
        rc_mean = scale(tape, rc_sum, 1.0 / len(schedule))
        total = add(tape, sup, scale(tape, rc_mean, cfg.lambda_rc))
        out.loss_rc = float(rc_mean.values)
    else:
        total = sup
        out.loss_rc = 0.0
    out.loss_sup = float(sup.values)
    out.n_pairs = len(schedule)

    tape.backward(total)
    out.grads = {name: local[name].grad for name in params
                 if local[name].grad is not None}
    out.acc = MetricAccumulator(n_classes)
    _forward_metrics(out.acc, preds, scene)
    return out


def train(cfg: RunConfig) -> TrainResult:
    cfg.validate()
    scenes = read_dataset(cfg.data_dir)
    if not scenes:
        raise DataError(f"{cfg.data_dir}: dataset is empty")
    h, w = _check_extents(scenes)
    n_classes = _dataset_classes(scenes)
    train_scenes, val_scenes = _split_scenes(scenes)
    if not train_scenes:
        raise DataError("no training scenes after the validation split")

    params = init_params(cfg.seed, n_classes)
    names = param_names(n_classes)
    opt = OptimState(lr=cfg.lr)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    ccfg = ContrastConfig(tau=cfg.tau, strategy=cfg.strategy, distance=cfg.distance,
                          negative_source=cfg.negative_source, cov_mode=cfg.cov_mode,
                          eps=cfg.eps)
    schedule_mode = "full" if cfg.setting == "full" else "partial"

    patch_mask = None
    if cfg.extraction == "patch":
        patch_mask = make_patch_grid(h // 2, w // 2, cfg.patch_h, cfg.patch_w)
    mask_cache: dict[int, RegionMask] = {}

    def item_mask(idx: int, scene: Scene) -> RegionMask:
        if patch_mask is not None:
            return patch_mask
        if idx not in mask_cache:
            mask_cache[idx] = downsample_mask(scene.regions, 2, 2)
        return mask_cache[idx]

    def item_schedule(scene: Scene):
        if cfg.lambda_rc == 0.0:
            return []
        labeled = set(scene.labeled_tasks)
        return pair_schedule(labeled, set(TASKS) - labeled, schedule_mode)

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "metrics.csv"
    checkpoint_path = out_dir / "checkpoint.rdc"
    result = TrainResult(params, checkpoint_path, csv_path)

    pool = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None
    try:
        with open(csv_path, "w", encoding="utf-8") as csv_out:
            csv_out.write(CSV_HEADER + "\n")
            for epoch in range(cfg.epochs):
                order = shuffle_rng.permutation(len(train_scenes))
                epoch_acc = MetricAccumulator(n_classes)
                sup_vals, rc_vals = [], []
                used = skipped = 0
                for b_start in range(0, len(order), cfg.batch):
                    idxs = [int(i) for i in order[b_start:b_start + cfg.batch]]

                    def run(i: int) -> _ItemOutcome:
                        sc = train_scenes[i]
                        return _process_item(cfg, params, sc, i, epoch, n_classes,
                                             item_mask(i, sc), ccfg, item_schedule(sc))

                    try:
                        if pool is None:
                            outcomes = [run(i) for i in idxs]
                        else:
                            for i in idxs:  # masks are built once, outside the pool
                                item_mask(i, train_scenes[i])
                            outcomes = list(pool.map(run, idxs))
                    except NumericError as e:
                        raise NumericError(f"batch {b_start // cfg.batch}: {e}") from e

                    grad_sum = {}
                    for oc in outcomes:  # fixed item order: bitwise thread-invariant
                        for name, g in oc.grads.items():
                            if name in grad_sum:
                                grad_sum[name] += g
                            else:
                                grad_sum[name] = g.copy()
                    inv = 1.0 / len(outcomes)
                    adam_step(params, {k: g * inv for k, g in grad_sum.items()}, opt)

                    b_sup = sum(oc.loss_sup for oc in outcomes) * inv
                    b_rc = sum(oc.loss_rc for oc in outcomes) * inv
                    result.batch_log.append((b_sup, b_rc, b_sup + cfg.lambda_rc * b_rc))
                    for oc in outcomes:
                        sup_vals.append(oc.loss_sup)
                        rc_vals.append(oc.loss_rc)
                        used += oc.used
                        skipped += oc.skipped
                        epoch_acc = epoch_acc.merged(oc.acc)

                n_items = len(sup_vals)
                train_rec = EpochRecord(epoch, "train", epoch_acc.miou(),
                                        epoch_acc.aerr(), epoch_acc.merr(),
                                        sum(sup_vals) / n_items, sum(rc_vals) / n_items,
                                        used, skipped)
                val_rec = _metrics_record(params, val_scenes, n_classes, epoch, "val")
                for rec in (train_rec, val_rec):
                    result.records.append(rec)
                    csv_out.write(rec.csv_row() + "\n")
                csv_out.flush()
    finally:
        if pool is not None:
            pool.shutdown()

    save_params(checkpoint_path, params)
    return result


def evaluate(checkpoint, data_dir, split: str = "val") -> EpochRecord:
    """Metrics of a saved checkpoint over a dataset split; no gradient work."""
    params = load_params(checkpoint)
    if "head_seg.w" not in params:
        raise DataError(f"{checkpoint}: missing segmentation head")
    n_classes = params["head_seg.w"].values.shape[0]
    scenes = read_dataset(data_dir)
    if not scenes:
        raise DataError(f"{data_dir}: dataset is empty")
    _check_extents(scenes)
    if _dataset_classes(scenes) != n_classes:
        raise DataError(f"checkpoint has {n_classes} classes, dataset has "
                        f"{_dataset_classes(scenes)}")
    train_scenes, val_scenes = _split_scenes(scenes)
    chosen = {"train": train_scenes, "val": val_scenes, "all": scenes}.get(split)
    if chosen is None:
        raise ConfigError(f"unknown split {split!r}; expected train, val or all")
    rec = _metrics_record(params, chosen, n_classes, 0, split)
    return rec


# ---------------------------------------------------------------------------
# ablation grids

ABLATION_AXES = {
    "strategy": STRATEGIES,
    "extraction": EXTRACTIONS,
    "distance": DISTANCES,
    "cov_mode": ("diag", "full"),
    "setting": SETTINGS,
}
_AXIS_COLUMNS = tuple(ABLATION_AXES)
_RUNS_HEADER = _AXIS_COLUMNS + ("seed", "miou", "aerr", "merr")
_REPORT_HEADER = _RUNS_HEADER + ("miou_std", "aerr_std", "merr_std")


def _runs_path(out_dir: Path) -> Path:
    return out_dir / "runs.csv"


def _load_runs(out_dir: Path) -> list[dict]:
    path = _runs_path(out_dir)
    if not path.is_file():
        return []
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def ablate(cfg: RunConfig, axes, out_dir, seeds=(1, 2, 3)) -> Path:
    """Train+evaluate the Cartesian grid over `axes` x seeds; resumable.

    Every finished run appends one row to runs.csv, so re-running the same
    grid skips completed cells.  The final report adds one mean/stddev row
    per cell.
    """
    axes = list(axes)
    for axis in axes:
        if axis not in ABLATION_AXES:
            raise ConfigError(f"unknown ablation axis {axis!r}; "
                              f"expected one of {tuple(ABLATION_AXES)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    done = {tuple(row[c] for c in _AXIS_COLUMNS) + (row["seed"],)
            for row in _load_runs(out_dir)}
    runs_path = _runs_path(out_dir)
    if not runs_path.is_file():
        runs_path.write_text(",".join(_RUNS_HEADER) + "\n")

    for combo in itertools.product(*[ABLATION_AXES[a] for a in axes]):
        cell = dict(zip(axes, combo))
        for seed in seeds:
            run_cfg = dataclasses.replace(cfg, seed=seed, **cell)
            key = tuple(str(getattr(run_cfg, c)) for c in _AXIS_COLUMNS) + (str(seed),)
            if key in done:
                continue
            tag = "_".join(list(combo) + [f"s{seed}"])
            run_cfg = dataclasses.replace(run_cfg, out_dir=str(out_dir / tag))
            result = train(run_cfg)
            final_val = [r for r in result.records if r.split == "val"][-1]
            with open(runs_path, "a", encoding="utf-8") as fh:
                fh.write(",".join(key + (f"{final_val.miou:.6f}",
                                         f"{final_val.aerr:.6f}",
                                         f"{final_val.merr:.6f}")) + "\n")
            done.add(key)
    return write_report(out_dir)


def write_report(out_dir) -> Path:
    """Summarize runs.csv into report.csv: run rows plus per-cell summaries."""
    out_dir = Path(out_dir)
    rows = _load_runs(out_dir)
    if not rows:
        raise DataError(f"{_runs_path(out_dir)}: no finished runs to report")
    report_path = out_dir / "report.csv"
    cells: dict[tuple, list[dict]] = {}
    for row in rows:
        cells.setdefault(tuple(row[c] for c in _AXIS_COLUMNS), []).append(row)
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(",".join(_REPORT_HEADER) + "\n")
        for cell_key in sorted(cells):
            cell_rows = sorted(cells[cell_key], key=lambda r: int(r["seed"]))
            for row in cell_rows:
                fh.write(",".join([row[c] for c in _RUNS_HEADER] + [""] * 3) + "\n")
            stats = {m: np.array([float(r[m]) for r in cell_rows])
                     for m in ("miou", "aerr", "merr")}
            fh.write(",".join(list(cell_key) + ["summary"]
                              + [f"{stats[m].mean():.6f}" for m in stats]
                              + [f"{stats[m].std():.6f}" for m in stats]) + "\n")
    return report_path
