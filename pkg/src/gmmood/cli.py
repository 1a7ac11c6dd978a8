"""Command-line pipeline: project, fit, score, eval, synth.

Runs are driven by an INI config file whose sections mirror RunConfig;
every key can be overridden by a same-named command-line flag (flags
win).  Exit codes: 0 success, 1 partial per-file failures, 2
configuration or precondition error.
"""

import argparse
import configparser
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ensemble as ens
from . import gmm, metrics, nig, rangeview
from . import synth as synthmod
from .errors import Error, InsufficientDataError, ShapeError, UndefinedMetricError
from .formats import FeatureMap, read_feature_map, write_feature_map

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2

SCORE_CHANNELS = ens.UncertaintyMap.SCORE_CHANNELS
# eval report names; max_posterior is negated so that higher = more OOD
REPORT_CHANNELS = tuple(
    "neg_max_posterior" if ch == "max_posterior" else ch for ch in SCORE_CHANNELS
)


@dataclass(frozen=True)
class ClassMap:
    """Raw semantic id -> train id table, plus outlier and ignore ids."""

    train_ids: dict
    outlier_ids: frozenset
    ignore_ids: frozenset

    def __post_init__(self):
        overlap = (set(self.train_ids) & self.outlier_ids) | (
            set(self.train_ids) & self.ignore_ids
        )
        if overlap or (self.outlier_ids & self.ignore_ids):
            raise ValueError("a raw id may appear in only one of train/outlier/ignore")

    @property
    def num_train_classes(self) -> int:
        return max(self.train_ids.values()) + 1 if self.train_ids else 0

    def map_array(self, raw: np.ndarray):
        """Vectorized mapping: (train ids with -1 elsewhere, outlier, ignore).

        Raw ids absent from the table are treated as ignore.
        """
        raw = np.asarray(raw, dtype=np.int64)
        top = max(
            [0, *self.train_ids.keys(), *self.outlier_ids, *self.ignore_ids]
        )
        lut = np.full(top + 2, -1, dtype=np.int64)  # default: ignore
        outlier_lut = np.zeros(top + 2, dtype=bool)
        for rid in self.outlier_ids:
            outlier_lut[rid] = True
        for rid, tid in self.train_ids.items():
            lut[rid] = tid
        clipped = np.clip(raw, 0, top + 1)
        unknown = (raw < 0) | (raw > top)
        train = np.where(unknown, -1, lut[clipped])
        outlier = np.where(unknown, False, outlier_lut[clipped])
        ignore = (train < 0) & ~outlier
        return train, outlier, ignore


# Default table for SemanticKITTI-style raw labels: 19 train classes,
# raw 1 is the outlier class, raw 0/52/99 are ignored, moving classes
# fold into their static counterparts.
DEFAULT_CLASS_MAP = ClassMap(
    train_ids={
        10: 0, 11: 1, 15: 2, 18: 3, 20: 4, 30: 5, 31: 6, 32: 7,
        40: 8, 44: 9, 48: 10, 49: 11, 50: 12, 51: 13, 70: 14, 71: 15,
        72: 16, 80: 17, 81: 18,
        13: 4, 16: 4, 60: 8,
        252: 0, 253: 6, 254: 5, 255: 7, 256: 4, 257: 4, 258: 3, 259: 4,
    },
    outlier_ids=frozenset({1}),
    ignore_ids=frozenset({0, 52, 99}),
)


@dataclass
class PathsConfig:
    scan_dir: str | None = None
    label_dir: str | None = None
    feature_dir: str | None = None
    score_dir: str | None = None
    out_dir: str = "out"
    model_path: str | None = None
    bank_path: str | None = None


@dataclass
class ModelConfig:
    classes: int = 19
    components: int = 2
    feature_dim: int = 32


@dataclass
class EMConfig:
    max_iters: int = 100
    tol: float = 1e-5


@dataclass
class EnsembleConfig:
    n_samples: int = 20
    seed: int = 0


@dataclass
class ThresholdConfig:
    top_fraction: float = 0.05
    per_scan: bool = False


@dataclass
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    projection: rangeview.ProjectionConfig = field(default_factory=rangeview.ProjectionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    prior: nig.NIGParams = field(default_factory=lambda: nig.DEFAULT_PRIOR)
    em: EMConfig = field(default_factory=EMConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    threshold: ThresholdConfig = field(default_factory=ThresholdConfig)
    class_map: ClassMap = DEFAULT_CLASS_MAP
    synth: synthmod.SynthConfig = field(default_factory=synthmod.SynthConfig)

    def model_path(self) -> Path:
        return Path(self.paths.model_path or Path(self.paths.out_dir) / "model.gmmc")

    def bank_path(self) -> Path:
        return Path(self.paths.bank_path or Path(self.paths.out_dir) / "bank.nigb")


def _parse_overlap_pairs(text: str) -> tuple:
    pairs = []
    for chunk in text.replace(" ", "").split(","):
        if not chunk:
            continue
        a, _, b = chunk.partition("-")
        pairs.append((int(a), int(b)))
    return tuple(pairs)


def load_run_config(path=None) -> RunConfig:
    """Build a RunConfig from an INI file (all sections optional)."""
    cfg = RunConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise Error(f"cannot read config file {path}")

    if parser.has_section("paths"):
        sec = parser["paths"]
        cfg.paths = PathsConfig(
            scan_dir=sec.get("scan_dir"),
            label_dir=sec.get("label_dir"),
            feature_dir=sec.get("feature_dir"),
            score_dir=sec.get("score_dir"),
            out_dir=sec.get("out_dir", "out"),
            model_path=sec.get("model_path"),
            bank_path=sec.get("bank_path"),
        )
    if parser.has_section("projection"):
        sec = parser["projection"]
        cfg.projection = rangeview.ProjectionConfig(
            height=sec.getint("height", 64),
            width=sec.getint("width", 1024),
            fov_up=sec.getfloat("fov_up", 3.0),
            fov_down=sec.getfloat("fov_down", -25.0),
        )
    if parser.has_section("model"):
        sec = parser["model"]
        cfg.model = ModelConfig(
            classes=sec.getint("classes", 19),
            components=sec.getint("components", 2),
            feature_dim=sec.getint("feature_dim", 32),
        )
    if parser.has_section("prior"):
        sec = parser["prior"]
        cfg.prior = nig.NIGParams(
            mu=sec.getfloat("mu0", 0.0),
            kappa=sec.getfloat("kappa0", 1.0),
            alpha=sec.getfloat("alpha0", 2.0),
            beta=sec.getfloat("beta0", 1.0),
        )
    if parser.has_section("em"):
        sec = parser["em"]
        cfg.em = EMConfig(
            max_iters=sec.getint("max_iters", 100), tol=sec.getfloat("tol", 1e-5)
        )
    if parser.has_section("ensemble"):
        sec = parser["ensemble"]
        cfg.ensemble = EnsembleConfig(
            n_samples=sec.getint("n_samples", 20), seed=sec.getint("seed", 0)
        )
    if parser.has_section("threshold"):
        sec = parser["threshold"]
        cfg.threshold = ThresholdConfig(
            top_fraction=sec.getfloat("top_fraction", 0.05),
            per_scan=sec.getboolean("per_scan", False),
        )
    if parser.has_section("class_map"):
        train_ids = {}
        outliers = set()
        ignores = set()
        for key, value in parser["class_map"].items():
            raw = int(key)
            value = value.strip().lower()
            if value == "outlier":
                outliers.add(raw)
            elif value == "ignore":
                ignores.add(raw)
            else:
                train_ids[raw] = int(value)
        cfg.class_map = ClassMap(train_ids, frozenset(outliers), frozenset(ignores))
    if parser.has_section("synth"):
        sec = parser["synth"]
        cfg.synth = synthmod.SynthConfig(
            feature_dim=sec.getint("feature_dim", 8),
            n_classes=sec.getint("n_classes", 6),
            samples_per_class=sec.getint("samples_per_class", 2000),
            class_separation=sec.getfloat("class_separation", 4.0),
            overlap_pairs=_parse_overlap_pairs(sec.get("overlap_pairs", "0-1,2-3")),
            ood_count=sec.getint("ood_count", 600),
            ood_offset=sec.getfloat("ood_offset", 12.0),
            within_class_std=sec.getfloat("within_class_std", 0.5),
            seed=sec.getint("seed", 0),
        )
    return cfg


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    """Command-line flags beat config-file values."""
    p = cfg.paths
    for name in ("scan_dir", "label_dir", "feature_dir", "score_dir", "model_path", "bank_path"):
        if getattr(args, name, None) is not None:
            setattr(p, name, getattr(args, name))
    if args.out is not None:
        p.out_dir = args.out

    proj = {f: getattr(cfg.projection, f) for f in ("height", "width", "fov_up", "fov_down")}
    for name in proj:
        if getattr(args, name, None) is not None:
            proj[name] = getattr(args, name)
    cfg.projection = rangeview.ProjectionConfig(**proj)

    for name in ("classes", "components", "feature_dim"):
        if getattr(args, name, None) is not None:
            setattr(cfg.model, name, getattr(args, name))

    prior = {"mu": cfg.prior.mu, "kappa": cfg.prior.kappa,
             "alpha": cfg.prior.alpha, "beta": cfg.prior.beta}
    for flag, key in (("mu0", "mu"), ("kappa0", "kappa"), ("alpha0", "alpha"), ("beta0", "beta")):
        if getattr(args, flag, None) is not None:
            prior[key] = getattr(args, flag)
    cfg.prior = nig.NIGParams(**prior)

    if getattr(args, "em_max_iters", None) is not None:
        cfg.em.max_iters = args.em_max_iters
    if getattr(args, "em_tol", None) is not None:
        cfg.em.tol = args.em_tol
    if getattr(args, "n_samples", None) is not None:
        cfg.ensemble.n_samples = args.n_samples
    if args.seed is not None:
        cfg.ensemble.seed = args.seed
    if getattr(args, "top_fraction", None) is not None:
        cfg.threshold.top_fraction = args.top_fraction
    if getattr(args, "per_scan_threshold", None) is not None:
        cfg.threshold.per_scan = args.per_scan_threshold

    sy = {f: getattr(cfg.synth, f) for f in (
        "feature_dim", "n_classes", "samples_per_class", "class_separation",
        "overlap_pairs", "ood_count", "ood_offset", "within_class_std", "seed",
    )}
    if args.seed is not None:
        # the shared --seed flag is the run seed: dataset and pipeline alike
        sy["seed"] = args.seed
    for flag, key in (
        ("synth_dim", "feature_dim"), ("synth_classes", "n_classes"),
        ("synth_samples", "samples_per_class"), ("synth_separation", "class_separation"),
        ("synth_ood_count", "ood_count"), ("synth_ood_offset", "ood_offset"),
        ("synth_std", "within_class_std"), ("synth_seed", "seed"),
    ):
        if getattr(args, flag, None) is not None:
            sy[key] = getattr(args, flag)
    if getattr(args, "synth_overlap_pairs", None) is not None:
        sy["overlap_pairs"] = _parse_overlap_pairs(args.synth_overlap_pairs)
    cfg.synth = synthmod.SynthConfig(**sy)
    return cfg


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _require_dir(path, what: str) -> Path:
    if path is None:
        raise Error(f"{what} is not configured")
    p = Path(path)
    if not p.is_dir():
        raise Error(f"{what} {p} does not exist")
    return p


# ---------------------------------------------------------------------------
# project


def _project_one(scan_path: Path, label_path, cfg: RunConfig):
    cloud = rangeview.parse_point_cloud(scan_path.read_bytes())
    labels = None
    if label_path is not None:
        outlier_id = min(cfg.class_map.outlier_ids) if cfg.class_map.outlier_ids else 1
        labels = rangeview.parse_labels(label_path.read_bytes(), len(cloud), outlier_id)
    if labels is None:
        image = rangeview.project_spherical(cloud, None, cfg.projection)
        grid = None
    else:
        image, grid = rangeview.project_spherical(cloud, labels, cfg.projection)
    return cloud, image, grid


def cmd_project(cfg: RunConfig, jobs: int = 1) -> int:
    scan_dir = _require_dir(cfg.paths.scan_dir, "scan_dir")
    label_dir = Path(cfg.paths.label_dir) if cfg.paths.label_dir else None
    out = Path(cfg.paths.out_dir)
    (out / "range").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)

    scans = sorted(scan_dir.glob("*.bin"))
    entries = []
    failed = 0
    for scan_path in scans:
        label_path = None
        if label_dir is not None:
            candidate = label_dir / (scan_path.stem + ".label")
            label_path = candidate if candidate.exists() else None
        entry = {"scan": scan_path.name}
        try:
            cloud, image, grid = _project_one(scan_path, label_path, cfg)
            range_file = out / "range" / (scan_path.stem + ".fmap")
            write_feature_map(FeatureMap(image.channels, image.valid), range_file)
            entry.update(
                points=len(cloud),
                dropped_points=image.dropped_points,
                range_image=str(range_file.relative_to(out)),
            )
            if grid is not None:
                label_file = out / "labels" / (scan_path.stem + ".fmap")
                write_feature_map(
                    FeatureMap.from_grid(grid.astype(np.float32), image.valid), label_file
                )
                entry["label_grid"] = str(label_file.relative_to(out))
        except (Error, ValueError, OSError) as exc:
            entry["error"] = str(exc)
            failed += 1
        entries.append(entry)

    _write_json(out / "project_manifest.json", {"files": entries, "failed": failed})
    return EXIT_PARTIAL if failed else EXIT_OK


# ---------------------------------------------------------------------------
# fit


def cmd_fit(cfg: RunConfig) -> int:
    feature_dir = _require_dir(cfg.paths.feature_dir, "feature_dir")
    label_dir = _require_dir(cfg.paths.label_dir, "label_dir")
    out = Path(cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    n_classes = cfg.model.classes
    pooled: list[list[np.ndarray]] = [[] for _ in range(n_classes)]
    feature_files = sorted(feature_dir.glob("*.fmap"))
    if not feature_files:
        raise Error(f"no feature files in {feature_dir}")
    for fpath in feature_files:
        lpath = label_dir / fpath.name
        if not lpath.exists():
            raise Error(f"missing label grid for {fpath.name}")
        fmap = read_feature_map(fpath)
        lmap = read_feature_map(lpath)
        if fmap.dim != cfg.model.feature_dim:
            raise ShapeError(
                f"{fpath.name}: feature dimension {fmap.dim} != configured "
                f"{cfg.model.feature_dim}"
            )
        if lmap.values.shape[:2] != fmap.values.shape[:2]:
            raise ShapeError(f"{fpath.name}: label grid shape mismatch")
        raw = np.round(lmap.grid()).astype(np.int64)
        train, outlier, ignore = cfg.class_map.map_array(raw)
        usable = fmap.valid & lmap.valid & ~outlier & ~ignore & (train >= 0)
        feats = fmap.values[usable].astype(np.float64)
        ids = train[usable]
        for c in range(n_classes):
            sel = ids == c
            if sel.any():
                pooled[c].append(feats[sel])

    seeds = np.random.SeedSequence(cfg.ensemble.seed).spawn(n_classes)
    classes = []
    stats = []
    report = {}
    for c in range(n_classes):
        feats = (
            np.concatenate(pooled[c], axis=0)
            if pooled[c]
            else np.empty((0, cfg.model.feature_dim))
        )
        if feats.shape[0] < cfg.model.components:
            raise InsufficientDataError(
                f"class {c} has {feats.shape[0]} samples; needs at least "
                f"{cfg.model.components}"
            )
        cgmm, st = em_fit_with(cfg, feats, c, seeds[c])
        classes.append(cgmm)
        stats.append(st)
        report[str(c)] = {
            "samples": int(feats.shape[0]),
            "em_iterations": int(st.log_likelihoods.size),
            "final_log_likelihood": float(st.log_likelihoods[-1]),
            "reseeds": int(st.reseeds),
        }

    model = gmm.GMMClassifier(classes)
    bank = nig.build_bank(model, stats, cfg.prior)
    gmm.save_classifier(model, cfg.model_path())
    nig.save_bank(bank, cfg.bank_path())
    _write_json(out / "fit_report.json", {"classes": report})
    return EXIT_OK


def em_fit_with(cfg: RunConfig, feats: np.ndarray, class_id: int, seed):
    return gmm.em_fit(
        feats,
        cfg.model.components,
        max_iters=cfg.em.max_iters,
        tol=cfg.em.tol,
        seed=seed,
        class_id=class_id,
    )


# ---------------------------------------------------------------------------
# score


def _score_grid_files(umap: ens.UncertaintyMap, stem: str, out: Path) -> dict:
    written = {}
    for channel in SCORE_CHANNELS:
        values = getattr(umap, channel)
        grid = np.where(umap.valid, values, 0.0).astype(np.float32)
        path = out / "scores" / f"{stem}_{channel}.fmap"
        write_feature_map(FeatureMap.from_grid(grid, umap.valid), path)
        written[channel] = str(path.relative_to(out))
    pred_path = out / "predictions" / f"{stem}.fmap"
    pred = np.where(umap.valid, umap.predicted_class, -1).astype(np.float32)
    write_feature_map(FeatureMap.from_grid(pred, umap.valid), pred_path)
    written["predictions"] = str(pred_path.relative_to(out))
    return written


def cmd_score(cfg: RunConfig, jobs: int = 1) -> int:
    feature_dir = _require_dir(cfg.paths.feature_dir, "feature_dir")
    out = Path(cfg.paths.out_dir)
    for sub in ("scores", "predictions", "ood_masks"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    model = gmm.load_classifier(cfg.model_path())
    bank = nig.load_bank(cfg.bank_path())
    members = nig.sample_ensemble(bank, cfg.ensemble.n_samples, cfg.ensemble.seed)

    files = sorted(feature_dir.glob("*.fmap"))

    def process(path: Path):
        fmap = read_feature_map(path)
        return path.stem, ens.score_feature_map(fmap, model, members)

    results = {}
    errors = {}
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(process, path): path for path in files}
            for future, path in futures.items():
                try:
                    stem, umap = future.result()
                    results[stem] = umap
                except Error as exc:
                    errors[path.stem] = str(exc)
    else:
        for path in files:
            try:
                stem, umap = process(path)
                results[stem] = umap
            except Error as exc:
                errors[path.stem] = str(exc)

    manifest_files = []
    warnings = []
    stems = sorted(results)
    pooled = [results[stem].epistemic[results[stem].valid] for stem in stems]

    thresholds = {}
    if cfg.threshold.per_scan:
        for stem in stems:
            vals = results[stem].epistemic[results[stem].valid]
            if vals.size:
                thresholds[stem], _ = metrics.percentile_threshold(
                    vals, cfg.threshold.top_fraction
                )
    else:
        all_scores = (
            np.concatenate(pooled) if pooled else np.empty(0)
        )
        if all_scores.size:
            global_threshold, _ = metrics.percentile_threshold(
                all_scores, cfg.threshold.top_fraction
            )
        else:
            global_threshold = None
        thresholds = {stem: global_threshold for stem in stems}

    for stem in stems:
        umap = results[stem]
        written = _score_grid_files(umap, stem, out)
        threshold = thresholds.get(stem)
        if not umap.valid.any():
            warnings.append(f"{stem}: no valid pixels")
        if threshold is None:
            mask = np.zeros_like(umap.valid)
        else:
            mask = umap.valid & (umap.epistemic > threshold)
        mask_path = out / "ood_masks" / f"{stem}.fmap"
        write_feature_map(
            FeatureMap.from_grid(mask.astype(np.float32), umap.valid), mask_path
        )
        written["ood_mask"] = str(mask_path.relative_to(out))
        manifest_files.append(
            {
                "file": stem,
                "n_valid": int(umap.valid.sum()),
                "flagged": int(mask.sum()),
                "threshold": threshold,
                "outputs": written,
            }
        )
    for stem, message in sorted(errors.items()):
        manifest_files.append({"file": stem, "error": message})

    _write_json(
        out / "score_manifest.json",
        {
            "files": manifest_files,
            "warnings": warnings,
            "n_samples": cfg.ensemble.n_samples,
            "top_fraction": cfg.threshold.top_fraction,
            "per_scan": cfg.threshold.per_scan,
        },
    )
    return EXIT_PARTIAL if errors else EXIT_OK


# ---------------------------------------------------------------------------
# eval


def cmd_eval(cfg: RunConfig, jobs: int = 1) -> int:
    score_dir = Path(cfg.paths.score_dir or cfg.paths.out_dir)
    label_dir = _require_dir(cfg.paths.label_dir, "label_dir")
    out = Path(cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pred_dir = score_dir / "predictions"
    if not pred_dir.is_dir():
        raise Error(f"no predictions directory under {score_dir}")

    pred_files = sorted(pred_dir.glob("*.fmap"))
    if not pred_files:
        raise Error(f"no prediction grids in {pred_dir}")

    channel_scores = {name: [] for name in SCORE_CHANNELS}
    ood_flags = []
    miou_pred = []
    miou_gt = []
    for ppath in pred_files:
        stem = ppath.stem
        gt_path = label_dir / f"{stem}.fmap"
        if not gt_path.exists():
            raise Error(f"missing ground-truth label grid for {stem}")
        pred_map = read_feature_map(ppath)
        gt_map = read_feature_map(gt_path)
        if gt_map.values.shape[:2] != pred_map.values.shape[:2]:
            raise ShapeError(f"{stem}: ground-truth shape mismatch")
        score_maps = {}
        for channel in SCORE_CHANNELS:
            spath = score_dir / "scores" / f"{stem}_{channel}.fmap"
            if not spath.exists():
                raise Error(f"missing score map {spath.name}")
            score_maps[channel] = read_feature_map(spath)

        valid = pred_map.valid & gt_map.valid
        raw = np.round(gt_map.grid()).astype(np.int64)
        train, outlier, ignore = cfg.class_map.map_array(raw)
        ranked = valid & ~ignore
        ood_flags.append(outlier[ranked])
        for channel in SCORE_CHANNELS:
            values = score_maps[channel].grid().astype(np.float64)[ranked]
            if channel == "max_posterior":
                values = -values
            channel_scores[channel].append(values)

        id_pixels = ranked & ~outlier
        miou_pred.append(np.round(pred_map.grid()).astype(np.int64)[id_pixels])
        miou_gt.append(train[id_pixels])

    is_ood = np.concatenate(ood_flags)
    if not is_ood.any():
        raise UndefinedMetricError(
            "auroc, auprc, fpr95 undefined: ground truth contains no OOD pixels"
        )
    mean_iou, per_class = metrics.miou(
        np.concatenate(miou_pred), np.concatenate(miou_gt), cfg.model.classes
    )

    for channel, report_name in zip(SCORE_CHANNELS, REPORT_CHANNELS):
        data = metrics.ScoredPixels(np.concatenate(channel_scores[channel]), is_ood)
        report = metrics.EvalReport(
            auroc=metrics.auroc(data),
            auprc=metrics.auprc(data),
            fpr95=metrics.fpr_at_tpr(data),
            miou=mean_iou,
            per_class_iou=per_class,
            n_id=data.n_id,
            n_ood=data.n_ood,
        )
        (out / f"eval_{report_name}.json").write_text(report.to_json())
        (out / f"eval_{report_name}.csv").write_text(report.to_csv())
        print(
            f"{report_name}: auroc={report.auroc:.4f} auprc={report.auprc:.4f} "
            f"fpr95={report.fpr95:.4f} miou={report.miou:.4f}"
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth


def cmd_synth(cfg: RunConfig) -> int:
    out = Path(cfg.paths.out_dir)
    dataset_dir = out / "dataset"
    dataset_dir.mkdir(parents=True, exist_ok=True)

    ds = synthmod.generate(cfg.synth)
    for ci, feats in enumerate(ds.train_features):
        fmap = FeatureMap(feats[None, :, :].astype(np.float32), np.ones((1, feats.shape[0]), bool))
        write_feature_map(fmap, dataset_dir / f"train_class{ci}.fmap")
    n_eval = ds.eval_features.shape[0]
    write_feature_map(
        FeatureMap(ds.eval_features[None].astype(np.float32), np.ones((1, n_eval), bool)),
        dataset_dir / "eval_features.fmap",
    )
    write_feature_map(
        FeatureMap.from_grid(ds.eval_labels[None].astype(np.float32), np.ones((1, n_eval), bool)),
        dataset_dir / "eval_labels.fmap",
    )
    write_feature_map(
        FeatureMap.from_grid(ds.eval_is_ood[None].astype(np.float32), np.ones((1, n_eval), bool)),
        dataset_dir / "eval_is_ood.fmap",
    )
    _write_json(dataset_dir / "generating_params.json", ds.generating_params)

    result = synthmod.run_benchmark(
        ds,
        n_components=cfg.model.components,
        prior=cfg.prior,
        n_samples=cfg.ensemble.n_samples,
        seed=cfg.ensemble.seed,
        em_max_iters=cfg.em.max_iters,
        em_tol=cfg.em.tol,
    )
    (out / "eval_epistemic.json").write_text(result.epistemic.to_json())
    (out / "eval_epistemic.csv").write_text(result.epistemic.to_csv())
    (out / "eval_predictive.json").write_text(result.predictive.to_json())
    (out / "eval_predictive.csv").write_text(result.predictive.to_csv())
    _write_json(out / "delta_summary.json", result.delta_summary())
    summary = result.delta_summary()
    print(
        f"epistemic auroc={result.epistemic.auroc:.4f} "
        f"predictive auroc={result.predictive.auroc:.4f} "
        f"delta={summary['auroc_delta']:+.4f} "
        f"accuracy={summary['point_accuracy']:.4f}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gmmood",
        description="Range-view OOD detection with Bayesian GMM ensembles.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("project", "project raw scans to range-view images and label grids"),
        ("fit", "fit per-class GMMs and the NIG posterior bank"),
        ("score", "score feature maps and emit OOD masks"),
        ("eval", "evaluate score maps against ground truth"),
        ("synth", "generate a synthetic dataset and run the benchmark"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", type=str, default=None)
        cmd.add_argument("--seed", type=int, default=None)
        cmd.add_argument("--out", type=str, default=None)
        cmd.add_argument("--jobs", type=int, default=1)
        for flag in ("scan-dir", "label-dir", "feature-dir", "score-dir",
                     "model-path", "bank-path"):
            cmd.add_argument(f"--{flag}", type=str, default=None)
        cmd.add_argument("--height", type=int, default=None)
        cmd.add_argument("--width", type=int, default=None)
        cmd.add_argument("--fov-up", type=float, default=None)
        cmd.add_argument("--fov-down", type=float, default=None)
        cmd.add_argument("--classes", type=int, default=None)
        cmd.add_argument("--components", type=int, default=None)
        cmd.add_argument("--feature-dim", type=int, default=None)
        cmd.add_argument("--mu0", type=float, default=None)
        cmd.add_argument("--kappa0", type=float, default=None)
        cmd.add_argument("--alpha0", type=float, default=None)
        cmd.add_argument("--beta0", type=float, default=None)
        cmd.add_argument("--em-max-iters", type=int, default=None)
        cmd.add_argument("--em-tol", type=float, default=None)
        cmd.add_argument("--n-samples", type=int, default=None)
        cmd.add_argument("--top-fraction", type=float, default=None)
        cmd.add_argument(
            "--per-scan-threshold", action=argparse.BooleanOptionalAction, default=None
        )
        cmd.add_argument("--synth-dim", type=int, default=None)
        cmd.add_argument("--synth-classes", type=int, default=None)
        cmd.add_argument("--synth-samples", type=int, default=None)
        cmd.add_argument("--synth-separation", type=float, default=None)
        cmd.add_argument("--synth-overlap-pairs", type=str, default=None)
        cmd.add_argument("--synth-ood-count", type=int, default=None)
        cmd.add_argument("--synth-ood-offset", type=float, default=None)
        cmd.add_argument("--synth-std", type=float, default=None)
        cmd.add_argument("--synth-seed", type=int, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config)
        cfg = _apply_overrides(cfg, args)
        if args.command == "project":
            return cmd_project(cfg, jobs=args.jobs)
        if args.command == "fit":
            return cmd_fit(cfg)
        if args.command == "score":
            return cmd_score(cfg, jobs=args.jobs)
        if args.command == "eval":
            return cmd_eval(cfg, jobs=args.jobs)
        if args.command == "synth":
            return cmd_synth(cfg)
        raise Error(f"unknown command {args.command}")
    except (Error, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
