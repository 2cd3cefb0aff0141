"""Experiment harness: autoencoder inpainting, MLP / RBFN classification with
double cross-validation, and the four-Gaussian toy density demo."""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, imputers, kernels, nn
from .data import (DatasetWithMask, MaskPolicy, apply_mask, apply_normalization, kfold_split,
                   load_csv, load_images, normalize)
from .density import DEFAULT_GAMMA, GmmParams, em_fit
from .errors import ConfigError, InvalidArgument

EXPERIMENTS = ("autoencoder", "mlp-classify", "rbfn-classify", "toy-density")
METHODS = ("generalized",) + imputers.KINDS
AE_HIDDEN = (256, 128, 64, 128, 256)


@dataclass
class ExperimentConfig:
    experiment: str
    dataset: dict = field(default_factory=dict)
    mask: list = field(default_factory=lambda: [{"kind": "as-is"}])
    methods: list = field(default_factory=lambda: ["generalized"])
    architecture: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    density: dict = field(default_factory=dict)
    cv: dict = field(default_factory=dict)
    out: str | None = None
    seed: int = 0
    options: dict = field(default_factory=dict)

    KEYS = ("experiment", "dataset", "mask", "method", "methods", "architecture", "train",
            "density", "cv", "out", "seed", "options")

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(doc) - set(cls.KEYS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "experiment" not in doc:
            raise ConfigError("config needs an 'experiment' entry")
        doc = dict(doc)
        if "method" in doc:
            if "methods" in doc:
                raise ConfigError("give either 'method' or 'methods', not both")
            doc["methods"] = [doc.pop("method")]
        mask = doc.get("mask", [{"kind": "as-is"}])
        doc["mask"] = [mask] if isinstance(mask, dict) else list(mask)
        cfg = cls(**doc)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(doc)

    def to_dict(self):
        return {
            "experiment": self.experiment, "dataset": self.dataset, "mask": self.mask,
            "methods": self.methods, "architecture": self.architecture, "train": self.train,
            "density": self.density, "cv": self.cv, "out": self.out, "seed": self.seed,
            "options": self.options,
        }

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"unknown methods {bad}; choose from {', '.join(METHODS)}")
        try:
            for m in self.mask:
                MaskPolicy(**{"seed": self.seed, **m})
            self.train_config()
        except (InvalidArgument, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        if self.experiment == "toy-density" and self.methods != ["generalized"]:
            raise ConfigError("toy-density runs the generalized method only")
        for key in ("path", "images", "labels"):
            value = self.dataset.get(key)
            if value is not None and not Path(value).exists():
                raise ConfigError(f"dataset file not found: {value}")
        if self.experiment in ("mlp-classify", "rbfn-classify") and "path" not in self.dataset \
                and self.dataset.get("format") != "synthetic":
            raise ConfigError("classification experiments need dataset.path")

    def train_config(self, **override):
        doc = {"seed": self.seed, **self.train, **override}
        return nn.TrainConfig(**doc)


# --------------------------------------------------------------------------
# reports


def _clean(obj):
    """JSON-ready copy: numpy scalars/arrays to Python, floats rounded to 12
    significant digits so reports are stable across platforms."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            raise ValueError("report metrics must be finite")
        return float(f"{v:.12g}")
    return obj


def make_report(cfg, runs, wall_clock, extra=None):
    report = {
        "experiment": cfg.experiment,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "version": __version__,
        "backend": kernels.BACKEND,
        "runs": runs,
        "wall_clock_s": wall_clock,
    }
    if extra:
        report.update(extra)
    return _clean(report)


def aggregate(folds):
    """Mean of every numeric metric over folds."""
    keys = [k for k, v in folds[0].items() if isinstance(v, (int, float)) and not isinstance(v, bool)]
    return {k: float(np.mean([f[k] for f in folds])) for k in keys}


def report_table(report):
    lines = [f"experiment: {report['experiment']}  seed: {report['seed']}"]
    header = None
    for run in report["runs"]:
        agg = run["aggregate"]
        keys = sorted(agg)
        if header != keys:
            header = keys
            lines.append(f"{'method':<12} {'mask':<16} " + " ".join(f"{k:>14}" for k in keys))
        lines.append(f"{run['method']:<12} {run['mask_label']:<16} "
                     + " ".join(f"{agg[k]:>14.6g}" for k in keys))
    return "\n".join(lines)


def emit_report(report, path=None, stream=None):
    """Write the report as JSON (sorted keys) and print a table."""
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    if path is not None:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text)
        except OSError as exc:
            raise OSError(f"cannot write report to {path}: {exc}") from exc
    if stream is not None:
        print(report_table(report), file=stream)
    return text


def read_report(path):
    return json.loads(Path(path).read_text())


# --------------------------------------------------------------------------
# data


def _mask_label(policy):
    if policy.kind == "mcar":
        return f"mcar-{policy.p:g}"
    if policy.kind == "patch":
        return f"patch-{policy.h}x{policy.w_patch}"
    return "as-is"


def load_dataset(cfg):
    ds = cfg.dataset
    fmt = ds.get("format", "csv" if "path" in ds else "idx")
    if fmt == "csv":
        data = load_csv(ds["path"], ds.get("missing_tokens", ("?", "", "NA", "NaN")),
                        ds.get("label_column"), ds.get("delimiter", ","), ds.get("header", False),
                        ds.get("drop_columns", ()))
    elif fmt == "idx":
        data = load_images(ds["images"], ds.get("labels"), ds.get("n"), ds.get("subsample_seed", cfg.seed))
        if ds.get("scale", 255.0):
            data = data.replace(values=data.values / float(ds.get("scale", 255.0)))
    elif fmt == "synthetic":
        data = synthetic_classification(ds.get("n", 300), ds.get("d", 4), ds.get("classes", 2),
                                        ds.get("separation", 3.0), seed=ds.get("seed", cfg.seed))
    else:
        raise ConfigError(f"unknown dataset format {fmt!r}")
    if ds.get("shuffle_labels") and data.labels is not None:
        rng = np.random.default_rng(cfg.seed + 7919)
        data = DatasetWithMask(data.values, data.mask, rng.permutation(data.labels), data.norm)
    return data


def synthetic_classification(n=300, d=4, classes=2, separation=3.0, seed=0):
    """Gaussian blobs with class means spread along random directions."""
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((classes, d))
    centers *= separation / max(np.linalg.norm(centers, axis=1).min(), 1e-9)
    labels = np.arange(n) % classes
    x = centers[labels] + rng.standard_normal((n, d))
    return DatasetWithMask(x, np.zeros_like(x, dtype=bool), labels)


# --------------------------------------------------------------------------
# model construction


def _density(train, k, cfg, seed):
    gamma = cfg.density.get("gamma", DEFAULT_GAMMA)
    return em_fit(train, min(k, train.n), seed=seed, max_iter=cfg.density.get("em_iter", 100),
                  gamma=gamma)


def _classifier_layers(family, method, hp, n_classes):
    if family == "mlp":
        first = "generalized-relu" if method == "generalized" else "dense"
        widths = hp["hidden"]
        layers = [nn.LayerSpec(first, widths[0], "relu")]
        layers += [nn.LayerSpec("dense", w, "relu") for w in widths[1:]]
    else:
        first = "generalized-rbf" if method == "generalized" else "rbf"
        layers = [nn.LayerSpec(first, hp["units"])]
    layers.append(nn.LayerSpec("dense", n_classes, "softmax"))
    return layers


def _complete_for_init(data):
    """Mean-filled copy used to draw RBF centers."""
    from .density import mean_impute

    return mean_impute(np.where(data.mask, 0.0, data.values), data.mask)


def fit_classifier(cfg, family, method, hp, train, seed, n_classes):
    """Train one classifier on ``train``; returns (model, transform) where
    transform maps a data set to the model's input."""
    tcfg = cfg.train_config(seed=seed)
    layers = _classifier_layers(family, method, hp, n_classes)
    if method == "generalized":
        density = _density(train, hp["k"], cfg, seed)
        model = nn.NetworkModel.build(train.d, layers, "cross-entropy", density=density, seed=seed,
                                      init_data=_complete_for_init(train))
        result = nn.train(model, train, tcfg)
        return result.model, (lambda d: d)
    opts = {"seed": seed}
    if method == "gmm-sample":
        opts["n_components"] = hp["k"]
    if method == "knn":
        opts["k"] = cfg.options.get("knn_k", 5)
    imp = imputers.fit(method, train, **opts)
    filled, _ = imp.transform_data(train)
    model = nn.NetworkModel.build(train.d, layers, "cross-entropy", seed=seed,
                                  init_data=filled.values)
    result = nn.train(model, filled, tcfg)
    return result.model, (lambda d: imp.transform_data(d)[0])


def _accuracy(model, data):
    return nn.accuracy(model, data.values, data.mask, data.labels)


def _grid(cfg, family, method):
    arch = cfg.architecture
    ks = cfg.density.get("k", [2, 3, 5])
    ks = ks if isinstance(ks, list) else [ks]
    if family == "mlp":
        base = [{"hidden": list(arch.get("hidden", [128, 128, 128]))}]
    else:
        units = arch.get("units", [25, 50, 75, 100])
        base = [{"units": u} for u in (units if isinstance(units, list) else [units])]
    if method in ("generalized", "gmm-sample"):
        return [dict(b, k=k) for b in base for k in ks]
    return base


def _normalized(train, test, scheme):
    if scheme in (None, "none"):
        return train, test
    tn = normalize(train, scheme)
    return tn, apply_normalization(test, tn.norm)


def _score(cfg, family, method, hp, train, test, seed, n_classes):
    scheme = cfg.dataset.get("normalize", "zscore")
    tr, te = _normalized(train, test, scheme)
    model, transform = fit_classifier(cfg, family, method, hp, tr, seed, n_classes)
    return _accuracy(model, transform(te))


def double_cv(cfg, family, method, data, seed):
    """Outer folds score; inner folds on each outer training part pick the
    hyperparameters (ties go to the earlier grid entry)."""
    cv = cfg.cv
    outer = cv.get("outer", 5)
    inner = cv.get("inner", 5)
    strat = cv.get("stratified", True)
    n_classes = int(data.labels.max()) + 1
    grid = _grid(cfg, family, method)
    folds = []
    for f, (tr_idx, te_idx) in enumerate(kfold_split(data, outer, strat, seed)):
        train, test = data.subset(tr_idx), data.subset(te_idx)
        chosen, inner_scores = grid[0], []
        if len(grid) > 1 and inner >= 2:
            splits = kfold_split(train, inner, strat, seed + 1000 + f)
            for hp in grid:
                accs = [_score(cfg, family, method, hp, train.subset(a), train.subset(b),
                               seed + 17 * f + i, n_classes)
                        for i, (a, b) in enumerate(splits)]
                inner_scores.append(float(np.mean(accs)))
            chosen = grid[int(np.argmax(inner_scores))]
        acc = _score(cfg, family, method, chosen, train, test, seed + 31 * f, n_classes)
        majority = float(np.max(np.bincount(test.labels, minlength=n_classes)) / test.n)
        folds.append({"fold": f, "accuracy": acc, "majority": majority, "selected": chosen,
                      "inner_scores": inner_scores, "n_test": int(test.n)})
    return folds


def _classify(cfg, family):
    t0 = time.perf_counter()
    data = load_dataset(cfg)
    if data.labels is None:
        raise ConfigError("classification needs a label column")
    runs = []
    for m in cfg.mask:
        policy = MaskPolicy(**{"seed": cfg.seed, **m})
        masked = apply_mask(data, policy)
        for method in cfg.methods:
            folds = double_cv(cfg, family, method, masked, cfg.seed)
            runs.append({"method": method, "mask": policy.to_dict(), "mask_label": _mask_label(policy),
                         "missing_fraction": masked.missing_fraction(), "folds": folds,
                         "aggregate": aggregate(folds)})
    return make_report(cfg, runs, time.perf_counter() - t0,
                       {"dataset_summary": {"rows": data.n, "attributes": data.d,
                                            "missing_fraction": data.missing_fraction(),
                                            "normalize": cfg.dataset.get("normalize", "zscore")}})


def run_mlp_classify(cfg):
    return _classify(cfg, "mlp")


def run_rbfn_classify(cfg):
    return _classify(cfg, "rbfn")


# --------------------------------------------------------------------------
# autoencoder


def region_errors(recon, truth, inside):
    """Squared error split by region.

    ``inside``/``outside`` follow the convention where each region's summed
    squared error is divided by the total pixel count, so they add up to
    ``total``; ``*_mean`` are per-region averages.
    """
    sq = (recon - truth) ** 2
    n = sq.size
    n_in = int(inside.sum())
    e_in = float(sq[inside].sum())
    e_out = float(sq[~inside].sum())
    return {
        "total": (e_in + e_out) / n,
        "inside": e_in / n,
        "outside": e_out / n,
        "inside_mean": e_in / n_in if n_in else 0.0,
        "outside_mean": e_out / (n - n_in) if n - n_in else 0.0,
        "inside_fraction": n_in / n,
    }


def write_pgm(path, image, width, height):
    """8-bit binary PGM (P5) from values in [0, 1]."""
    pix = np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fh.write(pix.reshape(height, width).tobytes())


def read_pgm(path):
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w), maxval


def _ae_layers(cfg, method, d):
    arch = cfg.architecture
    hidden = list(arch.get("hidden", AE_HIDDEN))
    first = arch.get("first", "generalized-relu" if method == "generalized" else "dense")
    hidden_act = arch.get("hidden_activation", "sigmoid")
    first_act = arch.get("first_activation", "relu")
    out_act = arch.get("output_activation", "sigmoid")
    if method != "generalized" and first.startswith("generalized"):
        first = "dense"
    layers = [nn.LayerSpec(first, hidden[0], first_act)] if hidden else []
    layers += [nn.LayerSpec("dense", w, hidden_act) for w in hidden[1:]]
    layers.append(nn.LayerSpec("dense", d, out_act))
    return layers


def run_autoencoder(cfg):
    t0 = time.perf_counter()
    data = load_dataset(cfg)
    grid = cfg.dataset.get("grid", [28, 28])
    n_test = cfg.dataset.get("n_test", max(1, data.n // 5))
    if n_test >= data.n:
        raise ConfigError("n_test must be smaller than the data set")
    perm = np.random.default_rng(cfg.seed).permutation(data.n)
    truth_test = data.subset(np.sort(perm[:n_test]))
    truth_train = data.subset(np.sort(perm[n_test:]))
    runs = []
    pgm_dir = cfg.options.get("pgm_dir")
    n_pgm = cfg.options.get("pgm_count", 8)
    for m in cfg.mask:
        policy = MaskPolicy(**{"seed": cfg.seed, **m})
        if policy.kind == "patch" and data.d != policy.grid_h * policy.grid_w:
            raise ConfigError("patch masking needs grid-shaped data")
        train = apply_mask(truth_train, policy)
        test = apply_mask(truth_test, MaskPolicy(**{**policy.to_dict(), "seed": policy.seed + 1}))
        for method in cfg.methods:
            layers = _ae_layers(cfg, method, data.d)
            tcfg = cfg.train_config()
            if method == "generalized":
                k = cfg.density.get("k", 3)
                k = k[0] if isinstance(k, list) else k
                density = _density(train, k, cfg, cfg.seed)
                model = nn.NetworkModel.build(data.d, layers, "masked-mse", density=density,
                                              seed=cfg.seed)
                trained = nn.train(model, train, tcfg).model
                recon = nn.forward_batch(trained, test.values, test.mask)
            else:
                opts = {"seed": cfg.seed}
                if method == "knn":
                    opts["k"] = cfg.options.get("knn_k", 5)
                imp = imputers.fit(method, train, **opts)
                filled_train, _ = imp.transform_data(train)
                filled_test, _ = imp.transform_data(test)
                model = nn.NetworkModel.build(data.d, layers, "masked-mse", seed=cfg.seed)
                # loss only on pixels observed in the incomplete input
                trained = nn.train(model, filled_train, tcfg, target_values=train.values,
                                   target_mask=train.mask).model
                recon = nn.forward_batch(trained, filled_test.values, filled_test.mask)
            errs = region_errors(recon, truth_test.values, test.mask)
            if pgm_dir:
                out = Path(pgm_dir)
                out.mkdir(parents=True, exist_ok=True)
                gh, gw = grid
                for i in range(min(n_pgm, test.n)):
                    masked_img = np.where(test.mask[i], 0.5, test.values[i])
                    panel = np.concatenate([truth_test.values[i].reshape(gh, gw),
                                            masked_img.reshape(gh, gw),
                                            recon[i].reshape(gh, gw)], axis=1)
                    write_pgm(out / f"{method}_{_mask_label(policy)}_{i:03d}.pgm", panel,
                              3 * gw, gh)
            fold = {"fold": 0, "n_train": int(train.n), "n_test": int(test.n), **errs}
            runs.append({"method": method, "mask": policy.to_dict(), "mask_label": _mask_label(policy),
                         "missing_fraction": train.missing_fraction(), "folds": [fold],
                         "aggregate": aggregate([fold])})
    return make_report(cfg, runs, time.perf_counter() - t0)


# --------------------------------------------------------------------------
# toy density


TOY_CENTERS = np.array([[-2.0, 2.0], [2.0, -2.0], [-2.0, -2.0], [2.0, 2.0]])
TOY_LABELS = np.array([0, 0, 1, 1])


def toy_data(n, seed, std=0.6, missing_rate=0.5):
    """Four Gaussians, XOR-like labels; x1 is removed from a random share of
    the points with x1 < 0."""
    rng = np.random.default_rng(seed)
    comp = rng.integers(0, 4, n)
    x = TOY_CENTERS[comp] + std * rng.standard_normal((n, 2))
    mask = np.zeros((n, 2), dtype=bool)
    mask[:, 0] = (x[:, 0] < 0) & (rng.random(n) < missing_rate)
    truth = DatasetWithMask(x, np.zeros_like(mask), TOY_LABELS[comp])
    return DatasetWithMask(np.where(mask, np.nan, x), mask, TOY_LABELS[comp]), truth


def initial_toy_density(train, k, seed, gamma):
    """Starting mixture: EM on the mean-filled training data."""
    return em_fit(train, k, seed=seed, max_iter=50, gamma=gamma)


def run_toy_density(cfg):
    t0 = time.perf_counter()
    ds = cfg.dataset
    n_train, n_test = ds.get("n_train", 800), ds.get("n_test", 800)
    rate = ds.get("missing_rate", 0.5)
    train, _ = toy_data(n_train, cfg.seed, missing_rate=rate)
    test, _ = toy_data(n_test, cfg.seed + 1, missing_rate=rate)
    k = cfg.density.get("k", 2)
    k = k[0] if isinstance(k, list) else k
    gamma = cfg.density.get("gamma", DEFAULT_GAMMA)
    init = initial_toy_density(train, k, cfg.seed, gamma)
    hidden = cfg.architecture.get("hidden", [16, 16])
    layers = [nn.LayerSpec("generalized-relu", hidden[0])]
    layers += [nn.LayerSpec("dense", w, "relu") for w in hidden[1:]]
    layers.append(nn.LayerSpec("dense", 2, "softmax"))
    model = nn.NetworkModel.build(2, layers, "cross-entropy", density=init, seed=cfg.seed)
    train_cfg = {"epochs": 200, "lr": 1e-2, "batch_size": 32, **cfg.train}
    untrained = _accuracy(model, test)
    joint = nn.train(model, train, cfg.train_config(**train_cfg)).model
    frozen = nn.train(model, train, cfg.train_config(**{**train_cfg, "gmm_lr_scale": 0.0})).model
    miss_rows = test.mask.any(axis=1)
    fold = {
        "fold": 0,
        "accuracy_joint": _accuracy(joint, test),
        "accuracy_frozen": _accuracy(frozen, test),
        "accuracy_untrained": untrained,
        "accuracy_joint_incomplete": _accuracy(joint, test.subset(np.flatnonzero(miss_rows))),
        "accuracy_frozen_incomplete": _accuracy(frozen, test.subset(np.flatnonzero(miss_rows))),
    }
    snapshots = {"initial": init.to_dict(), "final": joint.density.to_dict()}
    if cfg.out:
        base = Path(cfg.out)
        base.parent.mkdir(parents=True, exist_ok=True)
        init.save(base.with_suffix(".initial_density.json"))
        joint.density.save(base.with_suffix(".final_density.json"))
    runs = [{"method": "generalized", "mask": {"kind": "toy", "missing_rate": rate},
             "mask_label": "x1<0", "missing_fraction": train.missing_fraction(),
             "folds": [fold], "aggregate": aggregate([fold])}]
    return make_report(cfg, runs, time.perf_counter() - t0, {"density_snapshots": snapshots})


RUNNERS = {
    "autoencoder": run_autoencoder,
    "mlp-classify": run_mlp_classify,
    "rbfn-classify": run_rbfn_classify,
    "toy-density": run_toy_density,
}


def run(cfg):
    return RUNNERS[cfg.experiment](cfg)


__all__ = [
    "ExperimentConfig", "run", "run_autoencoder", "run_mlp_classify", "run_rbfn_classify",
    "run_toy_density", "emit_report", "read_report", "report_table", "region_errors",
    "write_pgm", "read_pgm", "toy_data", "double_cv", "aggregate", "synthetic_classification",
]
