"""Experiment drivers: matched baseline / coordinate runs, feature-map dumps and the VAE probe.

Every driver returns a plain dict that validates against ``report_schema.json``.
Reports are written with sorted keys so two runs with the same configuration
differ only in ``wall_clock_seconds``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .coords import append_coords
from .data import DatasetSplit, MnistData, degrade_resolution, load_mnist, split_indices, translate
from .errors import ConfigError, ShapeError
from .imageio import write_png
from .models import Network, NetworkSpec, VaeSpec, build_classifier, build_vae, joint_position_matrix, \
    vae_loss_from_logits
from .nn.layers import Conv2d, ReLU
from .nn.tensor import STREAM_TEST, RngState
from .train import TrainConfig, evaluate, train, train_vae

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EXPERIMENTS = ("mnist", "resolution", "translation", "vae")
SHIFT_STEPS = (-4, -2, 0, 2, 4)
DEFAULT_SHIFTS = tuple((dx, dy) for dy in SHIFT_STEPS for dx in SHIFT_STEPS)
DEFAULT_EPOCHS = {"train": 3, "mnist": 3, "resolution": 3, "translation": 3, "vae": 5}
# training images used when --subset is not given (None = the whole 45k train split)
DEFAULT_TRAIN_COUNT = {"train": None, "mnist": None, "resolution": 10000, "translation": None, "vae": 5000}
SUBSET_EVAL_COUNT = 1000
POOL_SIZE = 50000
VAE_SAMPLES = 8

# published figures, stored next to (never instead of) the measured values
REFERENCE = {
    "train": {},
    "mnist": {"coord_test_accuracy": 0.9984},
    "resolution": {"coord_test_accuracy": 0.9826, "baseline_test_accuracy": 0.9632},
    "translation": {"claim": "coordinate variant keeps recognising translated digits; no figure given"},
    "vae": {"claim": "summed reconstructed position channels resemble the input digit; qualitative only"},
}


@dataclass
class ExperimentConfig:
    seeds: tuple[int, ...] = (1,)
    epochs: int | None = None
    batch_size: int = 64
    lr: float = 1e-3
    optimizer: str = "adam"
    precision: str = "f32"
    subset: int | None = None
    test_subset: int | None = None
    val_count: int = 5000
    patience: int = 5
    hidden_width: int = 1024
    shifts: tuple[tuple[int, int], ...] = DEFAULT_SHIFTS
    feature_samples: int = 16
    tau: float = 1e-6
    vae_latent: int = 16
    vae_beta: float = 1.0

    def resolved(self, experiment: str) -> "ExperimentConfig":
        epochs = DEFAULT_EPOCHS[experiment] if self.epochs is None else self.epochs
        subset = DEFAULT_TRAIN_COUNT[experiment] if self.subset is None else self.subset
        cfg = replace(self, epochs=epochs, subset=subset, seeds=tuple(int(s) for s in self.seeds),
                      shifts=tuple((int(a), int(b)) for a, b in self.shifts))
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.subset is not None and self.subset < 1:
            raise ConfigError("--subset must be positive")
        if self.test_subset is not None and self.test_subset < 1:
            raise ConfigError("--test-subset must be positive")
        if self.feature_samples < 1 or self.tau < 0:
            raise ConfigError("feature_samples must be positive and tau non-negative")
        for dx, dy in self.shifts:
            if abs(dx) >= 28 or abs(dy) >= 28:
                raise ConfigError(f"shift ({dx}, {dy}) leaves nothing of a 28x28 image")

    def eval_count(self, explicit_subset: bool) -> int | None:
        if self.test_subset is not None:
            return self.test_subset
        return SUBSET_EVAL_COUNT if explicit_subset else None

    def echo(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        d["shifts"] = [list(s) for s in self.shifts]
        return d


def canonical_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def load_schema() -> dict:
    return json.loads(resources.files("xycoord").joinpath("report_schema.json").read_text())


def validate_report(report: dict) -> None:
    import jsonschema

    jsonschema.validate(report, load_schema())


def write_report(report: dict, path: str | Path) -> Path:
    validate_report(report)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    return path


def artifact_dir(report_path: str | Path) -> Path:
    p = Path(report_path)
    return p.parent / f"{p.stem}_artifacts"


class _Artifacts:
    """Collects artifact files and records them relative to the report's directory."""

    def __init__(self, report_path: str | Path | None):
        self.base = None if report_path is None else Path(report_path).parent
        self.root = None if report_path is None else artifact_dir(report_path)
        self.paths: list[str] = []

    @property
    def enabled(self) -> bool:
        return self.root is not None

    def path(self, *parts: str) -> Path | None:
        if self.root is None:
            return None
        p = self.root.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def add(self, p: Path | None) -> str:
        if p is None:
            return ""
        rel = p.relative_to(self.base).as_posix()
        self.paths.append(rel)
        return rel


def _median(values) -> float:
    return float(np.median(np.asarray(values, dtype=np.float64)))


@dataclass
class SeedData:
    train: DatasetSplit
    validation: DatasetSplit
    test: DatasetSplit
    split_hash: str


def _split(data: MnistData, seed: int, cfg: ExperimentConfig):
    total = len(data.train_labels)
    return split_indices(total, seed, cfg.val_count, min(POOL_SIZE, total))


def _seed_data(data: MnistData, cfg: ExperimentConfig, seed: int, explicit_subset: bool) -> SeedData:
    train_idx, val_idx = _split(data, seed, cfg)
    if cfg.subset is not None:
        train_idx = train_idx[:cfg.subset]
    eval_count = cfg.eval_count(explicit_subset)
    if eval_count is not None:
        val_idx = val_idx[:eval_count]
    h = hashlib.sha256(train_idx.astype("<i8").tobytes())
    h.update(val_idx.astype("<i8").tobytes())
    return SeedData(
        DatasetSplit("train", data.train_images[train_idx], data.train_labels[train_idx]),
        DatasetSplit("validation", data.train_images[val_idx], data.train_labels[val_idx]),
        data.test_split(eval_count),
        h.hexdigest(),
    )


def _train_config(cfg: ExperimentConfig, seed: int, use_coords: bool) -> TrainConfig:
    return TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr, optimizer=cfg.optimizer,
                       seed=seed, use_coords=use_coords, precision=cfg.precision, patience=cfg.patience)


def shared_config_hash(tc: TrainConfig) -> str:
    """Hash of everything the two variants must share (all but the coordinate switch and file paths)."""
    d = tc.to_dict()
    d.pop("use_coords")
    d.pop("checkpoint_path")
    return canonical_hash(d)


def _variant_name(use_coords: bool) -> str:
    return "coord" if use_coords else "baseline"


def train_variant(cfg: ExperimentConfig, seed: int, use_coords: bool, sd: SeedData, arts: _Artifacts,
                  tag: str = "") -> tuple[Network, dict]:
    tc = _train_config(cfg, seed, use_coords)
    spec = NetworkSpec(input_channels=3 if use_coords else 1, hidden_width=cfg.hidden_width,
                       precision=cfg.precision)
    net = build_classifier(spec, RngState(seed))
    log.info("training %s seed %d on %d images", _variant_name(use_coords), seed, len(sd.train))
    result = train(net, sd.train, sd.validation, tc)
    ckpt = arts.path("checkpoints", f"{tag}{_variant_name(use_coords)}_seed{seed}.ckpt")
    if ckpt is not None:
        save_checkpoint(net, ckpt)
    run = {
        "seed": seed,
        "config_hash": shared_config_hash(tc),
        "split_hash": sd.split_hash,
        "history": [r.to_dict() for r in result.history],
        "best_epoch": result.best_epoch,
        "stopped_early": result.stopped_early,
        "checkpoint": arts.add(ckpt),
        "test": evaluate(net, sd.test, use_coords).to_dict(),
    }
    return net, run


def _base_report(experiment: str, cfg: ExperimentConfig, extra_config: dict | None = None) -> dict:
    config = cfg.echo()
    if extra_config:
        config.update(extra_config)
    return {
        "schema_version": SCHEMA_VERSION,
        "experiment": experiment,
        "library_version": __version__,
        "config": config,
        "config_hash": canonical_hash(config),
        "seeds": list(cfg.seeds),
        "reference": dict(REFERENCE[experiment]),
        "artifacts": [],
        "observations": [],
        "wall_clock_seconds": 0.0,
    }


def _deltas(variants: dict) -> dict:
    per_seed = []
    for b, c in zip(variants["baseline"]["runs"], variants["coord"]["runs"]):
        per_seed.append({"seed": b["seed"], "accuracy": c["test"]["accuracy"] - b["test"]["accuracy"]})
    return {"per_seed": per_seed, "median_accuracy_delta": _median([d["accuracy"] for d in per_seed])}


def _check_fairness(variants: dict) -> None:
    for b, c in zip(variants["baseline"]["runs"], variants["coord"]["runs"]):
        same = (b["config_hash"] == c["config_hash"] and b["split_hash"] == c["split_hash"]
                and [e["batch_order_hash"] for e in b["history"]] == [e["batch_order_hash"] for e in c["history"]])
        if not same:
            raise ConfigError(f"seed {b['seed']}: baseline and coord runs diverged in config, split or batch order")


def _counts(sd: SeedData) -> dict:
    return {"train_count": len(sd.train), "validation_count": len(sd.validation), "test_count": len(sd.test)}


def _get_data(data: MnistData | None, data_dir) -> MnistData:
    return data if data is not None else load_mnist(data_dir)


def _paired(experiment: str, cfg: ExperimentConfig, data: MnistData, out, per_run=None,
            transform_train=None) -> dict:
    """Train baseline and coord networks for each seed on identical data; ``per_run`` adds extra results."""
    explicit_subset = cfg.subset is not None
    cfg = cfg.resolved(experiment)
    arts = _Artifacts(out)
    variants = {name: {"input_channels": ch, "runs": []} for name, ch in (("baseline", 1), ("coord", 3))}
    counts = {}
    for seed in cfg.seeds:
        sd = _seed_data(data, cfg, seed, explicit_subset)
        if transform_train is not None:
            sd = SeedData(sd.train.map_images(transform_train), sd.validation.map_images(transform_train),
                          sd.test, sd.split_hash)
        counts = _counts(sd)
        for use_coords in (False, True):
            net, run = train_variant(cfg, seed, use_coords, sd, arts)
            if per_run is not None:
                per_run(net, run, use_coords, sd, arts, cfg)
            variants[_variant_name(use_coords)]["runs"].append(run)
    for v in variants.values():
        v["median_test_accuracy"] = _median([r["test"]["accuracy"] for r in v["runs"]])
    _check_fairness(variants)
    report = _base_report(experiment, cfg, counts)
    report["variants"] = variants
    report["deltas"] = _deltas(variants)
    report["artifacts"] = arts.paths
    return report


def _feature_probe(net, run, use_coords, sd, arts, cfg):
    samples = sd.test.images[:cfg.feature_samples]
    out_dir = arts.path("features", f"{_variant_name(use_coords)}_seed{run['seed']}") if arts.enabled else None
    dump = dump_feature_maps(net, samples, "conv1", cfg.tau, out_dir)
    run["blank_feature_maps"] = dump.blank_count
    for p in dump.paths:
        arts.add(p)


def exp_mnist(cfg: ExperimentConfig, data: MnistData | None = None, out=None, data_dir=None) -> dict:
    t0 = time.perf_counter()
    report = _paired("mnist", cfg, _get_data(data, data_dir), out, per_run=_feature_probe)
    v = report["variants"]
    report["observations"].append(
        f"median test accuracy: coord {v['coord']['median_test_accuracy']:.4f}, "
        f"baseline {v['baseline']['median_test_accuracy']:.4f}")
    for b, c in zip(v["baseline"]["runs"], v["coord"]["runs"]):
        nb, nc = b["blank_feature_maps"], c["blank_feature_maps"]
        report["observations"].append(
            f"seed {b['seed']}: blank first-layer maps baseline {nb}, coord {nc}; baseline >= coord: {nb >= nc}")
    report["wall_clock_seconds"] = round(time.perf_counter() - t0, 3)
    return report


def _degraded_probe(net, run, use_coords, sd, arts, cfg):
    run["degraded_test"] = evaluate(net, sd.test.map_images(degrade_resolution), use_coords).to_dict()


def exp_resolution(cfg: ExperimentConfig, data: MnistData | None = None, out=None, data_dir=None) -> dict:
    """Train on resolution-degraded images, test on the original ones."""
    t0 = time.perf_counter()
    report = _paired("resolution", cfg, _get_data(data, data_dir), out, per_run=_degraded_probe,
                     transform_train=degrade_resolution)
    for run in report["variants"]["coord"]["runs"]:
        matched, mismatched = run["degraded_test"]["accuracy"], run["test"]["accuracy"]
        report["observations"].append(
            f"seed {run['seed']}: coord accuracy on degraded test {matched:.4f} vs original {mismatched:.4f}; "
            f"within 2 pp sanity bound: {matched >= mismatched - 0.02}")
    d = report["deltas"]["median_accuracy_delta"]
    report["observations"].append(f"median coord - baseline test accuracy: {100 * d:+.2f} pp")
    report["wall_clock_seconds"] = round(time.perf_counter() - t0, 3)
    return report


def _translation_probe(net, run, use_coords, sd, arts, cfg):
    rows = []
    for dx, dy in cfg.shifts:
        shifted = sd.test.map_images(lambda im: translate(im, dx, dy))
        rows.append({"dx": dx, "dy": dy, "accuracy": evaluate(net, shifted, use_coords).accuracy})
    run["translation"] = rows


def exp_translation(cfg: ExperimentConfig, data: MnistData | None = None, out=None, data_dir=None) -> dict:
    t0 = time.perf_counter()
    report = _paired("translation", cfg, _get_data(data, data_dir), out, per_run=_translation_probe)
    v = report["variants"]
    per_shift = []
    for i, (dx, dy) in enumerate(report["config"]["shifts"]):
        deltas = [c["translation"][i]["accuracy"] - b["translation"][i]["accuracy"]
                  for b, c in zip(v["baseline"]["runs"], v["coord"]["runs"])]
        per_shift.append({"dx": dx, "dy": dy, "median_accuracy_delta": _median(deltas)})
    report["deltas"]["per_shift"] = per_shift
    for name in ("baseline", "coord"):
        for run in v[name]["runs"]:
            zero = [r for r in run["translation"] if r["dx"] == 0 and r["dy"] == 0]
            if zero:
                report["observations"].append(
                    f"{name} seed {run['seed']}: shift (0,0) equals base test accuracy: "
                    f"{zero[0]['accuracy'] == run['test']['accuracy']}")
    moved = [p["median_accuracy_delta"] for p in per_shift if (p["dx"], p["dy"]) != (0, 0)]
    if moved:
        m = float(np.mean(moved))
        report["observations"].append(
            f"mean coord - baseline accuracy over non-zero shifts: {100 * m:+.2f} pp "
            f"(coord better: {m > 0}); logged, not gated")
    report["wall_clock_seconds"] = round(time.perf_counter() - t0, 3)
    return report


@dataclass
class FeatureMapDump:
    layer: str
    activation: str
    maps: np.ndarray  # [F,H,W], first sample
    variances: list[float]
    tau: float
    blank_count: int
    paths: list[Path] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"layer": self.layer, "activation": self.activation, "tau": self.tau,
                "variances": self.variances, "blank_count": self.blank_count,
                "filter_count": len(self.variances), "images": [p.as_posix() for p in self.paths]}


def dump_feature_maps(checkpoint, samples: np.ndarray, layer: str = "conv1", tau: float = 1e-6,
                      out_dir: str | Path | None = None) -> FeatureMapDump:
    """Activation maps of one layer over a sample batch.

    For a convolution followed by a ReLU the rectified output is used, since
    that is what the next layer sees. A filter is blank when its activation
    variance over the whole batch is below ``tau``.
    """
    net = checkpoint if isinstance(checkpoint, Network) else load_checkpoint(checkpoint)
    if not isinstance(net, Network):
        raise ConfigError("feature maps need a classifier checkpoint")
    names = net.layer_names
    if layer not in names:
        raise ConfigError(f"unknown layer {layer!r}; available layers: {', '.join(names)}")
    x = np.asarray(samples)
    if x.ndim == 3:
        x = x[None]
    if x.shape[1] == 1 and net.spec.input_channels == 3:
        x = append_coords(x)
    x = net._check_input(x)
    layers = net.net.layers
    stop = names.index(layer)
    if isinstance(layers[stop], Conv2d) and stop + 1 < len(layers) and isinstance(layers[stop + 1], ReLU):
        stop += 1
    for l in layers[:stop + 1]:
        x = l.forward(x)
    if x.ndim != 4:
        raise ShapeError(f"layer {layer!r} does not produce 2-D feature maps (output {x.shape})")
    acts = x.astype(np.float64)
    variances = [float(v) for v in acts.var(axis=(0, 2, 3))]
    blank = sum(v < tau for v in variances)
    paths = []
    if out_dir is not None:
        out_dir = Path(out_dir)
        for f in range(acts.shape[1]):
            paths.append(write_png(out_dir / f"{layer}_filter{f:02d}.png", acts[0, f]))
    return FeatureMapDump(layer, layers[stop].name, acts[0], variances, tau, int(blank), paths)


def mask_correlation(joint: np.ndarray, image: np.ndarray, threshold: float = 0.5) -> float | None:
    """Pearson correlation of the mean-removed joint matrix with the binarized digit; None if undefined."""
    a = np.asarray(joint, dtype=np.float64).ravel()
    b = (np.asarray(image, dtype=np.float64).ravel() > threshold).astype(np.float64)
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    if denom == 0:
        return None
    return float((a * b).sum() / denom)


def _vae_eval_loss(vae, x3, eps, beta) -> float:
    losses = []
    for s in range(0, len(x3), 500):
        t = vae.forward(x3[s:s + 500], eps[s:s + 500])
        losses.append(vae_loss_from_logits(t.logits, x3[s:s + 500], t.mu, t.logvar, beta) * len(t.mu))
    return float(sum(losses) / len(x3))


def exp_vae(cfg: ExperimentConfig, data: MnistData | None = None, out=None, data_dir=None) -> dict:
    """Train the 3-channel VAE per seed; export input / reconstruction triplets and joint position images."""
    t0 = time.perf_counter()
    data = _get_data(data, data_dir)
    cfg = cfg.resolved("vae")
    arts = _Artifacts(out)
    samples = data.test_images[:VAE_SAMPLES]
    runs = []
    for seed in cfg.seeds:
        train_idx, _ = _split(data, seed, cfg)
        x3 = append_coords(data.train_images[train_idx[:cfg.subset]])
        vae = build_vae(VaeSpec(latent_dim=cfg.vae_latent, precision=cfg.precision), RngState(seed))
        probe = x3[:SUBSET_EVAL_COUNT]
        eps = RngState(seed).stream(STREAM_TEST).standard_normal((len(probe), cfg.vae_latent)).astype(vae.dtype)
        initial = _vae_eval_loss(vae, probe, eps, cfg.vae_beta)
        history = train_vae(vae, x3, cfg.epochs, cfg.batch_size, cfg.lr, seed, cfg.vae_beta)
        final = _vae_eval_loss(vae, probe, eps, cfg.vae_beta)
        ckpt = arts.path("checkpoints", f"vae_seed{seed}.ckpt")
        if ckpt is not None:
            save_checkpoint(vae, ckpt)
        s3 = append_coords(samples)
        # exported reconstructions decode the posterior mean
        trace = vae.forward(s3, np.zeros((len(s3), cfg.vae_latent), vae.dtype))
        correlations = []
        for i in range(len(s3)):
            joint = joint_position_matrix(trace.recon[i, 1], trace.recon[i, 2])
            correlations.append(mask_correlation(joint, s3[i, 0]))
            if arts.enabled:
                for c, cname in enumerate(("image", "x", "y")):
                    arts.add(write_png(arts.path(f"vae_seed{seed}", f"input{i}_{cname}.png"), s3[i, c], rescale=False))
                    arts.add(write_png(arts.path(f"vae_seed{seed}", f"recon{i}_{cname}.png"), trace.recon[i, c],
                                       rescale=False))
                arts.add(write_png(arts.path(f"vae_seed{seed}", f"joint{i}.png"), joint, rescale=False))
        runs.append({
            "seed": seed,
            "initial_loss": initial,
            "epoch_losses": [h.loss for h in history],
            "final_loss": final,
            "mask_correlation": correlations,
            "checkpoint": arts.add(ckpt),
        })
    report = _base_report("vae", cfg, {"train_count": len(x3), "sample_count": VAE_SAMPLES})
    report["vae"] = {"runs": runs}
    for r in runs:
        el = r["epoch_losses"]
        if el:
            report["observations"].append(
                f"seed {r['seed']}: loss {r['initial_loss']:.2f} untrained, epoch 1 {el[0]:.2f}, "
                f"epoch {len(el)} {el[-1]:.2f}")
        corr = [c for c in r["mask_correlation"] if c is not None]
        if corr:
            report["observations"].append(
                f"seed {r['seed']}: median joint-matrix / digit-mask correlation {_median(corr):+.3f}")
    report["artifacts"] = arts.paths
    report["wall_clock_seconds"] = round(time.perf_counter() - t0, 3)
    return report


def run_train(cfg: ExperimentConfig, use_coords: bool, checkpoint: str | Path, data: MnistData | None = None,
              data_dir=None) -> dict:
    """Single-variant training run (first seed only) with the checkpoint at an explicit path."""
    t0 = time.perf_counter()
    explicit_subset = cfg.subset is not None
    cfg = cfg.resolved("train")
    data = _get_data(data, data_dir)
    seed = cfg.seeds[0]
    sd = _seed_data(data, cfg, seed, explicit_subset)
    arts = _Artifacts(None)
    net, run = train_variant(cfg, seed, use_coords, sd, arts)
    save_checkpoint(net, checkpoint)
    run["checkpoint"] = Path(checkpoint).name
    name = _variant_name(use_coords)
    report = _base_report("train", replace(cfg, seeds=(seed,)), {**_counts(sd), "use_coords": use_coords})
    report["variants"] = {name: {"input_channels": 3 if use_coords else 1, "runs": [run],
                                 "median_test_accuracy": run["test"]["accuracy"]}}
    report["wall_clock_seconds"] = round(time.perf_counter() - t0, 3)
    return report


RUNNERS = {"mnist": exp_mnist, "resolution": exp_resolution, "translation": exp_translation, "vae": exp_vae}
