"""Training, evaluation, prediction and the ablation matrix."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geomgraph as gg
from .config import RunConfig, ablation_configs
from .errors import CheckpointError, ContractError, DataError, EquiLLMError, NumericalError
from .lm import freeze_fingerprint
from .model import Batch, EquiLLM, Sample, attach_prompts, collate
from .numerics import Adam, backward, load_into, no_grad, read_checkpoint, save_checkpoint
from .numerics.tensor import parameters_finite
from .tasks import DesignPrediction, compute_aar, compute_rmsd, design_loss, mse_loss

logger = logging.getLogger(__name__)


# -- data ----------------------------------------------------------------------------
def generate_dataset(config: RunConfig) -> list:
    if config.task == "dynamics":
        return gg.gen_spring_dataset(
            config.n_trajectories,
            config.seed,
            n_nodes=config.n_nodes,
            n_steps=config.n_steps,
            dt=config.dt,
            stiffness=config.stiffness,
            mean_degree=config.mean_degree,
        )
    return gg.gen_residue_dataset(config.n_structures, config.n_residues, config.seed)


def load_or_generate(config: RunConfig) -> list:
    if config.dataset:
        path = Path(config.dataset)
        if not path.exists():
            raise DataError(f"dataset not found: {path}")
        return gg.load_dataset(path)
    return generate_dataset(config)


def split_indices(n: int, seed: int) -> dict[str, np.ndarray]:
    """Seeded 8:1:1 split of item indices into train / val / test."""
    perm = np.random.default_rng(seed).permutation(n)
    n_val = n // 10
    n_test = n // 10
    n_train = n - n_val - n_test
    return {
        "train": np.sort(perm[:n_train]),
        "val": np.sort(perm[n_train : n_train + n_val]),
        "test": np.sort(perm[n_train + n_val :]),
    }


def trajectory_samples(trajs: list, indices, config: RunConfig) -> list[Sample]:
    samples = []
    for k in indices:
        traj = trajs[int(k)]
        for w in gg.sample_windows(traj, config.T, config.windows_per_trajectory, config.seed * 100003 + int(k), horizon=config.F):
            samples.append(Sample(w.inputs, traj.skeleton.node_features, traj.skeleton.edges, targets=w.targets))
    return samples


def residue_sample(res: gg.ResidueStructure, observed: np.ndarray) -> Sample:
    g = gg.residue_graph(res, observed)
    return Sample(
        g.coords[None],
        g.node_features,
        g.edges,
        targets=res.backbone.reshape(1, -1, 3),
        categories=res.categories,
        backbone=res.backbone,
    )


def residue_samples(structs: list, indices, config: RunConfig) -> list[Sample]:
    samples = []
    for k in indices:
        res = structs[int(k)]
        rng = np.random.default_rng(config.seed * 100003 + int(k))
        observed = res.backbone + rng.standard_normal(res.backbone.shape) * config.input_noise
        samples.append(residue_sample(res, observed))
    return samples


def build_splits(config: RunConfig, data: list) -> dict[str, list[Sample]]:
    split = split_indices(len(data), config.seed)
    make = trajectory_samples if config.task == "dynamics" else residue_samples
    out = {name: make(data, idx, config) for name, idx in split.items()}
    for samples in out.values():
        attach_prompts(samples, config)
    return out


def batches(samples: list[Sample], batch_size: int, order=None) -> list[Batch]:
    order = range(len(samples)) if order is None else order
    order = list(order)
    return [collate([samples[i] for i in order[s : s + batch_size]]) for s in range(0, len(order), batch_size)]


def in_features_of(samples: list[Sample]) -> int:
    return samples[0].features.shape[1]


# -- objectives -----------------------------------------------------------------------
def batch_loss(model: EquiLLM, batch: Batch, config: RunConfig):
    """Loss tensor and per-batch statistics for ``batch``."""
    out = model(batch)
    if config.task == "dynamics":
        loss = mse_loss(out.coords, batch.targets)
        return loss, out, {"mse": float(loss.data)}
    pred = DesignPrediction(out.logits, out.coords.reshape(-1, 4, 3))
    rep = design_loss(pred, (batch.categories, batch.backbone), config.lam, config.delta)
    return rep.total, out, {"loss": rep.value, **rep.components}


def evaluate_samples(model: EquiLLM, samples: list[Sample], config: RunConfig) -> dict:
    """Metrics over ``samples`` without touching any parameter."""
    if not samples:
        raise DataError("cannot evaluate on an empty split")
    with no_grad():
        if config.task == "dynamics":
            sq = np.zeros(config.F)
            count = 0
            for b in batches(samples, config.batch_size):
                out = model(b)
                err = (out.coords.data - b.targets) ** 2
                sq += err.sum(axis=(1, 2))
                count += err.shape[1] * err.shape[2]
            per_frame = sq / count
            return {"mse": float(per_frame.mean()), "mse_per_frame": per_frame.tolist(), "n_samples": len(samples)}
        cats, gts, preds, bbs = [], [], [], []
        total = 0.0
        for b in batches(samples, config.batch_size):
            loss, out, stats = batch_loss(model, b, config)
            total += stats["loss"] * b.n_graphs
            pred = DesignPrediction(out.logits, out.coords.reshape(-1, 4, 3))
            cats.append(pred.categories)
            gts.append(b.categories)
            preds.append(pred.backbone_pred.data)
            bbs.append(b.backbone)
        return {
            "loss": total / len(samples),
            "aar": compute_aar(np.concatenate(cats), np.concatenate(gts)),
            "rmsd": compute_rmsd(np.concatenate(preds), np.concatenate(bbs)),
            "n_samples": len(samples),
        }


def _objective(metrics: dict, config: RunConfig) -> float:
    return metrics["mse"] if config.task == "dynamics" else metrics["loss"]


# -- training -------------------------------------------------------------------------
@dataclass
class RunResult:
    report: dict
    model: EquiLLM
    splits: dict[str, list[Sample]] = field(default_factory=dict)


def train_run(config: RunConfig, data: list | None = None, out_dir: str | Path | None = None) -> RunResult:
    """Train the configured model with Adam on the training split.

    The recorded ``train_loss`` series starts with the full-split loss at
    initialization and adds the full-split loss after every epoch.
    """
    t0 = time.perf_counter()
    data = load_or_generate(config) if data is None else data
    splits = build_splits(config, data)
    if not splits["train"]:
        raise DataError("training split is empty")
    model = EquiLLM(config, in_features_of(splits["train"]))
    groups = model.param_groups()
    opt = Adam(groups, lr=config.lr)
    fingerprint = freeze_fingerprint(model.lm) if model.lm is not None else None

    train = splits["train"]
    history = [_objective(evaluate_samples(model, train, config), config)]
    rng = np.random.default_rng(config.seed)
    steps = 0
    done = False
    for epoch in range(config.epochs):
        for batch in batches(train, config.batch_size, rng.permutation(len(train))):
            opt.zero_grad()
            loss, _, _ = batch_loss(model, batch, config)
            if not np.isfinite(loss.data):
                bad = parameters_finite(opt.trainable())
                raise NumericalError(
                    f"non-finite loss at step {steps + 1}"
                    + (f"; first non-finite tensor: {bad}" if bad else "; all parameters finite")
                )
            backward(loss)
            bad = parameters_finite(opt.trainable())
            if bad:
                raise NumericalError(f"non-finite values in {bad} at step {steps + 1}")
            opt.step()
            steps += 1
            if config.max_steps and steps >= config.max_steps:
                done = True
                break
        history.append(_objective(evaluate_samples(model, train, config), config))
        logger.info("epoch %d  train loss %.6g", epoch + 1, history[-1])
        if done:
            break

    metrics = {name: evaluate_samples(model, samples, config) for name, samples in splits.items() if samples}
    report = {
        "config": config.to_dict(),
        "seed": config.seed,
        "table_row": config.table_row,
        "train_loss": history,
        "steps": steps,
        "metrics": metrics,
        "lm_fingerprint": None if fingerprint is None else f"{fingerprint:016x}",
        "wall_clock_s": time.perf_counter() - t0,
    }
    out_dir = out_dir or config.out_dir
    if out_dir:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out_dir / "checkpoint.npz", groups, config.to_dict())
        write_report(out_dir / "report.json", report)
    return RunResult(report, model, splits)


def write_report(path: str | Path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def load_model(checkpoint: str | Path, config: RunConfig | None = None) -> tuple[EquiLLM, RunConfig]:
    records, saved = read_checkpoint(checkpoint)
    if config is None:
        if saved is None:
            raise CheckpointError(f"{checkpoint} has no embedded config; pass one explicitly")
        config = RunConfig.from_dict(saved)
    enc_embed = next((r for r in records if r["group"] == "encoder" and r["name"] == "embed.layers.0.W"), None)
    if enc_embed is None:
        raise CheckpointError(f"{checkpoint} lacks the encoder embedding")
    extra = config.T - 1 if config.task == "dynamics" else 0
    in_features = enc_embed["shape"][0] - extra
    if in_features < 1:
        raise CheckpointError(f"checkpoint embedding width {enc_embed['shape'][0]} does not fit T={config.T}")
    model = EquiLLM(config, in_features)
    load_into(model.param_groups(), records)
    return model, config


def evaluate(checkpoint: str | Path, config: RunConfig | None = None, data: list | None = None, split: str = "test") -> dict:
    model, config = load_model(checkpoint, config)
    data = load_or_generate(config) if data is None else data
    splits = build_splits(config, data)
    if split not in splits:
        raise DataError(f"unknown split {split!r}")
    return {"config": config.to_dict(), "seed": config.seed, "split": split,
            "metrics": evaluate_samples(model, splits[split], config)}


# -- prediction -----------------------------------------------------------------------
def predict_samples(model: EquiLLM, samples: list[Sample], config: RunConfig) -> list:
    """Predicted frames ``(F, N, 3)`` per dynamics sample, or ``DesignPrediction`` per residue sample."""
    attach_prompts(samples, config)
    out = []
    with no_grad():
        for s in samples:
            res = model(collate([s]))
            if config.task == "dynamics":
                out.append(res.coords.data.copy())
            else:
                out.append(DesignPrediction(res.logits, res.coords.reshape(-1, 4, 3)))
    return out


def predict(checkpoint: str | Path, inputs: list, out_path: str | Path | None = None, config: RunConfig | None = None) -> list:
    """Predict for trajectories (last ``T`` frames used) or observed residue structures.

    Results are written in the dataset format when ``out_path`` is given:
    predicted frames as trajectories, or residue structures with the decoded
    categories and predicted backbone.
    """
    model, config = load_model(checkpoint, config)
    if config.task == "dynamics":
        samples = []
        for traj in inputs:
            if not isinstance(traj, gg.Trajectory):
                raise DataError("dynamics prediction needs trajectory inputs")
            if traj.n_frames < config.T:
                raise ContractError(f"input has {traj.n_frames} frames, model needs T={config.T}")
            samples.append(Sample(traj.frames[-config.T :], traj.skeleton.node_features, traj.skeleton.edges))
        preds = predict_samples(model, samples, config)
        results = [gg.Trajectory(p, traj.skeleton.with_coords(p[0])) for p, traj in zip(preds, inputs)]
    else:
        samples = []
        for res in inputs:
            if not isinstance(res, gg.ResidueStructure):
                raise DataError("design prediction needs residue-structure inputs")
            samples.append(residue_sample(res, res.backbone))
        preds = predict_samples(model, samples, config)
        results = [gg.ResidueStructure(p.categories, p.backbone_pred.data) for p in preds]
    if out_path is not None:
        gg.save_dataset(out_path, results)
    return results


# -- ablation -------------------------------------------------------------------------
def ablate(base: RunConfig, out_dir: str | Path, data: list | None = None, rows: list[str] | None = None) -> list[dict]:
    """Run every ablation variant on shared data and seed; failures are recorded per row."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = load_or_generate(base) if data is None else data
    results = []
    for slug, label, cfg in ablation_configs(base):
        if rows is not None and slug not in rows:
            continue
        logger.info("ablation row %s (%s)", slug, label)
        try:
            run = train_run(cfg, data=data, out_dir=out_dir / slug)
            results.append({"variant": slug, "label": label, "ok": True, "report": run.report})
        except EquiLLMError as exc:
            logger.error("ablation row %s failed: %s", slug, exc)
            results.append({"variant": slug, "label": label, "ok": False, "error": f"{type(exc).__name__}: {exc}",
                            "config": cfg.to_dict()})
    write_ablation_table(out_dir, results)
    return results


def _flat_metrics(result: dict) -> list[tuple[str, float]]:
    if not result["ok"]:
        return [("failed", float("nan"))]
    rep = result["report"]
    rows = [("train_loss_initial", rep["train_loss"][0]), ("train_loss_final", rep["train_loss"][-1])]
    for split, metrics in rep["metrics"].items():
        for key, value in metrics.items():
            if isinstance(value, (int, float)) and key != "n_samples":
                rows.append((f"{split}_{key}", float(value)))
    return rows


def write_ablation_table(out_dir: Path, results: list[dict]) -> None:
    with open(out_dir / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "seed", "metric", "value"])
        for r in results:
            seed = r["report"]["seed"] if r["ok"] else r["config"]["seed"]
            for name, value in _flat_metrics(r):
                writer.writerow([r["variant"], seed, name, repr(value)])
    lines = ["| variant | label | status | train loss (initial -> final) | test metric |", "|---|---|---|---|---|"]
    for r in results:
        if r["ok"]:
            rep = r["report"]
            test = rep["metrics"].get("test", {})
            key = "mse" if "mse" in test else "aar"
            metric = f"{key}={test[key]:.6g}" if key in test else "-"
            lines.append(f"| {r['variant']} | {r['label']} | ok | {rep['train_loss'][0]:.6g} -> {rep['train_loss'][-1]:.6g} | {metric} |")
        else:
            lines.append(f"| {r['variant']} | {r['label']} | failed: {r['error']} | - | - |")
    (out_dir / "ablation.md").write_text("\n".join(lines) + "\n")
