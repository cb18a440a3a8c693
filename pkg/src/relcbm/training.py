"""Joint concept+task optimization, evaluation metrics, interventions,
and the robustness protocols (feature corruption, OOD universe sizes,
supervision subsampling).

The objective is the two-term sum: concept loss over all labeled concept
atoms plus lambda times the task loss over all labeled task atoms.
Mutually exclusive task groups (declared by the dataset) are trained
with cross-entropy over their renormalized aggregated scores; everything
else uses binary cross-entropy.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import OptimizerState, Tensor, backward, loss_eval, optimizer_step, zero_grads
from .datasets import (
    NoiseSpec,
    RelationalDataset,
    SchemaMismatch,
    apply_noise,
    gen_hanoi,
    rps_rule_masks,
)
from .logic import Template, UniverseMismatch
from .models import ForwardResult, InterventionSet, Model, ModelConfig, Plan, build_model

log = logging.getLogger("relcbm")


class EmptyBatch(Exception):
    pass


class DegenerateLabels(Exception):
    pass


class SearchFailed(Exception):
    pass


@dataclass
class LossConfig:
    lam: float = 0.1          # weight of the task term
    concept_loss: str = "bce"
    task_loss: str = "bce"    # "ce" switches grouped tasks to cross-entropy

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")


@dataclass
class TrainConfig:
    epochs: int = 2000
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    seed: int = 0
    concept_cap: int | None = None  # per-concept supervision cap
    log_every: int = 200

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


# --- loss -------------------------------------------------------------------------

def _group_of(dataset: RelationalDataset, task: str) -> list[str] | None:
    for group in dataset.task_groups:
        if task in group:
            return group
    return None


def compute_loss(model: Model, plan: Plan, result: ForwardResult,
                 cfg: LossConfig, dataset: RelationalDataset) -> tuple[Tensor, float, float]:
    """Two-term objective; returns (total, concept part, task part) with
    the parts as plain floats for logging."""
    concept_term = Tensor(0.0)
    has_concepts = (model.config.uses_concepts and plan.concept_label_rows.size > 0)
    if has_concepts:
        preds = ad.gather(result.concept_scores, plan.concept_label_rows)
        concept_term = loss_eval(cfg.concept_loss, preds, Tensor(plan.concept_label_vals))

    task_terms: list[Tensor] = []
    handled: set[str] = set()
    n_task_labels = 0
    for name, tp in plan.task_plans.items():
        if name in handled or not tp.atoms:
            continue
        group = _group_of(dataset, name) if cfg.task_loss == "ce" else None
        if group:
            handled.update(group)
            members = [plan.task_plans[g] for g in group]
            for m in members[1:]:
                if m.atoms != members[0].atoms:
                    raise SchemaMismatch(f"task group {group} has misaligned query sets")
            n = len(members[0].atoms)
            stacked = ad.concat([ad.reshape(result.task_scores[g], (n, 1)) for g in group],
                                axis=1)
            row_sum = ad.reshape(ad.sum_reduce(stacked, axis=1), (n, 1))
            probs = ad.div(stacked, row_sum)
            class_idx = np.argmax(np.stack([plan.task_plans[g].labels for g in group], axis=1),
                                  axis=1)
            task_terms.append(loss_eval("ce", probs, class_idx))
            if model.config.aux_deep_head:
                aux = ad.concat([ad.reshape(result.aux_task_scores[g], (n, 1)) for g in group],
                                axis=1)
                aux_sum = ad.reshape(ad.sum_reduce(aux, axis=1), (n, 1))
                task_terms.append(loss_eval("ce", ad.div(aux, aux_sum), class_idx))
            n_task_labels += n * len(group)
        else:
            handled.add(name)
            task_terms.append(loss_eval("bce", result.task_scores[name], Tensor(tp.labels)))
            if model.config.aux_deep_head:
                task_terms.append(loss_eval("bce", result.aux_task_scores[name],
                                            Tensor(tp.labels)))
            n_task_labels += len(tp.atoms)

    if not has_concepts and n_task_labels == 0:
        raise EmptyBatch("batch has neither concept nor task labels")

    task_term = Tensor(0.0)
    for t in task_terms:
        task_term = task_term + t
    total = concept_term + Tensor(cfg.lam) * task_term
    return total, float(concept_term.data), float(task_term.data)


# --- metrics ------------------------------------------------------------------------

def roc_auc(scores, labels) -> float:
    """Mann-Whitney statistic with the tie convention (ties count half)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise DegenerateLabels("roc_auc needs both classes present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average rank, 1-based
        i = j + 1
    rank_sum = ranks[labels == 1].sum()
    return float((rank_sum - len(pos) * (len(pos) + 1) / 2) / (len(pos) * len(neg)))


def accuracy(predictions, labels) -> float:
    """Argmax match rate; 1-d predictions are thresholded at 0.5."""
    predictions = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels)
    if predictions.ndim == 2:
        return float(np.mean(np.argmax(predictions, axis=1) == labels))
    return float(np.mean((predictions > 0.5).astype(int) == labels))


def mrr(ranked_queries) -> float:
    """Mean reciprocal rank; rank = 1 + #strictly-greater + half the ties."""
    rr = []
    for scores, true_idx in ranked_queries:
        scores = np.asarray(scores, dtype=np.float64)
        s = scores[true_idx]
        rank = 1.0 + np.sum(scores > s) + 0.5 * (np.sum(scores == s) - 1)
        rr.append(1.0 / rank)
    if not rr:
        raise DegenerateLabels("mrr needs at least one query")
    return float(np.mean(rr))


def evaluate_metric(kind: str, predictions, labels) -> float:
    if kind == "roc_auc":
        return roc_auc(predictions, labels)
    if kind == "accuracy":
        return accuracy(predictions, labels)
    if kind == "mrr":
        return mrr(predictions)
    raise ValueError(f"unknown metric '{kind}'")


def evaluate_model(model: Model, dataset: RelationalDataset, split: str,
                   interventions: InterventionSet | None = None,
                   plan: Plan | None = None) -> dict[str, float]:
    """All applicable metrics on one split: pooled ROC-AUC, grouped
    accuracy where task groups are declared, and MRR for tasks whose
    queries rank a candidate last argument."""
    if plan is None:
        plan = model.compile(dataset, split)
    result = model.forward(plan, interventions)
    out: dict[str, float] = {}

    scores_all, labels_all = [], []
    for name, tp in plan.task_plans.items():
        if tp.atoms:
            scores_all.append(result.task_scores[name].data)
            labels_all.append(tp.labels)
    if scores_all:
        scores = np.concatenate(scores_all)
        labels = np.concatenate(labels_all)
        if labels.min() != labels.max():
            out["roc_auc"] = roc_auc(scores, labels)

    if dataset.task_groups:
        accs = []
        for group in dataset.task_groups:
            plans = [plan.task_plans[g] for g in group if g in plan.task_plans]
            if not plans or not plans[0].atoms:
                continue
            stacked = np.stack([result.task_scores[g].data for g in group], axis=1)
            true_idx = np.argmax(np.stack([plan.task_plans[g].labels for g in group], axis=1),
                                 axis=1)
            accs.append(accuracy(stacked, true_idx))
        if accs:
            out["accuracy"] = float(np.mean(accs))
    else:
        accs = [accuracy(result.task_scores[n].data, plan.task_plans[n].labels)
                for n, tp in plan.task_plans.items() if tp.atoms]
        if accs:
            out["accuracy"] = float(np.mean(accs))

    queries = []
    for name, tp in plan.task_plans.items():
        by_prefix: dict = {}
        for i, (wid, args) in enumerate(tp.atoms):
            by_prefix.setdefault((wid, args[:-1]), []).append(i)
        for idxs in by_prefix.values():
            seg_labels = tp.labels[idxs]
            if len(idxs) > 1 and seg_labels.sum() == 1:
                seg_scores = result.task_scores[name].data[idxs]
                queries.append((seg_scores, int(np.argmax(seg_labels))))
    if queries:
        out["mrr"] = mrr(queries)
    return out


# --- training loop ---------------------------------------------------------------------

@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=["epoch", "concept_loss", "task_loss",
                                                    "val_metric"])
            writer.writeheader()
            writer.writerows(self.rows)


def train(model: Model, dataset: RelationalDataset, train_cfg: TrainConfig,
          loss_cfg: LossConfig) -> TrainLog:
    """Full-batch training to the configured epoch count; deterministic
    given the model/config seeds."""
    work = dataset
    if train_cfg.concept_cap is not None:
        work = subsample_concept_supervision(dataset, train_cfg.concept_cap, train_cfg.seed)
    plan = model.compile(work, "train")
    try:
        val_plan = model.compile(work, "val")
    except SchemaMismatch:
        val_plan = None
    state = OptimizerState(kind=train_cfg.optimizer, learning_rate=train_cfg.learning_rate)
    params = model.params()
    logbook = TrainLog()
    for epoch in range(1, train_cfg.epochs + 1):
        zero_grads(params)
        result = model.forward(plan)
        total, c_loss, t_loss = compute_loss(model, plan, result, loss_cfg, work)
        backward(total)
        optimizer_step(state, params)
        if epoch % train_cfg.log_every == 0 or epoch == train_cfg.epochs:
            val_metric = ""
            if val_plan is not None:
                metrics = evaluate_model(model, work, "val", plan=val_plan)
                val_metric = metrics.get("roc_auc", metrics.get("accuracy", ""))
            logbook.rows.append({"epoch": epoch, "concept_loss": c_loss,
                                 "task_loss": t_loss, "val_metric": val_metric})
            log.info("epoch %d: concept_loss=%.5f task_loss=%.5f val=%s",
                     epoch, c_loss, t_loss, val_metric)
    return logbook


# --- interventions -----------------------------------------------------------------------

def intervene(model: Model, dataset: RelationalDataset, split: str,
              edits: InterventionSet):
    """Return a prediction function over the split with the edits applied
    (concept replacements first, then rule-mask overrides)."""
    plan = model.compile(dataset, split)

    def predict(task: str, world_id: int, args: tuple[str, ...]) -> float:
        return model.predict_atom(plan, task, world_id, args, interventions=edits)

    predict.plan = plan
    predict.result = model.forward(plan, edits)
    return predict


def ground_truth_concept_edits(dataset: RelationalDataset, split: str) -> InterventionSet:
    """Concept edits setting every labeled concept atom of the split's
    worlds to its oracle value."""
    edits = InterventionSet()
    for w in dataset.worlds:
        if w.split != split:
            continue
        for (pred, args), y in w.concept_labels.items():
            edits.concept_edits[(w.id, pred, args)] = float(y)
    return edits


def add_rps_rule_edits(edits: InterventionSet, dataset: RelationalDataset,
                       split: str) -> InterventionSet:
    """Attach the game's ground-truth (relevance, polarity) masks for
    every RPS task atom of the split."""
    for w in dataset.worlds:
        if w.split != split:
            continue
        for (task, args) in w.task_labels:
            r, s = rps_rule_masks(w, task, args)
            edits.rule_edits[(w.id, task, args)] = (r, s)
    return edits


def corrupt_features(dataset: RelationalDataset, model: Model, seed: int,
                     target_low: float = 0.4, target_high: float = 0.6,
                     start_amplitude: float = 0.25, max_doublings: int = 20,
                     split: str = "test"):
    """Search a uniform noise amplitude (by doubling) until the trained
    encoder mispredicts the target fraction of concept labels on the
    split; returns (corrupted dataset, amplitude, measured error)."""
    amplitude = start_amplitude
    for _ in range(max_doublings):
        spec = NoiseSpec(-amplitude, amplitude, seed)
        corrupted = apply_noise(dataset, spec)
        err = concept_error(model, corrupted, split)
        if target_low <= err <= target_high:
            return corrupted, amplitude, err
        amplitude *= 2.0
    raise SearchFailed(f"no amplitude reached concept error in "
                       f"[{target_low}, {target_high}] after {max_doublings} doublings")


def concept_error(model: Model, dataset: RelationalDataset, split: str) -> float:
    """Fraction of labeled concept atoms mispredicted at threshold 0.5."""
    plan = model.compile(dataset, split)
    if plan.concept_label_rows.size == 0:
        raise EmptyBatch(f"no labeled concept atoms in split '{split}'")
    result = model.forward(plan)
    preds = result.concept_scores.data[plan.concept_label_rows] > 0.5
    return float(np.mean(preds.astype(int) != plan.concept_label_vals))


# --- supervision protocols ----------------------------------------------------------------

def subsample_concept_supervision(dataset: RelationalDataset, per_concept_cap: int,
                                  seed: int) -> RelationalDataset:
    """Keep at most `per_concept_cap` labeled concept atoms per concept
    across the training worlds, balanced between positives and negatives
    where available.  Task labels and other splits are untouched."""
    if per_concept_cap < 1:
        raise ValueError("per_concept_cap must be >= 1")
    rng = np.random.default_rng(seed)
    out = dataset.copy()
    train_worlds = [w for w in out.worlds if w.split == "train"]
    for sig in out.concepts():
        pos, neg = [], []
        for w in train_worlds:
            for (pred, args), y in w.concept_labels.items():
                if pred == sig.name:
                    (pos if y else neg).append((w.id, args))
        rng.shuffle(pos)
        rng.shuffle(neg)
        n_pos = min(len(pos), (per_concept_cap + 1) // 2)
        n_neg = min(len(neg), per_concept_cap - n_pos)
        n_pos = min(len(pos), per_concept_cap - n_neg)
        keep = set(pos[:n_pos]) | set(neg[:n_neg])
        for w in train_worlds:
            w.concept_labels = {
                (pred, args): y for (pred, args), y in w.concept_labels.items()
                if pred != sig.name or (w.id, args) in keep
            }
    return out


def mask_supervision(dataset: RelationalDataset, fraction: float,
                     seed: int) -> RelationalDataset:
    """Keep concept and task labels only for `fraction` of each training
    world's entities (the node-classification supervision mask)."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    rng = np.random.default_rng(seed)
    out = dataset.copy()
    for w in out.worlds:
        if w.split != "train":
            continue
        n_keep = max(1, int(round(fraction * len(w.entities))))
        keep = set(rng.choice(len(w.entities), size=n_keep, replace=False).tolist())
        keep_names = {w.entities[i] for i in keep}
        w.concept_labels = {k: y for k, y in w.concept_labels.items()
                            if all(a in keep_names for a in k[1])}
        w.task_labels = {k: y for k, y in w.task_labels.items()
                         if all(a in keep_names for a in k[1])}
    return out


# --- experiment protocols --------------------------------------------------------------------

def ood_protocol(make_model, train_dataset: RelationalDataset, train_cfg: TrainConfig,
                 loss_cfg: LossConfig, test_sizes=(3, 4, 5, 6, 7),
                 n_test_worlds: int = 50, test_seed: int = 991) -> list[dict]:
    """Train once on the given dataset, then evaluate on fresh universes
    of increasing size; fixed-layout models report N/A once the universe
    size changes."""
    model = make_model()
    train(model, train_dataset, train_cfg, loss_cfg)
    curve = []
    for k in test_sizes:
        test_ds = gen_hanoi(n_test_worlds, k, seed=test_seed + k, split="test")
        try:
            metrics = evaluate_model(model, test_ds, "test")
            curve.append({"disks": k, "roc_auc": metrics["roc_auc"], "status": "ok"})
        except UniverseMismatch as e:
            curve.append({"disks": k, "roc_auc": "NA", "status": f"UniverseMismatch: {e}"})
    return curve


def data_efficiency_protocol(dataset: RelationalDataset, templates: list[Template],
                             model_kinds, fractions, train_cfg: TrainConfig,
                             loss_cfg: LossConfig, seeds=(0,),
                             aggregator: str = "max") -> list[dict]:
    """Retrain every model kind at every supervision fraction; reports
    test accuracy per cell."""
    rows = []
    for fraction in fractions:
        for kind in model_kinds:
            for seed in seeds:
                masked = mask_supervision(dataset, fraction, seed=train_cfg.seed + 17)
                config = ModelConfig(kind=kind, aggregator=aggregator, seed=seed)
                model = build_model(masked, templates, config)
                cfg = TrainConfig(epochs=train_cfg.epochs, optimizer=train_cfg.optimizer,
                                  learning_rate=train_cfg.learning_rate, seed=seed,
                                  log_every=train_cfg.log_every)
                train(model, masked, cfg, loss_cfg)
                metrics = evaluate_model(model, masked, "test")
                rows.append({"model": kind, "fraction": fraction, "seed": seed,
                             "accuracy": metrics.get("accuracy")})
    return rows


# --- artifact emission -------------------------------------------------------------------------

def write_metrics_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
