"""Model assembly: encoder + templates + per-task predictors, compiled
against a dataset into flat index arrays for full-batch training.

A compiled plan enumerates, per world, every ground concept atom (the
score table) and, per task atom, the grounding rows of its template
body.  One forward pass embeds all entities, scores all concept atoms,
gathers per-grounding bodies, runs the task predictors, and reduces each
task atom's grounding scores with the aggregator.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .datasets import RelationalDataset, SchemaMismatch, World
from .encoders import ConceptEncoder, EncoderConfig, EntityEmbedder, harden_concepts
from .logic import (
    CONCEPT,
    TASK,
    FlatTemplate,
    PredicateSig,
    Substitution,
    Template,
    build_flat_template,
    build_self_template,
    enumerate_substitutions,
)
from .predictors import (
    Aggregator,
    DCRPredictor,
    DeepPredictor,
    EmptyGroundingSet,
    EntityTuplePredictor,
    ExtractedRule,
    FlatPredictor,
    LinearPredictor,
    NotDCR,
    aggregate,
    aggregate_segments,
    crispen_rule,
)

MODEL_KINDS = (
    "cbm_linear", "cbm_deep", "dcr",
    "r_cbm_linear", "r_cbm_deep", "r_dcr", "r_dcr_low",
    "flat_cbm", "black_box_ff", "black_box_rel",
)

_NON_RELATIONAL = ("cbm_linear", "cbm_deep", "dcr", "black_box_ff")
_BLACK_BOX = ("black_box_ff", "black_box_rel")
_DCR_KINDS = ("dcr", "r_dcr", "r_dcr_low")


class UnknownAtom(Exception):
    pass


@dataclass
class ModelConfig:
    kind: str
    aggregator: str = "max"
    emb_dim: int = 16
    concept_hidden: int = 32
    task_hidden: int = 32
    dcr_hidden: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind '{self.kind}'")

    @property
    def uses_concepts(self) -> bool:
        return self.kind not in _BLACK_BOX

    @property
    def is_dcr(self) -> bool:
        return self.kind in _DCR_KINDS

    @property
    def hard_concepts(self) -> bool:
        return self.kind == "r_dcr_low"

    @property
    def aux_deep_head(self) -> bool:
        return self.kind == "r_dcr_low"


@dataclass
class InterventionSet:
    """Test-time edits: concept scores per ground atom, and forced
    (relevance, polarity) rule masks per ground task atom on the
    rule-generating predictors."""

    concept_edits: dict[tuple[int, str, tuple[str, ...]], float] = field(default_factory=dict)
    rule_edits: dict[tuple[int, str, tuple[str, ...]], tuple[np.ndarray, np.ndarray]] = field(
        default_factory=dict)


@dataclass
class TaskPlan:
    name: str
    atoms: list[tuple[int, tuple[str, ...]]]   # (world id, head args)
    labels: np.ndarray                         # [n_atoms]
    body_rows: np.ndarray | None               # [G, p] concept-table rows
    seg_starts: np.ndarray                     # [n_atoms] grounding segment starts
    ent_rows: np.ndarray                       # [G, n_head + w] entity rows
    extra_entities: list[tuple[str, ...]]      # per grounding, the bound extra entities
    atom_index: dict[tuple[int, tuple[str, ...]], int] = field(default_factory=dict)

    @property
    def n_groundings(self) -> int:
        return len(self.ent_rows)

    def segment(self, i: int) -> tuple[int, int]:
        lo = int(self.seg_starts[i])
        hi = int(self.seg_starts[i + 1]) if i + 1 < len(self.seg_starts) else self.n_groundings
        return lo, hi


@dataclass
class Plan:
    worlds: list[World]
    features: np.ndarray                       # [N_ent, d]
    ent_row: dict[tuple[int, str], int]
    concept_arg_rows: dict[str, np.ndarray]    # per concept, [n_atoms, arity]
    concept_offsets: dict[str, int]
    atom_rows: dict[tuple[int, str, tuple[str, ...]], int]
    n_atom_rows: int
    concept_label_rows: np.ndarray             # rows with labels usable for the loss
    concept_label_vals: np.ndarray
    task_plans: dict[str, TaskPlan]
    split: str

    def concept_row(self, world_id: int, pred: str, args: tuple[str, ...]) -> int:
        key = (world_id, pred, args)
        if key not in self.atom_rows:
            raise UnknownAtom(f"{pred}{args} not in world {world_id}")
        return self.atom_rows[key]


@dataclass
class ForwardResult:
    concept_scores: Tensor | None              # soft scores, [n_atom_rows]
    concept_scores_used: Tensor | None         # after hardening/interventions
    task_scores: dict[str, Tensor]             # per task, [n_atoms]
    grounding_scores: dict[str, Tensor]        # per task, [G]
    dcr_rules: dict[str, tuple[Tensor, Tensor]]
    aux_task_scores: dict[str, Tensor] = field(default_factory=dict)


class Model:
    """A concept encoder plus one task predictor per task predicate."""

    def __init__(self, schema: list[PredicateSig], templates: list[Template],
                 feature_dim: int, config: ModelConfig,
                 flat_universe_size: int | None = None):
        self.schema = list(schema)
        self.config = config
        self.feature_dim = feature_dim
        self.concept_sigs = [s for s in schema if s.kind == CONCEPT]
        self.task_sigs = [s for s in schema if s.kind == TASK]
        rng = np.random.default_rng(config.seed)

        if config.kind in _NON_RELATIONAL:
            self.templates = {t.name: build_self_template(schema, t) for t in self.task_sigs}
        else:
            self.templates = {t.task_name: t for t in templates}
            missing = [t.name for t in self.task_sigs if t.name not in self.templates]
            if config.kind != "flat_cbm" and missing:
                raise SchemaMismatch(f"no template for tasks {missing}")

        self.flat_templates: dict[str, FlatTemplate] = {}
        if config.kind == "flat_cbm":
            if flat_universe_size is None:
                raise SchemaMismatch("flat model needs the training universe size")
            universe = [f"_{i}" for i in range(flat_universe_size)]
            for t in self.task_sigs:
                self.flat_templates[t.name] = build_flat_template(schema, universe, task=t)

        if config.uses_concepts:
            self.encoder = ConceptEncoder(
                schema, feature_dim, rng,
                EncoderConfig(emb_dim=config.emb_dim, concept_hidden=config.concept_hidden))
            self.embedder = self.encoder.embedder
        else:
            self.encoder = None
            self.embedder = EntityEmbedder(feature_dim, config.emb_dim, rng)

        self.aggregator = Aggregator(config.aggregator)
        self.predictors = {}
        self.aux_predictors = {}
        for sig in self.task_sigs:
            prefix = f"task.{sig.name}"
            if config.kind == "flat_cbm":
                flat = self.flat_templates[sig.name]
                self.predictors[sig.name] = FlatPredictor(
                    flat.body_size, flat.universe_size, rng, prefix)
                continue
            tpl = self.templates[sig.name]
            p = tpl.body_size
            if config.kind == "black_box_ff":
                self.predictors[sig.name] = EntityTuplePredictor(
                    len(tpl.head_vars), config.emb_dim, rng, prefix, hidden=config.task_hidden)
            elif config.kind == "black_box_rel":
                self.predictors[sig.name] = EntityTuplePredictor(
                    len(tpl.head_vars) + tpl.width, config.emb_dim, rng, prefix,
                    hidden=config.task_hidden)
            elif config.kind.endswith("linear"):
                self.predictors[sig.name] = LinearPredictor(p, rng, prefix)
            elif config.kind.endswith("deep"):
                self.predictors[sig.name] = DeepPredictor(p, rng, prefix, hidden=config.task_hidden)
            elif config.is_dcr:
                self.predictors[sig.name] = DCRPredictor(
                    p, config.emb_dim, rng, prefix, hidden=config.dcr_hidden)
            else:  # pragma: no cover
                raise ValueError(config.kind)
            if config.aux_deep_head:
                self.aux_predictors[sig.name] = DeepPredictor(
                    p, rng, f"aux.{sig.name}", hidden=config.task_hidden)

    # -- parameters -----------------------------------------------------------

    def params(self) -> list[Parameter]:
        out = (self.encoder.params() if self.encoder is not None
               else self.embedder.params())
        for name in sorted(self.predictors):
            out.extend(self.predictors[name].params())
        for name in sorted(self.aux_predictors):
            out.extend(self.aux_predictors[name].params())
        return out

    def parameter_count(self) -> int:
        return sum(p.tensor.data.size for p in self.params())

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for p in self.params():
            if p.name not in state:
                raise KeyError(f"checkpoint misses parameter '{p.name}'")
            if state[p.name].shape != p.tensor.data.shape:
                raise SchemaMismatch(f"parameter '{p.name}': checkpoint shape "
                                     f"{state[p.name].shape} != {p.tensor.data.shape}")
            p.tensor.data = state[p.name].copy()

    # -- grounding compilation --------------------------------------------------

    def compile(self, dataset: RelationalDataset, split: str) -> Plan:
        if dataset.feature_dim != self.feature_dim:
            raise SchemaMismatch(f"model expects feature dim {self.feature_dim}, "
                                 f"dataset has {dataset.feature_dim}")
        self._check_schema(dataset)
        worlds = [w for w in dataset.worlds
                  if w.split == split or any(s == split for s in w.task_splits.values())]
        if not worlds:
            raise SchemaMismatch(f"dataset has no '{split}' worlds")

        ent_row: dict[tuple[int, str], int] = {}
        feats = []
        for w in worlds:
            for i, e in enumerate(w.entities):
                ent_row[(w.id, e)] = len(feats) + i
            feats.extend(w.features)
        features = np.asarray(feats, dtype=np.float64)

        concept_arg_rows: dict[str, np.ndarray] = {}
        concept_offsets: dict[str, int] = {}
        atom_rows: dict[tuple[int, str, tuple[str, ...]], int] = {}
        offset = 0
        if self.config.uses_concepts:
            for sig in self.concept_sigs:
                rows = []
                concept_offsets[sig.name] = offset
                for w in worlds:
                    for combo in itertools.product(w.entities, repeat=sig.arity):
                        atom_rows[(w.id, sig.name, combo)] = offset + len(rows)
                        rows.append([ent_row[(w.id, e)] for e in combo])
                concept_arg_rows[sig.name] = np.asarray(rows, dtype=np.int64)
                offset += len(rows)

        label_rows, label_vals = [], []
        if self.config.uses_concepts:
            for w in worlds:
                if w.split != split:
                    continue  # per-atom-split worlds contribute labels to their own split only
                for (pred, args), y in w.concept_labels.items():
                    key = (w.id, pred, args)
                    if key in atom_rows:
                        label_rows.append(atom_rows[key])
                        label_vals.append(float(y))

        task_plans = {}
        for sig in self.task_sigs:
            task_plans[sig.name] = self._compile_task(sig, worlds, split, ent_row, atom_rows)

        return Plan(worlds=worlds, features=features, ent_row=ent_row,
                    concept_arg_rows=concept_arg_rows, concept_offsets=concept_offsets,
                    atom_rows=atom_rows, n_atom_rows=offset,
                    concept_label_rows=np.asarray(label_rows, dtype=np.int64),
                    concept_label_vals=np.asarray(label_vals, dtype=np.float64),
                    task_plans=task_plans, split=split)

    def _check_schema(self, dataset: RelationalDataset) -> None:
        declared = {(s.name, s.kind, s.arity) for s in dataset.schema}
        for s in self.schema:
            if (s.name, s.kind, s.arity) not in declared:
                raise SchemaMismatch(f"model predicate {s.name}/{s.arity} ({s.kind}) "
                                     "not declared by the dataset")

    def _compile_task(self, sig: PredicateSig, worlds: list[World], split: str,
                      ent_row, atom_rows) -> TaskPlan:
        atoms: list[tuple[int, tuple[str, ...]]] = []
        labels: list[float] = []
        body_rows: list[list[int]] = []
        seg_starts: list[int] = []
        ent_rows: list[list[int]] = []
        extra_entities: list[tuple[str, ...]] = []
        flat = self.flat_templates.get(sig.name)
        tpl = self.templates.get(sig.name)

        for w in worlds:
            keys = sorted(k for k in w.task_labels if k[0] == sig.name)
            for key in keys:
                if w.task_split(key) != split:
                    continue
                _, args = key
                atoms.append((w.id, args))
                labels.append(float(w.task_labels[key]))
                seg_starts.append(len(ent_rows))
                if flat is not None:
                    ground = flat.ground_body(args, list(w.entities))
                    body_rows.append(
                        [atom_rows[(w.id, a.predicate.name, tuple(t.entity_id for t in a.args))]
                         for a in ground])
                    ent_rows.append([ent_row[(w.id, e)] for e in args])
                    extra_entities.append(())
                    continue
                head_binding = Substitution(dict(zip(tpl.head_vars, args)))
                guard = None
                if tpl.guard_spec is not None:
                    edges = w.relations.get(tpl.guard_spec.relation) \
                        if tpl.guard_spec.kind == "relation" else None
                    guard = tpl.guard_spec.bind(edges)
                thetas = enumerate_substitutions(tpl, list(w.entities), guard=guard,
                                                 head_binding=head_binding)
                if len(thetas) == 0:
                    raise EmptyGroundingSet(f"{sig.name}{args} in world {w.id}: "
                                            "guard left no groundings")
                for theta in thetas:
                    full = {**head_binding.bindings, **theta.bindings}
                    if self.config.uses_concepts:
                        body_rows.append(
                            [atom_rows[(w.id, a.predicate.name,
                                        tuple(full[t.name] for t in a.args))]
                             for a in tpl.body])
                    ent_rows.append([ent_row[(w.id, full[v])]
                                     for v in tuple(tpl.head_vars) + tpl.extra_vars])
                    extra_entities.append(tuple(theta.bindings[u] for u in tpl.extra_vars))

        plan = TaskPlan(
            name=sig.name, atoms=atoms,
            labels=np.asarray(labels, dtype=np.float64),
            body_rows=np.asarray(body_rows, dtype=np.int64) if body_rows else None,
            seg_starts=np.asarray(seg_starts, dtype=np.int64),
            ent_rows=np.asarray(ent_rows, dtype=np.int64),
            extra_entities=extra_entities,
            atom_index={a: i for i, a in enumerate(atoms)})
        return plan

    # -- forward ------------------------------------------------------------------

    def forward(self, plan: Plan, interventions: InterventionSet | None = None) -> ForwardResult:
        emb = self.embedder.forward(Tensor(plan.features))

        concept_scores = None
        used_scores = None
        embed_table = None
        if self.config.uses_concepts:
            score_parts, emb_parts = [], []
            for sig in self.concept_sigs:
                rows = plan.concept_arg_rows[sig.name]
                cols = [ad.gather(emb, rows[:, k]) for k in range(sig.arity)]
                arg_embs = cols[0] if len(cols) == 1 else ad.concat(cols, axis=1)
                scores, embs = self.encoder.heads[sig.name].forward(arg_embs)
                score_parts.append(scores)
                emb_parts.append(embs)
            concept_scores = ad.concat(score_parts, axis=0)
            embed_table = ad.concat(emb_parts, axis=0)
            used_scores = (harden_concepts(concept_scores)
                           if self.config.hard_concepts else concept_scores)
            if interventions is not None and interventions.concept_edits:
                mask = np.zeros(plan.n_atom_rows)
                vals = np.zeros(plan.n_atom_rows)
                for (wid, pred, args), value in interventions.concept_edits.items():
                    row = plan.concept_row(wid, pred, args)
                    mask[row] = 1.0
                    vals[row] = float(value)
                used_scores = used_scores * Tensor(1.0 - mask) + Tensor(vals)
        elif interventions is not None and interventions.concept_edits:
            raise UnknownAtom("concept interventions need a concept-bottleneck model")

        task_scores, grounding_scores, dcr_rules, aux_scores = {}, {}, {}, {}
        for sig in self.task_sigs:
            tp = plan.task_plans[sig.name]
            if not tp.atoms:
                continue
            predictor = self.predictors[sig.name]
            if isinstance(predictor, EntityTuplePredictor):
                g, k = tp.ent_rows.shape
                ent_embs = ad.reshape(ad.gather(emb, tp.ent_rows.reshape(-1)),
                                      (g, k * self.config.emb_dim))
                gscores = predictor.forward(ent_embs)
            else:
                g, p = tp.body_rows.shape
                body = ad.reshape(ad.gather(used_scores, tp.body_rows.reshape(-1)), (g, p))
                if isinstance(predictor, DCRPredictor):
                    flat_embs = ad.gather(embed_table, tp.body_rows.reshape(-1))
                    override = self._rule_override(tp, interventions)
                    gscores = predictor.forward(body, flat_embs=flat_embs,
                                                rule_override=override)
                    dcr_rules[sig.name] = predictor.generate(flat_embs, g)
                else:
                    gscores = predictor.forward(body)
                if sig.name in self.aux_predictors:
                    aux_g = self.aux_predictors[sig.name].forward(body)
                    aux_scores[sig.name] = aggregate_segments(
                        self.aggregator, aux_g, tp.seg_starts)
            grounding_scores[sig.name] = gscores
            task_scores[sig.name] = aggregate_segments(self.aggregator, gscores, tp.seg_starts)

        return ForwardResult(concept_scores=concept_scores, concept_scores_used=used_scores,
                             task_scores=task_scores, grounding_scores=grounding_scores,
                             dcr_rules=dcr_rules, aux_task_scores=aux_scores)

    def _rule_override(self, tp: TaskPlan, interventions: InterventionSet | None):
        if interventions is None or not interventions.rule_edits:
            return None
        p = self.templates[tp.name].body_size
        mask = np.zeros((tp.n_groundings, p))
        r_force = np.zeros((tp.n_groundings, p))
        s_force = np.zeros((tp.n_groundings, p))
        touched = False
        for (wid, task, args), (r, s) in interventions.rule_edits.items():
            if task != tp.name:
                continue
            if (wid, args) not in tp.atom_index:
                raise UnknownAtom(f"{task}{args} not in plan world {wid}")
            lo, hi = tp.segment(tp.atom_index[(wid, args)])
            mask[lo:hi] = 1.0
            r_force[lo:hi] = np.asarray(r, dtype=np.float64)
            s_force[lo:hi] = np.asarray(s, dtype=np.float64)
            touched = True
        return (mask, r_force, s_force) if touched else None

    # -- single-query paths ----------------------------------------------------------

    def predict_atom(self, plan: Plan, task: str, world_id: int, args: tuple[str, ...],
                     interventions: InterventionSet | None = None) -> float:
        """Batched-path score of one ground task atom."""
        result = self.forward(plan, interventions)
        tp = plan.task_plans[task]
        if (world_id, args) not in tp.atom_index:
            raise UnknownAtom(f"{task}{args} not in plan world {world_id}")
        return float(result.task_scores[task].data[tp.atom_index[(world_id, args)]])

    def predict_single(self, dataset: RelationalDataset, world: World, task: str,
                       args: tuple[str, ...]) -> float:
        """Grounding-by-grounding score of one task atom (reference path)."""
        single = RelationalDataset(schema=dataset.schema, worlds=[world],
                                   feature_dim=dataset.feature_dim,
                                   generator=dataset.generator,
                                   task_groups=dataset.task_groups,
                                   relation_names=dataset.relation_names)
        plan = self.compile(single, world.task_split((task, args)))
        result = self.forward(plan)
        tp = plan.task_plans[task]
        idx = tp.atom_index[(world.id, args)]
        lo, hi = tp.segment(idx)
        per_grounding = [float(result.grounding_scores[task].data[i]) for i in range(lo, hi)]
        return float(aggregate(self.aggregator, Tensor(np.asarray(per_grounding))).item())

    def extract_rule(self, plan: Plan, task: str, world_id: int, args: tuple[str, ...],
                     crisp_threshold: float = 0.5,
                     result: ForwardResult | None = None) -> ExtractedRule:
        """Read the generated rule off the grounding that won the max."""
        if not isinstance(self.predictors[task], DCRPredictor):
            raise NotDCR(f"model kind '{self.config.kind}' does not generate rules")
        if result is None:
            result = self.forward(plan)
        tp = plan.task_plans[task]
        if (world_id, args) not in tp.atom_index:
            raise UnknownAtom(f"{task}{args} not in plan world {world_id}")
        idx = tp.atom_index[(world_id, args)]
        lo, hi = tp.segment(idx)
        seg = result.grounding_scores[task].data[lo:hi]
        best = lo + int(np.argmax(seg))
        r, s = result.dcr_rules[task]
        tpl = self.templates[task]
        theta = Substitution(dict(zip(tpl.extra_vars, tp.extra_entities[best])))
        return crispen_rule(tpl, r.data[best], s.data[best], theta, crisp_threshold)


def build_model(dataset: RelationalDataset, templates: list[Template],
                config: ModelConfig) -> Model:
    """Instantiate a model of the configured kind against a dataset's schema."""
    flat_size = None
    if config.kind == "flat_cbm":
        train_worlds = [w for w in dataset.worlds if w.split == "train"] or dataset.worlds
        sizes = {len(w.entities) for w in train_worlds}
        if len(sizes) != 1:
            raise SchemaMismatch("flat model needs a uniform universe size, "
                                 f"got sizes {sorted(sizes)}")
        flat_size = sizes.pop()
    return Model(dataset.schema, templates, dataset.feature_dim, config,
                 flat_universe_size=flat_size)
