"""Task predictors over grounded template bodies, plus rule extraction.

Every predictor maps one grounding's body (a length-p vector of concept
scores, plus per-atom embeddings for the rule-generating variant) to a
score in (0,1); an aggregator then reduces the per-grounding scores of a
task atom into its final prediction.  max reads as an existential
quantifier over the extra variables, min as a universal one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .logic import Atom, Substitution, Template

AGGREGATORS = ("max", "min")


class EmptyGroundingSet(Exception):
    pass


class MissingEmbeddings(Exception):
    pass


class NotDCR(Exception):
    pass


class DimMismatch(Exception):
    pass


@dataclass(frozen=True)
class Aggregator:
    kind: str  # "max" | "min"

    def __post_init__(self):
        if self.kind not in AGGREGATORS:
            raise ValueError(f"aggregator must be one of {AGGREGATORS}")


def aggregate(agg: Aggregator, scores: Tensor) -> Tensor:
    """Reduce a nonempty 1-d tensor of per-grounding scores to a scalar."""
    if scores.data.ndim != 1 or scores.data.size == 0:
        raise EmptyGroundingSet("aggregate needs a nonempty 1-d score list")
    return ad.max_reduce(scores) if agg.kind == "max" else ad.min_reduce(scores)


def aggregate_segments(agg: Aggregator, scores: Tensor, starts: np.ndarray) -> Tensor:
    """Batched aggregation: one reduction per contiguous segment."""
    return ad.segment_reduce(scores, starts, agg.kind)


def _init(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    return Tensor(rng.normal(scale=1.0 / np.sqrt(max(fan_in, 1)), size=shape))


class LinearPredictor:
    """sigmoid(W . body + w0); one weight per template body position."""

    def __init__(self, body_size: int, rng: np.random.Generator, prefix: str):
        self.body_size = body_size
        self.w = Parameter(f"{prefix}.w", _init(rng, body_size, (body_size, 1)))
        self.w0 = Parameter(f"{prefix}.w0", Tensor(np.zeros(1)))

    def forward(self, body: Tensor, **_) -> Tensor:
        if body.shape[1] != self.body_size:
            raise DimMismatch(f"expected body size {self.body_size}, got {body.shape[1]}")
        out = ad.sigmoid(ad.matmul(body, self.w.tensor) + self.w0.tensor)
        return ad.reshape(out, (body.shape[0],))

    def params(self):
        return [self.w, self.w0]


class DeepPredictor:
    """One-hidden-layer MLP with sigmoid output."""

    def __init__(self, body_size: int, rng: np.random.Generator, prefix: str, hidden: int = 32):
        self.body_size = body_size
        self.w1 = Parameter(f"{prefix}.w1", _init(rng, body_size, (body_size, hidden)))
        self.b1 = Parameter(f"{prefix}.b1", Tensor(np.zeros(hidden)))
        self.w2 = Parameter(f"{prefix}.w2", _init(rng, hidden, (hidden, 1)))
        self.b2 = Parameter(f"{prefix}.b2", Tensor(np.zeros(1)))

    def forward(self, body: Tensor, **_) -> Tensor:
        if body.shape[1] != self.body_size:
            raise DimMismatch(f"expected body size {self.body_size}, got {body.shape[1]}")
        h = ad.relu(ad.matmul(body, self.w1.tensor) + self.b1.tensor)
        out = ad.sigmoid(ad.matmul(h, self.w2.tensor) + self.b2.tensor)
        return ad.reshape(out, (body.shape[0],))

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]


def xnor(a, b):
    return a * b + (1.0 - a) * (1.0 - b)


class DCRPredictor:
    """Per-grounding rule generator and evaluator (Goedel semantics).

    Shared filter/sign heads map each body atom's concept embedding to a
    relevance r and a polarity s in (0,1); the grounding's score is

        min_q max(1 - r_q, xnor(s_q, c_q))

    so an irrelevant atom contributes 1, a relevant one contributes how
    well its score c_q matches the generated polarity.
    """

    def __init__(self, body_size: int, emb_dim: int, rng: np.random.Generator,
                 prefix: str, hidden: int = 16):
        self.body_size = body_size
        self.emb_dim = emb_dim
        self.filter_head = _TwoLayerSigmoid(emb_dim, hidden, rng, f"{prefix}.filter")
        self.sign_head = _TwoLayerSigmoid(emb_dim, hidden, rng, f"{prefix}.sign")

    def generate(self, flat_embs: Tensor, n_groundings: int) -> tuple[Tensor, Tensor]:
        """flat_embs: [G*p, emb_dim] -> relevances and polarities [G, p]."""
        if flat_embs.shape[1] != self.emb_dim:
            raise DimMismatch(f"expected embedding dim {self.emb_dim}, got {flat_embs.shape[1]}")
        r = ad.reshape(self.filter_head.forward(flat_embs), (n_groundings, self.body_size))
        s = ad.reshape(self.sign_head.forward(flat_embs), (n_groundings, self.body_size))
        return r, s

    def forward(self, body: Tensor, flat_embs: Tensor | None = None,
                rule_override: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
                **_) -> Tensor:
        if flat_embs is None:
            raise MissingEmbeddings("rule-generating predictor needs body embeddings")
        g, p = body.shape
        if p != self.body_size:
            raise DimMismatch(f"expected body size {self.body_size}, got {p}")
        r, s = self.generate(flat_embs, g)
        if rule_override is not None:
            mask, r_force, s_force = rule_override
            keep = Tensor(1.0 - mask)
            r = r * keep + Tensor(r_force * mask)
            s = s * keep + Tensor(s_force * mask)
        literal = ad.maximum(1.0 - r, xnor(s, body))
        return ad.min_reduce(literal, axis=1)

    def params(self):
        return self.filter_head.params() + self.sign_head.params()


class _TwoLayerSigmoid:
    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator, prefix: str):
        self.w1 = Parameter(f"{prefix}.w1", _init(rng, in_dim, (in_dim, hidden)))
        self.b1 = Parameter(f"{prefix}.b1", Tensor(np.zeros(hidden)))
        self.w2 = Parameter(f"{prefix}.w2", _init(rng, hidden, (hidden, 1)))
        self.b2 = Parameter(f"{prefix}.b2", Tensor(np.zeros(1)))

    def forward(self, x: Tensor) -> Tensor:
        h = ad.relu(ad.matmul(x, self.w1.tensor) + self.b1.tensor)
        out = ad.sigmoid(ad.matmul(h, self.w2.tensor) + self.b2.tensor)
        return ad.reshape(out, (x.shape[0],))

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]


class FlatPredictor(LinearPredictor):
    """Linear predictor bound to one fixed flat body layout."""

    def __init__(self, body_size: int, universe_size: int, rng: np.random.Generator, prefix: str):
        super().__init__(body_size, rng, prefix)
        self.universe_size = universe_size


class EntityTuplePredictor:
    """Black-box per-grounding head: MLP over the concatenated embeddings
    of the grounding's entity tuple (no concept bottleneck)."""

    def __init__(self, n_entities: int, emb_dim: int, rng: np.random.Generator,
                 prefix: str, hidden: int = 32):
        self.in_dim = n_entities * emb_dim
        self.w1 = Parameter(f"{prefix}.w1", _init(rng, self.in_dim, (self.in_dim, hidden)))
        self.b1 = Parameter(f"{prefix}.b1", Tensor(np.zeros(hidden)))
        self.w2 = Parameter(f"{prefix}.w2", _init(rng, hidden, (hidden, 1)))
        self.b2 = Parameter(f"{prefix}.b2", Tensor(np.zeros(1)))

    def forward(self, ent_embs: Tensor, **_) -> Tensor:
        if ent_embs.shape[1] != self.in_dim:
            raise DimMismatch(f"expected entity-tuple width {self.in_dim}, got {ent_embs.shape[1]}")
        h = ad.relu(ad.matmul(ent_embs, self.w1.tensor) + self.b1.tensor)
        out = ad.sigmoid(ad.matmul(h, self.w2.tensor) + self.b2.tensor)
        return ad.reshape(out, (ent_embs.shape[0],))

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]


# --- single-grounding entry points -------------------------------------------

def predict_grounding(predictor, body_scores: np.ndarray,
                      body_embeddings: np.ndarray | None = None) -> float:
    """Score one grounding from its body vector (and embeddings for the
    rule-generating predictor)."""
    body = Tensor(np.asarray(body_scores, dtype=np.float64).reshape(1, -1))
    if isinstance(predictor, DCRPredictor):
        if body_embeddings is None:
            raise MissingEmbeddings("rule-generating predictor needs body embeddings")
        flat = Tensor(np.asarray(body_embeddings, dtype=np.float64))
        return float(predictor.forward(body, flat_embs=flat).data[0])
    return float(predictor.forward(body).data[0])


def dcr_generate_rule(dcr: DCRPredictor, body_embeddings: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Relevance and polarity vectors for one grounding's body embeddings [p, h]."""
    flat = np.asarray(body_embeddings, dtype=np.float64)
    r, s = dcr.generate(Tensor(flat), n_groundings=1)
    return r.data[0], s.data[0]


def dcr_evaluate_rule(r: np.ndarray, s: np.ndarray, c: np.ndarray) -> float:
    """Evaluate a generated rule on concept scores (pure numpy)."""
    r, s, c = (np.asarray(v, dtype=np.float64) for v in (r, s, c))
    if not (r.shape == s.shape == c.shape):
        raise DimMismatch(f"rule shapes differ: {r.shape}, {s.shape}, {c.shape}")
    literal = np.maximum(1.0 - r, s * c + (1.0 - s) * (1.0 - c))
    return float(literal.min())


# --- extracted rules -----------------------------------------------------------

@dataclass(frozen=True)
class ExtractedRule:
    """A quantified conjunction read off a trained rule generator at the
    grounding that won the aggregation."""

    template: Template
    literals: tuple[tuple[Atom, bool], ...]  # (body atom, positive?)
    provenance: Substitution

    def literal_set(self) -> frozenset[tuple[str, bool]]:
        return frozenset((repr(atom), positive) for atom, positive in self.literals)

    def __repr__(self):
        return format_rule(self)


def format_rule(rule: ExtractedRule) -> str:
    t = rule.template
    prefix = f"forall {','.join(t.head_vars)}."
    if t.extra_vars:
        prefix += f" exists {','.join(t.extra_vars)}."
    head = f"{t.head.predicate.name}({','.join(map(repr, t.head.args))})"
    if rule.literals:
        body = ", ".join(("" if positive else "~") + repr(atom) for atom, positive in rule.literals)
    else:
        body = "true"
    return f"{prefix} {head} :- {body}."


def crispen_rule(template: Template, r: np.ndarray, s: np.ndarray,
                 provenance: Substitution, threshold: float = 0.5) -> ExtractedRule:
    """Keep literal q iff r_q > threshold (strictly); positive iff s_q > threshold."""
    literals = tuple(
        (atom, bool(s[q] > threshold))
        for q, atom in enumerate(template.body)
        if r[q] > threshold
    )
    return ExtractedRule(template=template, literals=literals, provenance=provenance)
