"""Concept encoders: entity feature tuples -> concept truth degrees.

A shared entity embedder maps each feature vector to an embedding; every
concept has its own head over the concatenation of its argument
embeddings (order-preserving, so nothing forces a relation to be
symmetric).  Each head yields a score in (0,1) plus the embedding of the
hidden layer feeding the score unit, which is what rule-generating task
predictors consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .logic import CONCEPT, PredicateSig


class DimMismatch(Exception):
    pass


class ArityMismatch(Exception):
    pass


def _init(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    return Tensor(rng.normal(scale=1.0 / np.sqrt(max(fan_in, 1)), size=shape))


def harden_concepts(scores: Tensor) -> Tensor:
    """Threshold scores at 0.5; the backward pass is the identity
    (straight-through), so gradients still reach the soft encoder."""
    return ad.hard_threshold(scores, 0.5)


class EntityEmbedder:
    """Single relu layer from feature space (dim d) to embedding space (dim h)."""

    def __init__(self, in_dim: int, emb_dim: int, rng: np.random.Generator, prefix: str = "psi"):
        self.in_dim = in_dim
        self.emb_dim = emb_dim
        self.w = Parameter(f"{prefix}.w", _init(rng, in_dim, (in_dim, emb_dim)))
        self.b = Parameter(f"{prefix}.b", Tensor(np.zeros(emb_dim)))

    def forward(self, feats: Tensor) -> Tensor:
        if feats.shape[-1] != self.in_dim:
            raise DimMismatch(f"expected feature dim {self.in_dim}, got {feats.shape[-1]}")
        return ad.relu(ad.matmul(feats, self.w.tensor) + self.b.tensor)

    def embed_entity(self, feat: np.ndarray) -> np.ndarray:
        feat = np.asarray(feat, dtype=np.float64)
        if feat.shape != (self.in_dim,):
            raise DimMismatch(f"expected feature dim {self.in_dim}, got {feat.shape}")
        return self.forward(Tensor(feat.reshape(1, -1))).data[0]

    def params(self) -> list[Parameter]:
        return [self.w, self.b]


class ConceptHead:
    """Per-concept scoring head on concatenated argument embeddings.

    hidden(32) -> embedding(h) -> sigmoid unit; the embedding layer is the
    pre-sigmoid activation returned alongside the score.
    """

    def __init__(self, sig: PredicateSig, emb_dim: int, hidden: int,
                 rng: np.random.Generator):
        self.sig = sig
        self.emb_dim = emb_dim
        in_dim = sig.arity * emb_dim
        p = f"concept.{sig.name}"
        self.w1 = Parameter(f"{p}.w1", _init(rng, in_dim, (in_dim, hidden)))
        self.b1 = Parameter(f"{p}.b1", Tensor(np.zeros(hidden)))
        self.w2 = Parameter(f"{p}.w2", _init(rng, hidden, (hidden, emb_dim)))
        self.b2 = Parameter(f"{p}.b2", Tensor(np.zeros(emb_dim)))
        self.w3 = Parameter(f"{p}.w3", _init(rng, emb_dim, (emb_dim, 1)))
        self.b3 = Parameter(f"{p}.b3", Tensor(np.zeros(1)))

    def forward(self, arg_embs: Tensor) -> tuple[Tensor, Tensor]:
        """arg_embs: [n, arity*emb_dim] -> (scores [n], embeddings [n, emb_dim])."""
        if arg_embs.shape[1] != self.sig.arity * self.emb_dim:
            raise DimMismatch(
                f"{self.sig.name}: expected width {self.sig.arity * self.emb_dim}, "
                f"got {arg_embs.shape[1]}")
        h = ad.relu(ad.matmul(arg_embs, self.w1.tensor) + self.b1.tensor)
        emb = ad.relu(ad.matmul(h, self.w2.tensor) + self.b2.tensor)
        score = ad.sigmoid(ad.matmul(emb, self.w3.tensor) + self.b3.tensor)
        return ad.reshape(score, (arg_embs.shape[0],)), emb

    def params(self) -> list[Parameter]:
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]


@dataclass
class EncoderConfig:
    emb_dim: int = 16
    concept_hidden: int = 32


class ConceptEncoder:
    """Shared embedder plus one head per concept in the schema."""

    def __init__(self, schema, feature_dim: int, rng: np.random.Generator,
                 config: EncoderConfig | None = None):
        self.config = config or EncoderConfig()
        self.embedder = EntityEmbedder(feature_dim, self.config.emb_dim, rng)
        self.heads: dict[str, ConceptHead] = {}
        for sig in schema:
            if sig.kind == CONCEPT:
                self.heads[sig.name] = ConceptHead(
                    sig, self.config.emb_dim, self.config.concept_hidden, rng)

    def encode_concept(self, sig: PredicateSig, entities) -> tuple[float, np.ndarray]:
        """Score one concept atom from the raw feature vectors of its
        argument tuple; order matters."""
        if sig.name not in self.heads:
            raise KeyError(f"no head for concept '{sig.name}'")
        if len(entities) != sig.arity:
            raise ArityMismatch(f"{sig.name}/{sig.arity} applied to {len(entities)} entities")
        embs = [Tensor(self.embedder.embed_entity(e).reshape(1, -1)) for e in entities]
        arg_embs = embs[0] if len(embs) == 1 else ad.concat(embs, axis=1)
        score, emb = self.heads[sig.name].forward(arg_embs)
        return float(score.data[0]), emb.data[0]

    def params(self) -> list[Parameter]:
        out = self.embedder.params()
        for head in self.heads.values():
            out.extend(head.params())
        return out

    def parameter_count(self) -> int:
        return sum(p.tensor.data.size for p in self.params())
