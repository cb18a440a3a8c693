"""Synthetic relational dataset generators with ground-truth oracles.

Every generator is a pure function of its parameters and seed.  Worlds
hold entity feature vectors plus concept/task label tables keyed by
ground atoms; task labels are always re-derivable from concept labels
through the generator's ground-truth rule (see `derive_task_labels`),
which is what the oracle self-consistency tests check.

Serialization is JSONL, one record per line, with a fixed field order
and floats printed with 17 significant digits so files round-trip
bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .logic import CONCEPT, TASK, PredicateSig

SPLITS = ("train", "val", "test")


class InvalidCount(Exception):
    pass


class ParseError(Exception):
    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


class SchemaMismatch(Exception):
    pass


AtomKey = tuple[str, tuple[str, ...]]  # (predicate name, entity args)


@dataclass
class World:
    id: int
    split: str
    entities: tuple[str, ...]
    features: np.ndarray  # [n_entities, d]
    concept_labels: dict[AtomKey, int] = field(default_factory=dict)
    task_labels: dict[AtomKey, int] = field(default_factory=dict)
    relations: dict[str, tuple[tuple[str, ...], ...]] = field(default_factory=dict)
    task_splits: dict[AtomKey, str] = field(default_factory=dict)  # per-atom override

    def entity_index(self, entity: str) -> int:
        return self.entities.index(entity)

    def task_split(self, key: AtomKey) -> str:
        return self.task_splits.get(key, self.split)

    def copy(self) -> "World":
        return World(self.id, self.split, self.entities, self.features.copy(),
                     dict(self.concept_labels), dict(self.task_labels),
                     {k: v for k, v in self.relations.items()}, dict(self.task_splits))


@dataclass
class RelationalDataset:
    schema: list[PredicateSig]
    worlds: list[World]
    feature_dim: int
    generator: str = ""
    task_groups: list[list[str]] = field(default_factory=list)
    relation_names: list[str] = field(default_factory=list)

    def concepts(self) -> list[PredicateSig]:
        return [s for s in self.schema if s.kind == CONCEPT]

    def tasks(self) -> list[PredicateSig]:
        return [s for s in self.schema if s.kind == TASK]

    def worlds_of(self, split: str) -> list[World]:
        return [w for w in self.worlds if w.split == split
                or any(s == split for s in w.task_splits.values())]

    def copy(self) -> "RelationalDataset":
        return RelationalDataset(list(self.schema), [w.copy() for w in self.worlds],
                                 self.feature_dim, self.generator,
                                 [list(g) for g in self.task_groups], list(self.relation_names))


@dataclass(frozen=True)
class NoiseSpec:
    low: float
    high: float
    seed: int


def apply_noise(dataset: RelationalDataset, spec: NoiseSpec) -> RelationalDataset:
    """Uniform feature noise, reproducible under the spec's seed."""
    rng = np.random.default_rng(spec.seed)
    out = dataset.copy()
    for w in out.worlds:
        w.features = w.features + rng.uniform(spec.low, spec.high, size=w.features.shape)
    return out


def _assign_splits(n: int, rng: np.random.Generator) -> list[str]:
    order = rng.permutation(n)
    n_train = max(1, int(round(0.7 * n)))
    n_val = max(1, int(round(0.1 * n))) if n >= 4 else 0
    splits = [""] * n
    for rank, idx in enumerate(order):
        if rank < n_train:
            splits[idx] = "train"
        elif rank < n_train + n_val:
            splits[idx] = "val"
        else:
            splits[idx] = "test"
    if n_train + n_val >= n and n >= 2:  # always keep at least one test world
        splits[order[-1]] = "test"
    return splits


# --- Tower-of-Hanoi analog ----------------------------------------------------

HANOI_SCHEMA = [
    PredicateSig("larger", 2, CONCEPT),
    PredicateSig("top", 2, CONCEPT),
    PredicateSig("correct", 1, TASK),
]


def gen_hanoi(n_worlds: int, disks_per_world: int, seed: int,
              split: str | None = None) -> RelationalDataset:
    """Towers of disks with distinct sizes and heights drawn from 1..10.

    Features are the (size, height) pair with gaussian jitter (sigma 0.1).
    larger(i,j) holds iff size_i > size_j; top(i,j) iff disk i sits
    directly on disk j (height_i == height_j + 1).  A disk is correct iff
    the disk directly below (if any) is larger and the disk directly
    above (if any) is smaller.
    """
    if disks_per_world < 2 or disks_per_world > 10:
        raise InvalidCount("disks_per_world must be in [2, 10]")
    if n_worlds < 1:
        raise InvalidCount("n_worlds must be >= 1")
    rng = np.random.default_rng(seed)
    splits = [split] * n_worlds if split else _assign_splits(n_worlds, rng)
    worlds = []
    for wid in range(n_worlds):
        k = disks_per_world
        sizes = rng.choice(np.arange(1, 11), size=k, replace=False)
        heights = np.sort(rng.choice(np.arange(1, 11), size=k, replace=False))
        entities = tuple(f"d{i}" for i in range(k))
        feats = np.stack([sizes, heights], axis=1) + rng.normal(scale=0.1, size=(k, 2))
        concept_labels: dict[AtomKey, int] = {}
        for i in range(k):
            for j in range(k):
                concept_labels[("larger", (entities[i], entities[j]))] = int(sizes[i] > sizes[j])
                concept_labels[("top", (entities[i], entities[j]))] = int(heights[i] == heights[j] + 1)
        task_labels: dict[AtomKey, int] = {}
        for i in range(k):
            ok = True
            for j in range(k):
                if heights[j] == heights[i] - 1 and sizes[j] < sizes[i]:
                    ok = False  # disk directly below is smaller
                if heights[j] == heights[i] + 1 and sizes[j] > sizes[i]:
                    ok = False  # disk directly above is larger
            task_labels[("correct", (entities[i],))] = int(ok)
        worlds.append(World(wid, splits[wid], entities, feats, concept_labels, task_labels))
    return RelationalDataset(schema=list(HANOI_SCHEMA), worlds=worlds, feature_dim=2,
                             generator="hanoi")


HANOI_TEMPLATE_TEXT = (
    "correct(v) :- top(u1,v), top(v,u1), larger(u1,v), larger(v,u1), "
    "top(u2,v), top(v,u2), larger(u2,v), larger(v,u2)."
)


# --- rock-paper-scissors analog -------------------------------------------------

RPS_SIGNS = ("rock", "paper", "scissors")
RPS_SCHEMA = [
    PredicateSig("rock", 1, CONCEPT),
    PredicateSig("paper", 1, CONCEPT),
    PredicateSig("scissors", 1, CONCEPT),
    PredicateSig("wins", 1, TASK),
    PredicateSig("loses", 1, TASK),
    PredicateSig("ties", 1, TASK),
]

_BEATS = {("paper", "rock"), ("rock", "scissors"), ("scissors", "paper")}

RPS_TEMPLATE_TEXT = "\n".join(
    f"{task}(v) :- rock(v), paper(v), scissors(v), rock(u), paper(u), scissors(u) [distinct]."
    for task in ("wins", "loses", "ties")
)


def gen_rps(n_matches: int, seed: int, split: str | None = None) -> RelationalDataset:
    """Two-player matches; features are the one-hot sign plus U(-0.3, 0.3) noise."""
    if n_matches < 1:
        raise InvalidCount("n_matches must be >= 1")
    rng = np.random.default_rng(seed)
    splits = [split] * n_matches if split else _assign_splits(n_matches, rng)
    worlds = []
    for wid in range(n_matches):
        signs = rng.integers(0, 3, size=2)
        entities = ("p0", "p1")
        feats = np.eye(3)[signs] + rng.uniform(-0.3, 0.3, size=(2, 3))
        concept_labels = {
            (sign, (e,)): int(signs[i] == s)
            for i, e in enumerate(entities)
            for s, sign in enumerate(RPS_SIGNS)
        }
        task_labels: dict[AtomKey, int] = {}
        for i, e in enumerate(entities):
            mine, theirs = RPS_SIGNS[signs[i]], RPS_SIGNS[signs[1 - i]]
            task_labels[("wins", (e,))] = int((mine, theirs) in _BEATS)
            task_labels[("loses", (e,))] = int((theirs, mine) in _BEATS)
            task_labels[("ties", (e,))] = int(mine == theirs)
        worlds.append(World(wid, splits[wid], entities, feats, concept_labels, task_labels))
    return RelationalDataset(schema=list(RPS_SCHEMA), worlds=worlds, feature_dim=3,
                             generator="rps", task_groups=[["wins", "loses", "ties"]])


# --- family trees ----------------------------------------------------------------

FAMILY_SCHEMA = [
    PredicateSig("parent", 2, CONCEPT),
    PredicateSig("grandparent", 2, TASK),
]

FAMILY_TEMPLATE_TEXT = "grandparent(v1,v2) :- parent(v1,u), parent(u,v2)."


def gen_family(n_trees: int, depth: int, seed: int) -> RelationalDataset:
    """Random family trees; features are uninformative (d=8) random
    vectors, so concepts here are learned from labels alone."""
    if depth < 2:
        raise InvalidCount("depth must be >= 2")
    if n_trees < 1:
        raise InvalidCount("n_trees must be >= 1")
    rng = np.random.default_rng(seed)
    splits = _assign_splits(n_trees, rng)
    worlds = []
    for wid in range(n_trees):
        edges: list[tuple[int, int]] = []
        level = [0]
        n_nodes = 1
        for _ in range(depth - 1):
            nxt = []
            for node in level:
                for _ in range(int(rng.integers(1, 3))):
                    if n_nodes >= 12:
                        break
                    edges.append((node, n_nodes))
                    nxt.append(n_nodes)
                    n_nodes += 1
            level = nxt
        entities = tuple(f"p{i}" for i in range(n_nodes))
        feats = rng.normal(size=(n_nodes, 8))
        parent = {(entities[a], entities[b]) for a, b in edges}
        concept_labels = {
            ("parent", (x, y)): int((x, y) in parent)
            for x in entities for y in entities
        }
        task_labels = {}
        for x in entities:
            for y in entities:
                two_hop = any((x, m) in parent and (m, y) in parent for m in entities)
                task_labels[("grandparent", (x, y))] = int(two_hop)
        worlds.append(World(wid, splits[wid], entities, feats, concept_labels, task_labels))
    return RelationalDataset(schema=list(FAMILY_SCHEMA), worlds=worlds, feature_dim=8,
                             generator="family")


# --- citation-network toy ----------------------------------------------------------

def citation_schema(n_classes: int) -> list[PredicateSig]:
    names = [f"class_{i}" for i in range(n_classes)]
    return ([PredicateSig(n, 1, CONCEPT) for n in names]
            + [PredicateSig(n, 1, TASK) for n in names])


def citation_template_text(n_classes: int) -> str:
    body = ", ".join(f"class_{j}(u)" for j in range(n_classes))
    return "\n".join(
        f"class_{i}(v) :- {body} [cite(v,u)]." for i in range(n_classes)
    )


def gen_citation_toy(n_docs: int, n_classes: int, homophily: float, seed: int,
                     docs_per_world: int = 25) -> RelationalDataset:
    """Documents with class-indicative noisy bag-of-words features and
    cite edges favouring same-class pairs at the homophily rate.

    Concepts coincide with the task classes; the task template reads the
    classes of cited neighbours.
    """
    if n_classes < 2:
        raise InvalidCount("n_classes must be >= 2")
    if not 0.5 < homophily <= 1.0:
        raise InvalidCount("homophily must be in (0.5, 1]")
    if n_docs < docs_per_world:
        raise InvalidCount(f"need at least {docs_per_world} docs")
    rng = np.random.default_rng(seed)
    n_worlds = n_docs // docs_per_world
    splits = _assign_splits(n_worlds, rng)
    d = 4 * n_classes
    worlds = []
    for wid in range(n_worlds):
        n = docs_per_world
        classes = np.array([i % n_classes for i in range(n)])
        rng.shuffle(classes)
        entities = tuple(f"doc{i}" for i in range(n))
        feats = rng.uniform(0.0, 0.5, size=(n, d))
        for i in range(n):
            feats[i, 4 * classes[i]:4 * classes[i] + 4] += rng.uniform(0.25, 0.75, size=4)
        edges = []
        for v in range(n):
            same = [u for u in range(n) if u != v and classes[u] == classes[v]]
            other = [u for u in range(n) if u != v and classes[u] != classes[v]]
            for _ in range(int(rng.integers(2, 4))):
                pool = same if (rng.random() < homophily and same) else (other or same)
                edges.append((entities[v], entities[int(rng.choice(pool))]))
        edges = tuple(dict.fromkeys(edges))
        concept_labels = {}
        task_labels = {}
        for i, e in enumerate(entities):
            for c in range(n_classes):
                concept_labels[(f"class_{c}", (e,))] = int(classes[i] == c)
                task_labels[(f"class_{c}", (e,))] = int(classes[i] == c)
        worlds.append(World(wid, splits[wid], entities, feats, concept_labels, task_labels,
                            relations={"cite": edges}))
    return RelationalDataset(schema=citation_schema(n_classes), worlds=worlds,
                             feature_dim=d, generator="citation",
                             task_groups=[[f"class_{i}" for i in range(n_classes)]],
                             relation_names=["cite"])


# --- countries-style hierarchy ------------------------------------------------------

COUNTRIES_SCHEMA = [
    PredicateSig("locatedIn", 2, CONCEPT),
    PredicateSig("neighborOf", 2, CONCEPT),
    PredicateSig("locatedIn", 2, TASK),
]

COUNTRIES_TEMPLATE_TEXT = "locatedIn(v1,v2) :- locatedIn(v1,u), locatedIn(u,v2)."


def gen_countries_toy(n_countries: int, n_regions: int, n_continents: int,
                      missing_fraction: float, seed: int) -> RelationalDataset:
    """Three-level locatedIn hierarchy (country -> region -> continent)
    plus neighborOf between same-region countries.

    The country->region and region->continent links are observed as
    concepts; country->continent links are the task, with a held-out
    fraction of countries forming the test queries.  Concept labels
    cover every ordered entity pair except country->continent pairs,
    which only the task predictor may answer.
    """
    if n_countries < 4 or n_regions < 2 or n_continents < 1:
        raise InvalidCount("hierarchy sizes must be at least (4, 2, 1)")
    if not 0.0 < missing_fraction < 1.0:
        raise InvalidCount("missing_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    countries = [f"c{i}" for i in range(n_countries)]
    regions = [f"r{i}" for i in range(n_regions)]
    continents = [f"k{i}" for i in range(n_continents)]
    entities = tuple(countries + regions + continents)
    region_of = {c: regions[i % n_regions] for i, c in enumerate(countries)}
    continent_of_region = {r: continents[i % n_continents] for i, r in enumerate(regions)}

    loc_pairs = {(c, region_of[c]) for c in countries}
    loc_pairs |= {(r, continent_of_region[r]) for r in regions}
    neighbor_pairs = set()
    for r in regions:
        members = [c for c in countries if region_of[c] == r]
        for i in range(len(members) - 1):
            neighbor_pairs.add((members[i], members[i + 1]))
            neighbor_pairs.add((members[i + 1], members[i]))

    country_set, continent_set = set(countries), set(continents)
    concept_labels: dict[AtomKey, int] = {}
    for a in entities:
        for b in entities:
            if a in country_set and b in continent_set:
                continue  # held out at the concept level: this is the task's job
            concept_labels[("locatedIn", (a, b))] = int((a, b) in loc_pairs)
            concept_labels[("neighborOf", (a, b))] = int((a, b) in neighbor_pairs)

    task_labels: dict[AtomKey, int] = {}
    task_splits: dict[AtomKey, str] = {}
    order = list(rng.permutation(n_countries))
    n_test = max(1, int(round(missing_fraction * n_countries)))
    test_countries = {countries[i] for i in order[:n_test]}
    val_countries = {countries[i] for i in order[n_test:n_test + max(1, (n_countries - n_test) // 10)]}
    for c in countries:
        true_k = continent_of_region[region_of[c]]
        for k in continents:
            key = ("locatedIn", (c, k))
            task_labels[key] = int(k == true_k)
            task_splits[key] = ("test" if c in test_countries
                                else "val" if c in val_countries else "train")

    feats = rng.normal(size=(len(entities), 8))
    world = World(0, "train", entities, feats, concept_labels, task_labels,
                  task_splits=task_splits)
    return RelationalDataset(schema=list(COUNTRIES_SCHEMA), worlds=[world], feature_dim=8,
                             generator="countries")


# --- ground-truth rules ---------------------------------------------------------------

def derive_task_labels(dataset: RelationalDataset, world: World) -> dict[AtomKey, int]:
    """Recompute task labels from concept labels via the generator's
    ground-truth rule, brute-forcing over all groundings."""
    c = world.concept_labels
    ents = world.entities
    out: dict[AtomKey, int] = {}
    if dataset.generator == "hanoi":
        for v in ents:
            viol = any(
                (c[("top", (u, v))] and c[("larger", (u, v))])
                or (c[("top", (v, u))] and c[("larger", (v, u))])
                for u in ents
            )
            out[("correct", (v,))] = int(not viol)
    elif dataset.generator == "rps":
        for v in ents:
            for task in ("wins", "loses", "ties"):
                hit = False
                for u in ents:
                    if u == v:
                        continue
                    mine = [s for s in RPS_SIGNS if c[(s, (v,))]]
                    theirs = [s for s in RPS_SIGNS if c[(s, (u,))]]
                    if not mine or not theirs:
                        continue
                    if task == "wins":
                        hit |= (mine[0], theirs[0]) in _BEATS
                    elif task == "loses":
                        hit |= (theirs[0], mine[0]) in _BEATS
                    else:
                        hit |= mine[0] == theirs[0]
                out[(task, (v,))] = int(hit)
    elif dataset.generator == "family":
        for x in ents:
            for y in ents:
                hit = any(c[("parent", (x, m))] and c[("parent", (m, y))] for m in ents)
                out[("grandparent", (x, y))] = int(hit)
    elif dataset.generator == "citation":
        out = dict(world.task_labels)
        for key in out:
            out[key] = world.concept_labels[key]  # concepts coincide with task classes
    elif dataset.generator == "countries":
        for key in world.task_labels:
            _, (a, b) = key
            hit = any(
                world.concept_labels.get(("locatedIn", (a, u)), 0)
                and world.concept_labels.get(("locatedIn", (u, b)), 0)
                for u in ents
            )
            out[key] = int(hit)
    else:
        raise ValueError(f"no ground-truth rule for generator '{dataset.generator}'")
    return out


def rps_rule_masks(world: World, task: str, head: tuple[str, ...],
                   body_size: int = 6) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth (relevance, polarity) vectors for one RPS task atom,
    laid out over the standard body [rock(v), paper(v), scissors(v),
    rock(u), paper(u), scissors(u)].

    The polarity pattern depends on the opponent's true sign, which is
    exactly what a human intervener reads off the match.
    """
    (v,) = head
    (u,) = tuple(e for e in world.entities if e != v)
    theirs = next(s for s in RPS_SIGNS if world.concept_labels[(s, (u,))])
    beats = {b: a for a, b in _BEATS}     # sign that beats `theirs`
    loses_to = {a: b for a, b in _BEATS}  # sign that `theirs` beats
    if task == "wins":
        mine = beats[theirs]
    elif task == "loses":
        mine = loses_to[theirs]
    elif task == "ties":
        mine = theirs
    else:
        raise KeyError(task)
    r = np.ones(body_size)
    s = np.zeros(body_size)
    s[RPS_SIGNS.index(mine)] = 1.0
    s[3 + RPS_SIGNS.index(theirs)] = 1.0
    return r, s


# --- serialization ---------------------------------------------------------------------

def _f17(x: float) -> float:
    return float(format(float(x), ".17g"))


def _dump(record: dict) -> str:
    return json.dumps(record, separators=(",", ":"))


def write_dataset(path, dataset: RelationalDataset) -> None:
    """JSONL, one record per line: schema, then per world its entities,
    relations, concept labels and task labels."""
    lines = []
    schema_rec = {
        "t": "schema",
        "preds": [{"name": s.name, "arity": s.arity, "kind": s.kind} for s in dataset.schema],
        "feature_dim": dataset.feature_dim,
        "generator": dataset.generator,
        "task_groups": dataset.task_groups,
        "relations": dataset.relation_names,
    }
    lines.append(_dump(schema_rec))
    for w in dataset.worlds:
        lines.append(_dump({"t": "world", "id": w.id, "split": w.split}))
        for i, e in enumerate(w.entities):
            lines.append(_dump({"t": "entity", "world": w.id, "id": e,
                                "x": [_f17(v) for v in w.features[i]]}))
        for name, edges in sorted(w.relations.items()):
            for args in edges:
                lines.append(_dump({"t": "relation", "world": w.id, "name": name,
                                    "args": list(args)}))
        for (pred, args), y in w.concept_labels.items():
            lines.append(_dump({"t": "concept", "world": w.id, "pred": pred,
                                "args": list(args), "y": int(y)}))
        for (pred, args), y in w.task_labels.items():
            rec = {"t": "task", "world": w.id, "pred": pred, "args": list(args), "y": int(y)}
            if (pred, args) in w.task_splits:
                rec["split"] = w.task_splits[(pred, args)]
            lines.append(_dump(rec))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_dataset(path) -> RelationalDataset:
    with open(path, encoding="utf-8") as fh:
        raw_lines = fh.read().splitlines()
    schema: list[PredicateSig] = []
    dataset: RelationalDataset | None = None
    worlds: dict[int, World] = {}
    feats: dict[int, dict[str, list[float]]] = {}
    for line_no, raw in enumerate(raw_lines, start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ParseError(f"bad json ({e.msg})", line_no) from None
        kind = rec.get("t")
        try:
            if kind == "schema":
                schema = [PredicateSig(p["name"], p["arity"], p["kind"]) for p in rec["preds"]]
                dataset = RelationalDataset(
                    schema=schema, worlds=[], feature_dim=rec["feature_dim"],
                    generator=rec.get("generator", ""),
                    task_groups=rec.get("task_groups", []),
                    relation_names=rec.get("relations", []))
            elif kind == "world":
                if dataset is None:
                    raise ParseError("world before schema", line_no)
                w = World(rec["id"], rec["split"], (), np.zeros((0, dataset.feature_dim)))
                worlds[w.id] = w
                feats[w.id] = {}
            elif kind == "entity":
                w = worlds[rec["world"]]
                feats[rec["world"]][rec["id"]] = rec["x"]
                w.entities = w.entities + (rec["id"],)
            elif kind == "relation":
                w = worlds[rec["world"]]
                name = rec["name"]
                if name not in dataset.relation_names:
                    raise SchemaMismatch(f"undeclared relation '{name}'")
                args = tuple(rec["args"])
                _check_entities(w, args, line_no)
                w.relations[name] = w.relations.get(name, ()) + (args,)
            elif kind in ("concept", "task"):
                w = worlds[rec["world"]]
                pred = rec["pred"]
                want = CONCEPT if kind == "concept" else TASK
                sig = next((s for s in schema if s.name == pred and s.kind == want), None)
                if sig is None:
                    raise SchemaMismatch(f"unknown {want} predicate '{pred}'")
                args = tuple(rec["args"])
                if len(args) != sig.arity:
                    raise SchemaMismatch(f"{pred}/{sig.arity} applied to {len(args)} args")
                _check_entities(w, args, line_no)
                table = w.concept_labels if kind == "concept" else w.task_labels
                table[(pred, args)] = int(rec["y"])
                if kind == "task" and "split" in rec:
                    w.task_splits[(pred, args)] = rec["split"]
            else:
                raise ParseError(f"unknown record type '{kind}'", line_no)
        except KeyError as e:
            raise ParseError(f"missing field {e}", line_no) from None
    if dataset is None:
        raise ParseError("no schema record", 1)
    for wid in sorted(worlds):
        w = worlds[wid]
        w.features = np.array([feats[wid][e] for e in w.entities], dtype=np.float64)
        if w.features.size and w.features.shape[1] != dataset.feature_dim:
            raise SchemaMismatch(f"world {wid}: feature dim {w.features.shape[1]} != "
                                 f"{dataset.feature_dim}")
        dataset.worlds.append(w)
    return dataset


def _check_entities(world: World, args: tuple[str, ...], line_no: int) -> None:
    for a in args:
        if a not in world.entities:
            raise SchemaMismatch(f"line {line_no}: unknown entity '{a}' in world {world.id}")


GENERATORS = {
    "hanoi": gen_hanoi,
    "rps": gen_rps,
    "family": gen_family,
    "citation": gen_citation_toy,
    "countries": gen_countries_toy,
}

TEMPLATE_TEXTS = {
    "hanoi": HANOI_TEMPLATE_TEXT,
    "rps": RPS_TEMPLATE_TEXT,
    "family": FAMILY_TEMPLATE_TEXT,
    "countries": COUNTRIES_TEMPLATE_TEXT,
}
