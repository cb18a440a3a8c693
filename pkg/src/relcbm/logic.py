"""First-order template language: atoms, substitutions, grounding.

A template declares how a task atom is computed from concept atoms:

    grandparent(v1,v2) :- parent(v1,u), parent(u,v2).

Variables in the head are the task's own variables; the remaining body
variables are extra variables that range over the entity universe when
the template is grounded.  An optional trailing guard restricts the
admissible bindings of the extra variables, e.g.

    class_0(v) :- class_0(u), class_1(u) [cite(v,u)].
    wins(v) :- rock(v), paper(v), rock(u), paper(u) [distinct].

All values in this module are immutable after construction.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence


class TemplateError(Exception):
    """Base for template parsing/validation problems."""

    def __init__(self, message: str, token: str = "", position: tuple[int, int] | None = None):
        self.token = token
        self.position = position
        if position is not None:
            message = f"{message} at line {position[0]}, column {position[1]}"
        super().__init__(message)


class UnknownPredicate(TemplateError):
    pass


class ArityMismatch(TemplateError):
    pass


class DuplicateHeadVariable(TemplateError):
    pass


class EmptyBody(TemplateError):
    pass


class NonConceptBody(TemplateError):
    pass


class UnboundVariable(TemplateError):
    pass


class EmptyUniverse(TemplateError):
    pass


class UniverseMismatch(TemplateError):
    pass


CONCEPT = "concept"
TASK = "task"


@dataclass(frozen=True)
class PredicateSig:
    """An n-ary predicate symbol, either a learnable concept or a task."""

    name: str
    arity: int
    kind: str  # CONCEPT or TASK

    def __post_init__(self):
        if self.arity < 1:
            raise ValueError(f"predicate {self.name}: arity must be >= 1")
        if self.kind not in (CONCEPT, TASK):
            raise ValueError(f"predicate {self.name}: kind must be concept or task")


@dataclass(frozen=True)
class Var:
    name: str

    def __post_init__(self):
        if not self.name:
            raise ValueError("empty variable name")

    def __repr__(self):
        return self.name


@dataclass(frozen=True)
class Const:
    entity_id: str

    def __post_init__(self):
        if not self.entity_id:
            raise ValueError("empty entity id")

    def __repr__(self):
        return self.entity_id


Term = Var | Const


@dataclass(frozen=True)
class Atom:
    predicate: PredicateSig
    args: tuple[Term, ...]

    def __post_init__(self):
        if len(self.args) != self.predicate.arity:
            raise ArityMismatch(
                f"{self.predicate.name}/{self.predicate.arity} applied to {len(self.args)} args",
                token=self.predicate.name,
            )

    @property
    def is_ground(self) -> bool:
        return all(isinstance(t, Const) for t in self.args)

    def variables(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.args if isinstance(t, Var))

    def __repr__(self):
        return f"{self.predicate.name}({','.join(map(repr, self.args))})"


@dataclass(frozen=True)
class Substitution:
    """A total binding of some variables to entity ids."""

    bindings: Mapping[str, str]

    def __getitem__(self, var: str) -> str:
        return self.bindings[var]

    def __hash__(self):
        return hash(tuple(sorted(self.bindings.items())))

    def __contains__(self, var: str) -> bool:
        return var in self.bindings

    def apply_term(self, t: Term) -> Term:
        if isinstance(t, Const):
            return t
        if t.name not in self.bindings:
            raise UnboundVariable(f"variable {t.name} is not bound", token=t.name)
        return Const(self.bindings[t.name])

    def __repr__(self):
        inner = ",".join(f"{v}/{x}" for v, x in self.bindings.items())
        return "{%s}" % inner


@dataclass(frozen=True)
class GuardSpec:
    """Unbound guard: either `distinct` or membership in a named relation.

    Relation guards carry the variable tuple from the template text
    (e.g. cite(v,u)); they become concrete Guards once an edge list is
    supplied via `bind`.
    """

    kind: str  # "distinct" | "relation"
    relation: str = ""
    var_args: tuple[str, ...] = ()

    def bind(self, edges: Iterable[tuple[str, ...]] | None = None) -> "Guard":
        if self.kind == "distinct":
            return Guard.all_distinct()
        if edges is None:
            raise ValueError(f"relation guard {self.relation} needs an edge list")
        return Guard.relation_member(self.relation, self.var_args, edges)

    def __repr__(self):
        if self.kind == "distinct":
            return "[distinct]"
        return f"[{self.relation}({','.join(self.var_args)})]"


@dataclass(frozen=True)
class Guard:
    """A pure predicate over candidate extra-variable bindings."""

    description: str
    allowed: Callable[[Mapping[str, str], Mapping[str, str]], bool]

    @staticmethod
    def all_distinct() -> "Guard":
        def ok(head: Mapping[str, str], extra: Mapping[str, str]) -> bool:
            seen = list(head.values()) + list(extra.values())
            return len(seen) == len(set(seen))

        return Guard("distinct", ok)

    @staticmethod
    def relation_member(name: str, var_args: Sequence[str], edges: Iterable[tuple[str, ...]]) -> "Guard":
        edge_set = frozenset(tuple(e) for e in edges)
        args = tuple(var_args)

        def ok(head: Mapping[str, str], extra: Mapping[str, str]) -> bool:
            tup = []
            for v in args:
                if v in extra:
                    tup.append(extra[v])
                elif v in head:
                    tup.append(head[v])
                else:
                    raise UnboundVariable(f"guard variable {v} unbound", token=v)
            return tuple(tup) in edge_set

        return Guard(f"{name}({','.join(args)})", ok)


@dataclass(frozen=True)
class Template:
    """head(v̄) :- body over v̄ ∪ ū, with w = |ū| extra variables."""

    head: Atom
    head_vars: tuple[str, ...]
    extra_vars: tuple[str, ...]
    body: tuple[Atom, ...]
    guard_spec: GuardSpec | None = None

    @property
    def width(self) -> int:
        return len(self.extra_vars)

    @property
    def body_size(self) -> int:
        return len(self.body)

    @property
    def task_name(self) -> str:
        return self.head.predicate.name

    def __repr__(self):
        return format_template(self)


@dataclass(frozen=True)
class GroundingSet:
    """Ordered substitutions of the extra variables over one universe."""

    substitutions: tuple[Substitution, ...]
    universe_size: int

    def __len__(self):
        return len(self.substitutions)

    def __iter__(self):
        return iter(self.substitutions)


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str

    def __repr__(self):
        return f"{self.code}: {self.detail}"


# --- parsing ---------------------------------------------------------------

_TOKEN_RE = re.compile(r"\s*(:-|[(),.\[\]]|[A-Za-z_][A-Za-z0-9_]*)")


def _tokenize(text: str, line_no: int) -> list[tuple[str, tuple[int, int]]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            rest = text[pos:].strip()
            if not rest:
                break
            raise TemplateError("unexpected character", token=rest[0], position=(line_no, pos + 1))
        tokens.append((m.group(1), (line_no, m.start(1) + 1)))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, tokens: list[tuple[str, tuple[int, int]]]):
        self.tokens = tokens
        self.i = 0

    def peek(self) -> str:
        return self.tokens[self.i][0] if self.i < len(self.tokens) else ""

    def pos(self) -> tuple[int, int]:
        if self.i < len(self.tokens):
            return self.tokens[self.i][1]
        return self.tokens[-1][1] if self.tokens else (1, 1)

    def expect(self, token: str) -> tuple[str, tuple[int, int]]:
        if self.peek() != token:
            raise TemplateError(f"expected '{token}', found '{self.peek() or 'end of input'}'",
                                token=self.peek(), position=self.pos())
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def ident(self) -> tuple[str, tuple[int, int]]:
        tok, pos = self.tokens[self.i] if self.i < len(self.tokens) else ("", self.pos())
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", tok or ""):
            raise TemplateError("expected identifier", token=tok, position=pos)
        self.i += 1
        return tok, pos


def _parse_atom(p: _Parser, schema_by_name: Mapping[str, list[PredicateSig]],
                want_kind: str | None) -> tuple[Atom, tuple[int, int]]:
    name, pos = p.ident()
    candidates = schema_by_name.get(name, [])
    if want_kind is not None:
        candidates = [s for s in candidates if s.kind == want_kind]
    if not candidates:
        raise UnknownPredicate(f"predicate '{name}' not declared"
                               + (f" as a {want_kind}" if want_kind else ""),
                               token=name, position=pos)
    sig = candidates[0]
    p.expect("(")
    args: list[Term] = []
    while True:
        var, _ = p.ident()
        args.append(Var(var))
        if p.peek() == ",":
            p.expect(",")
            continue
        break
    p.expect(")")
    if len(args) != sig.arity:
        raise ArityMismatch(f"{name}/{sig.arity} applied to {len(args)} args",
                            token=name, position=pos)
    return Atom(sig, tuple(args)), pos


def parse_template(text: str, schema: Sequence[PredicateSig], line_no: int = 1) -> Template:
    """Parse one template line `head :- atom, atom, ... [guard].`

    Head variables become the task's own variables; body variables not
    in the head become extra variables, ordered by first appearance.
    """
    schema_by_name: dict[str, list[PredicateSig]] = {}
    for sig in schema:
        schema_by_name.setdefault(sig.name, []).append(sig)

    p = _Parser(_tokenize(text, line_no))
    head, head_pos = _parse_atom(p, schema_by_name, want_kind=TASK)

    head_vars: list[str] = []
    for t in head.args:
        assert isinstance(t, Var)
        if t.name in head_vars:
            raise DuplicateHeadVariable(f"head variable '{t.name}' repeated",
                                        token=t.name, position=head_pos)
        head_vars.append(t.name)

    p.expect(":-")
    if p.peek() in (".", ""):
        raise EmptyBody("template body is empty", token=p.peek(), position=p.pos())

    body: list[Atom] = []
    while True:
        atom, _ = _parse_atom(p, schema_by_name, want_kind=CONCEPT)
        body.append(atom)
        if p.peek() == ",":
            p.expect(",")
            continue
        break

    guard_spec = None
    if p.peek() == "[":
        p.expect("[")
        name, _ = p.ident()
        if name == "distinct":
            guard_spec = GuardSpec("distinct")
        else:
            p.expect("(")
            g_args = []
            while True:
                v, _ = p.ident()
                g_args.append(v)
                if p.peek() == ",":
                    p.expect(",")
                    continue
                break
            p.expect(")")
            guard_spec = GuardSpec("relation", relation=name, var_args=tuple(g_args))
        p.expect("]")

    p.expect(".")
    if p.peek():
        raise TemplateError("trailing tokens after '.'", token=p.peek(), position=p.pos())

    extra_vars: list[str] = []
    for atom in body:
        for v in atom.variables():
            if v not in head_vars and v not in extra_vars:
                extra_vars.append(v)

    return Template(head=head, head_vars=tuple(head_vars),
                    extra_vars=tuple(extra_vars), body=tuple(body),
                    guard_spec=guard_spec)


def parse_template_file(text: str, schema: Sequence[PredicateSig]) -> list[Template]:
    """Parse a template file: one template per line, `#` comments."""
    templates = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        templates.append(parse_template(line, schema, line_no=line_no))
    return templates


def format_template(t: Template) -> str:
    head = f"{t.head.predicate.name}({','.join(map(repr, t.head.args))})"
    body = ", ".join(f"{a.predicate.name}({','.join(map(repr, a.args))})" for a in t.body)
    guard = f" {t.guard_spec!r}" if t.guard_spec is not None else ""
    return f"{head} :- {body}{guard}."


def validate_template(t: Template, schema: Sequence[PredicateSig]) -> list[Violation]:
    """Return all violated template invariants (empty list iff valid)."""
    violations = []
    declared = {(s.name, s.kind): s for s in schema}
    head_sig = declared.get((t.head.predicate.name, TASK))
    if head_sig is None:
        violations.append(Violation("UnknownPredicate", f"task '{t.head.predicate.name}' not in schema"))
    elif head_sig.arity != len(t.head.args):
        violations.append(Violation("ArityMismatch", f"head {t.head!r} vs declared arity {head_sig.arity}"))
    if len(set(t.head_vars)) != len(t.head_vars):
        violations.append(Violation("DuplicateHeadVariable", f"head variables {t.head_vars}"))
    if not t.body:
        violations.append(Violation("EmptyBody", "template body is empty"))
    in_scope = set(t.head_vars) | set(t.extra_vars)
    for atom in t.body:
        if atom.predicate.kind != CONCEPT:
            violations.append(Violation("NonConceptBody", f"{atom!r} has kind={atom.predicate.kind}"))
        sig = declared.get((atom.predicate.name, CONCEPT))
        if sig is None:
            violations.append(Violation("UnknownPredicate", f"concept '{atom.predicate.name}' not in schema"))
        elif sig.arity != len(atom.args):
            violations.append(Violation("ArityMismatch", f"{atom!r} vs declared arity {sig.arity}"))
        for v in atom.variables():
            if v not in in_scope:
                violations.append(Violation("UnboundVariable", f"variable {v} in {atom!r}"))
    return violations


# --- grounding -------------------------------------------------------------

def apply_substitution(atoms: Sequence[Atom], theta: Substitution) -> list[Atom]:
    """Replace every variable with its bound entity; output atoms are ground."""
    return [Atom(a.predicate, tuple(theta.apply_term(t) for t in a.args)) for a in atoms]


def enumerate_substitutions(t: Template, universe: Sequence[str],
                            guard: Guard | None = None,
                            head_binding: Substitution | None = None) -> GroundingSet:
    """All bindings of the extra variables over `universe`, in lexicographic
    order of (u_1,...,u_w) with respect to the universe ordering.

    Without a guard the result has exactly |universe|**width entries.
    """
    head_map: Mapping[str, str] = head_binding.bindings if head_binding is not None else {}
    missing = [v for v in t.head_vars if v not in head_map]
    if head_binding is not None and missing:
        raise UnboundVariable(f"head binding misses {missing}", token=missing[0])

    if t.width == 0:
        subs: list[Substitution] = [Substitution({})]
        if guard is not None:
            subs = [s for s in subs if guard.allowed(head_map, s.bindings)]
        return GroundingSet(tuple(subs), universe_size=len(universe))

    if not universe:
        raise EmptyUniverse(f"width-{t.width} template needs a nonempty universe")

    subs = []
    for combo in itertools.product(universe, repeat=t.width):
        binding = dict(zip(t.extra_vars, combo))
        if guard is None or guard.allowed(head_map, binding):
            subs.append(Substitution(binding))
    return GroundingSet(tuple(subs), universe_size=len(universe))


def instantiate_bodies(t: Template, head_binding: Substitution, universe: Sequence[str],
                       guard: Guard | None = None) -> list[tuple[Substitution, list[Atom]]]:
    """One (θ_ū, ground body) row per grounding, in grounding-set order."""
    theta_set = enumerate_substitutions(t, universe, guard=guard, head_binding=head_binding)
    rows = []
    for theta_u in theta_set:
        full = Substitution({**head_binding.bindings, **theta_u.bindings})
        rows.append((theta_u, apply_substitution(t.body, full)))
    return rows


# --- fixed-layout (flat) template -----------------------------------------

@dataclass(frozen=True)
class FlatTemplate:
    """Body layout listing every concept on every entity tuple.

    The layout is positional and relative to the head binding: the head
    entities come first, then the remaining entities in universe order.
    Built once for a fixed universe size; evaluating it on a universe of
    a different size raises UniverseMismatch.
    """

    task: PredicateSig
    concepts: tuple[PredicateSig, ...]
    universe_size: int

    @property
    def body_size(self) -> int:
        return sum(self.universe_size ** c.arity for c in self.concepts)

    def ground_body(self, head_entities: Sequence[str], universe: Sequence[str]) -> list[Atom]:
        if len(universe) != self.universe_size:
            raise UniverseMismatch(
                f"flat layout built for |X|={self.universe_size}, got |X|={len(universe)}")
        ordered = list(dict.fromkeys(head_entities))
        ordered += [x for x in universe if x not in set(ordered)]
        if len(ordered) != self.universe_size:
            raise UniverseMismatch("head entities not drawn from the universe")
        atoms = []
        for c in self.concepts:
            for combo in itertools.product(ordered, repeat=c.arity):
                atoms.append(Atom(c, tuple(Const(x) for x in combo)))
        return atoms


def build_flat_template(schema: Sequence[PredicateSig], universe: Sequence[str],
                        task: PredicateSig | None = None) -> FlatTemplate:
    """Fixed-width body over all concepts grounded on all entity tuples."""
    concepts = tuple(s for s in schema if s.kind == CONCEPT)
    if task is None:
        tasks = [s for s in schema if s.kind == TASK]
        if len(tasks) != 1:
            raise ValueError("schema has multiple tasks; pass one explicitly")
        task = tasks[0]
    return FlatTemplate(task=task, concepts=concepts, universe_size=len(universe))


def build_self_template(schema: Sequence[PredicateSig], task: PredicateSig) -> Template:
    """Degenerate width-0 template: every concept applied to the head
    variable(s) only (c(v,...,v) for higher arities).

    This is the non-relational bottleneck shape: the task sees only
    concepts grounded on its own entity.
    """
    if task.arity != 1:
        raise TemplateError(f"self template needs a unary task, got {task.name}/{task.arity}")
    v = Var("v")
    body = tuple(Atom(c, (v,) * c.arity) for c in schema if c.kind == CONCEPT)
    if not body:
        raise EmptyBody("schema declares no concepts")
    head = Atom(task, (v,))
    return Template(head=head, head_vars=("v",), extra_vars=(), body=body)
