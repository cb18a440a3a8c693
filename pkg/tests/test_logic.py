import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relcbm.logic import (
    CONCEPT,
    TASK,
    Atom,
    Const,
    DuplicateHeadVariable,
    EmptyBody,
    EmptyUniverse,
    Guard,
    PredicateSig,
    Substitution,
    UnboundVariable,
    UniverseMismatch,
    UnknownPredicate,
    ArityMismatch,
    Var,
    apply_substitution,
    build_flat_template,
    build_self_template,
    enumerate_substitutions,
    format_template,
    instantiate_bodies,
    parse_template,
    parse_template_file,
    validate_template,
)

PARENT = PredicateSig("parent", 2, CONCEPT)
GRANDPARENT = PredicateSig("grandparent", 2, TASK)
FAMILY = [PARENT, GRANDPARENT]

UNARY = [
    PredicateSig("c1", 1, CONCEPT),
    PredicateSig("c2", 1, CONCEPT),
    PredicateSig("y", 1, TASK),
]


class TestParse:
    def test_grandparent(self):
        t = parse_template("grandparent(v1,v2) :- parent(v1,u), parent(u,v2).", FAMILY)
        assert t.head_vars == ("v1", "v2")
        assert t.width == 1
        assert t.extra_vars == ("u",)
        assert t.body_size == 2

    def test_degenerate_cbm(self):
        t = parse_template("y(v) :- c1(v), c2(v).", UNARY)
        assert t.width == 0
        assert len(t.head_vars) == 1
        assert t.body_size == 2

    def test_extra_vars_first_appearance(self):
        schema = [PredicateSig("c", 2, CONCEPT), PredicateSig("y", 2, TASK)]
        t = parse_template("y(v1,v2) :- c(v1,v3), c(v3,v4).", schema)
        assert t.extra_vars == ("v3", "v4")
        assert t.width == 2

    def test_unknown_predicate(self):
        with pytest.raises(UnknownPredicate) as e:
            parse_template("grandparent(v1,v2) :- uncle(v1,u).", FAMILY)
        assert e.value.token == "uncle"
        assert e.value.position is not None

    def test_arity_mismatch(self):
        with pytest.raises(ArityMismatch) as e:
            parse_template("grandparent(v1,v2) :- parent(v1).", FAMILY)
        assert e.value.token == "parent"

    def test_duplicate_head_variable(self):
        with pytest.raises(DuplicateHeadVariable) as e:
            parse_template("grandparent(v,v) :- parent(v,u).", FAMILY)
        assert e.value.token == "v"

    def test_empty_body(self):
        with pytest.raises(EmptyBody):
            parse_template("grandparent(v1,v2) :- .", FAMILY)

    def test_task_not_allowed_in_body(self):
        with pytest.raises(UnknownPredicate):
            parse_template("grandparent(v1,v2) :- grandparent(v1,v2).", FAMILY)

    def test_guard_distinct(self):
        schema = [PredicateSig("rock", 1, CONCEPT), PredicateSig("wins", 1, TASK)]
        t = parse_template("wins(v) :- rock(v), rock(u) [distinct].", schema)
        assert t.guard_spec is not None and t.guard_spec.kind == "distinct"

    def test_guard_relation(self):
        schema = [PredicateSig("class_0", 1, CONCEPT), PredicateSig("class_0", 1, TASK)]
        t = parse_template("class_0(v) :- class_0(u) [cite(v,u)].", schema)
        assert t.guard_spec.relation == "cite"
        assert t.guard_spec.var_args == ("v", "u")

    def test_round_trip(self):
        text = "grandparent(v1,v2) :- parent(v1,u), parent(u,v2)."
        t = parse_template(text, FAMILY)
        t2 = parse_template(format_template(t), FAMILY)
        assert t == t2

    def test_file_with_comments(self):
        text = "# family templates\n\ngrandparent(v1,v2) :- parent(v1,u), parent(u,v2).\n"
        ts = parse_template_file(text, FAMILY)
        assert len(ts) == 1

    def test_file_error_reports_line(self):
        text = "# comment\ngrandparent(v1,v2) :- uncle(v1,u).\n"
        with pytest.raises(UnknownPredicate) as e:
            parse_template_file(text, FAMILY)
        assert e.value.position[0] == 2


class TestValidate:
    def test_valid_template(self):
        t = parse_template("grandparent(v1,v2) :- parent(v1,u), parent(u,v2).", FAMILY)
        assert validate_template(t, FAMILY) == []

    def test_duplicate_head_var_reported(self):
        t = parse_template("grandparent(v1,v2) :- parent(v1,u), parent(u,v2).", FAMILY)
        bad = type(t)(head=t.head, head_vars=("v", "v"), extra_vars=t.extra_vars, body=t.body)
        codes = {v.code for v in validate_template(bad, FAMILY)}
        assert "DuplicateHeadVariable" in codes

    def test_task_kind_body_reported(self):
        head = Atom(GRANDPARENT, (Var("v1"), Var("v2")))
        body = (Atom(GRANDPARENT, (Var("v1"), Var("u"))),)
        from relcbm.logic import Template

        bad = Template(head=head, head_vars=("v1", "v2"), extra_vars=("u",), body=body)
        codes = {v.code for v in validate_template(bad, FAMILY)}
        assert "NonConceptBody" in codes


class TestSubstitution:
    def test_simpsons_chain(self):
        atoms = [
            Atom(PARENT, (Var("v1"), Var("v2"))),
            Atom(PARENT, (Var("v2"), Var("v3"))),
        ]
        theta = Substitution({"v1": "Abe", "v2": "Homer", "v3": "Bart"})
        out = apply_substitution(atoms, theta)
        assert [repr(a) for a in out] == ["parent(Abe,Homer)", "parent(Homer,Bart)"]
        assert all(a.is_ground for a in out)

    def test_empty_input(self):
        assert apply_substitution([], Substitution({"v": "x"})) == []

    def test_ground_atoms_unchanged(self):
        atoms = [Atom(PARENT, (Const("Abe"), Const("Homer")))]
        assert apply_substitution(atoms, Substitution({})) == atoms

    def test_unbound_variable(self):
        atoms = [Atom(PARENT, (Var("v1"), Var("v2")))]
        with pytest.raises(UnboundVariable):
            apply_substitution(atoms, Substitution({"v1": "Abe"}))


class TestEnumerate:
    def setup_method(self):
        self.t = parse_template("grandparent(v1,v2) :- parent(v1,u), parent(u,v2).", FAMILY)
        self.head = Substitution({"v1": "Abe", "v2": "Bart"})

    def test_width_one_matches_universe(self):
        gs = enumerate_substitutions(self.t, ["Abe", "Homer", "Bart"], head_binding=self.head)
        assert [s["u"] for s in gs] == ["Abe", "Homer", "Bart"]

    def test_width_two_count(self):
        schema = [PredicateSig("c", 2, CONCEPT), PredicateSig("y", 1, TASK)]
        t = parse_template("y(v) :- c(v,u1), c(u1,u2).", schema)
        gs = enumerate_substitutions(t, ["a", "b", "c"], head_binding=Substitution({"v": "a"}))
        # oracle: brute-force enumeration of X^w
        expected = list(itertools.product(["a", "b", "c"], repeat=2))
        assert [(s["u1"], s["u2"]) for s in gs] == expected
        assert len(gs) == 9

    def test_all_distinct_guard_count(self):
        schema = [PredicateSig("c", 2, CONCEPT), PredicateSig("y", 1, TASK)]
        t = parse_template("y(v) :- c(v,u1), c(u1,u2).", schema)
        head = Substitution({"v": "a"})
        gs = enumerate_substitutions(t, ["a", "b", "c"], guard=Guard.all_distinct(), head_binding=head)
        # oracle: filter the full 9-tuple enumeration
        expected = [
            (u1, u2)
            for u1, u2 in itertools.product(["a", "b", "c"], repeat=2)
            if len({u1, u2, "a"}) == 3
        ]
        assert [(s["u1"], s["u2"]) for s in gs] == expected
        assert len(gs) == len(expected) == 2

    def test_relation_guard(self):
        schema = [PredicateSig("class_0", 1, CONCEPT), PredicateSig("class_0", 1, TASK)]
        t = parse_template("class_0(v) :- class_0(u) [cite(v,u)].", schema)
        guard = t.guard_spec.bind(edges=[("a", "b"), ("a", "c"), ("b", "c")])
        gs = enumerate_substitutions(t, ["a", "b", "c", "d"], guard=guard,
                                     head_binding=Substitution({"v": "a"}))
        assert [s["u"] for s in gs] == ["b", "c"]

    def test_empty_universe(self):
        with pytest.raises(EmptyUniverse):
            enumerate_substitutions(self.t, [], head_binding=self.head)

    def test_exhaustive_grounding_counts(self):
        # |Θ| = |X|^w for |X| <= 5, w <= 3, no guard
        for n_x in range(1, 6):
            universe = [f"e{i}" for i in range(n_x)]
            for w in range(0, 4):
                schema = [PredicateSig("c", max(w, 1), CONCEPT), PredicateSig("y", 1, TASK)]
                body = "c(" + ",".join(f"u{j}" for j in range(w)) + ")." if w else "c(v)."
                t = parse_template(f"y(v) :- {body}", schema)
                assert t.width == w
                gs = enumerate_substitutions(t, universe, head_binding=Substitution({"v": "e0"}))
                assert len(gs) == n_x ** w

    @settings(max_examples=25, deadline=None)
    @given(n_x=st.integers(1, 5), w=st.integers(0, 3), seed=st.integers(0, 10))
    def test_determinism(self, n_x, w, seed):
        universe = [f"e{i}" for i in range(n_x)]
        schema = [PredicateSig("c", max(w, 1), CONCEPT), PredicateSig("y", 1, TASK)]
        body = "c(" + ",".join(f"u{j}" for j in range(w)) + ")." if w else "c(v)."
        t = parse_template(f"y(v) :- {body}", schema)
        head = Substitution({"v": universe[seed % n_x]})
        a = enumerate_substitutions(t, universe, head_binding=head)
        b = enumerate_substitutions(t, universe, head_binding=head)
        assert a == b

    def test_guard_monotone_and_order_preserving(self):
        schema = [PredicateSig("c", 2, CONCEPT), PredicateSig("y", 1, TASK)]
        t = parse_template("y(v) :- c(v,u1), c(u1,u2).", schema)
        head = Substitution({"v": "a"})
        full = enumerate_substitutions(t, ["a", "b", "c"], head_binding=head)
        guarded = enumerate_substitutions(t, ["a", "b", "c"], guard=Guard.all_distinct(),
                                          head_binding=head)
        assert len(guarded) <= len(full)
        order = {s: i for i, s in enumerate(full.substitutions)}
        positions = [order[s] for s in guarded.substitutions]
        assert positions == sorted(positions)


class TestInstantiate:
    def test_grandparent_rows(self):
        t = parse_template("grandparent(v1,v2) :- parent(v1,u), parent(u,v2).", FAMILY)
        rows = instantiate_bodies(t, Substitution({"v1": "A", "v2": "B"}), ["A", "H", "B"])
        rendered = [[repr(a) for a in body] for _, body in rows]
        assert rendered == [
            ["parent(A,A)", "parent(A,B)"],
            ["parent(A,H)", "parent(H,B)"],
            ["parent(A,B)", "parent(B,B)"],
        ]

    def test_width_zero_single_row(self):
        t = parse_template("y(v) :- c1(v), c2(v).", UNARY)
        rows = instantiate_bodies(t, Substitution({"v": "a"}), ["a", "b"])
        assert len(rows) == 1
        assert [repr(a) for a in rows[0][1]] == ["c1(a)", "c2(a)"]

    def test_flat_row_atom_count(self):
        schema = [
            PredicateSig("c_u", 1, CONCEPT),
            PredicateSig("c_b", 2, CONCEPT),
            PredicateSig("y", 1, TASK),
        ]
        flat = build_flat_template(schema, ["a", "b", "c"])
        body = flat.ground_body(["a"], ["a", "b", "c"])
        # oracle: k1*|X| + k2*|X|^2
        assert len(body) == 1 * 3 + 1 * 9 == flat.body_size


class TestFlat:
    def test_binary_size_two(self):
        schema = [PredicateSig("c", 2, CONCEPT), PredicateSig("y", 1, TASK)]
        flat = build_flat_template(schema, ["a", "b"])
        assert flat.body_size == 4

    def test_two_unary_size_three(self):
        schema = [
            PredicateSig("c1", 1, CONCEPT),
            PredicateSig("c2", 1, CONCEPT),
            PredicateSig("y", 1, TASK),
        ]
        flat = build_flat_template(schema, ["a", "b", "c"])
        assert flat.body_size == 6

    def test_universe_mismatch(self):
        schema = [PredicateSig("c", 2, CONCEPT), PredicateSig("y", 1, TASK)]
        flat = build_flat_template(schema, ["a", "b", "c"])
        with pytest.raises(UniverseMismatch):
            flat.ground_body(["a"], ["a", "b", "c", "d"])

    def test_head_entities_first(self):
        schema = [PredicateSig("c", 1, CONCEPT), PredicateSig("y", 1, TASK)]
        flat = build_flat_template(schema, ["a", "b", "c"])
        body_b = flat.ground_body(["b"], ["a", "b", "c"])
        assert [repr(a) for a in body_b] == ["c(b)", "c(a)", "c(c)"]

    def test_deterministic_layout(self):
        schema = [PredicateSig("c", 2, CONCEPT), PredicateSig("y", 1, TASK)]
        flat = build_flat_template(schema, ["a", "b", "c"])
        assert flat.ground_body(["b"], ["a", "b", "c"]) == flat.ground_body(["b"], ["a", "b", "c"])


class TestSelfTemplate:
    def test_unary_concepts(self):
        schema = [
            PredicateSig("rock", 1, CONCEPT),
            PredicateSig("paper", 1, CONCEPT),
            PredicateSig("wins", 1, TASK),
        ]
        t = build_self_template(schema, schema[-1])
        assert t.width == 0
        assert [repr(a) for a in t.body] == ["rock(v)", "paper(v)"]

    def test_binary_concepts_become_self_pairs(self):
        schema = [PredicateSig("larger", 2, CONCEPT), PredicateSig("correct", 1, TASK)]
        t = build_self_template(schema, schema[-1])
        assert [repr(a) for a in t.body] == ["larger(v,v)"]
