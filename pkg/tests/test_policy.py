import pytest
from hypothesis import given, settings, strategies as st

from civicnet import policy
from civicnet.policy import (
    Action,
    AndExpr,
    Call,
    Comparison,
    Literal,
    NotExpr,
    OrExpr,
    PolicySyntaxError,
    TriggerMismatch,
    UnknownFunction,
    evaluate,
    make_event,
    parse_policy,
    pretty,
)

STANDARD = (
    'when access_request if consent_active(event.grantor, event.requester, event.document) '
    'then release_document(event.document, event.requester) and record("DocumentAccessed")'
)


class StubView:
    def __init__(self, active=False, attested=False):
        self._active = active
        self._attested = attested
        self.calls = []

    def consent_active(self, grantor, grantee, document_id, now):
        self.calls.append(("consent_active", grantor, grantee, document_id, now))
        return self._active

    def attested_by(self, identity, authority):
        self.calls.append(("attested_by", identity, authority))
        return self._attested


def test_standard_policy_parses():
    ast = parse_policy(STANDARD)
    assert ast.trigger == "access_request"
    assert [a.name for a in ast.actions] == ["release_document", "record"]
    assert isinstance(ast.condition, Call)


def test_missing_then_is_syntax_error_at_the_right_spot():
    source = "when e if now() > 5 release_document(event.doc, event.who)"
    with pytest.raises(PolicySyntaxError) as err:
        parse_policy(source)
    assert err.value.line == 1
    assert "then" in err.value.expected
    assert err.value.got == "release_document"


def test_and_binds_tighter_than_or():
    ast = parse_policy('when e if now() > 1 and now() > 2 or now() > 3 then deny("x")')
    assert isinstance(ast.condition, OrExpr)
    assert isinstance(ast.condition.parts[0], AndExpr)
    assert isinstance(ast.condition.parts[1], Comparison)


def test_not_binds_tightest():
    ast = parse_policy('when e if not now() > 1 and now() > 2 then deny("x")')
    cond = ast.condition
    assert isinstance(cond, AndExpr)
    assert isinstance(cond.parts[0], NotExpr)


def test_parentheses_group():
    ast = parse_policy('when e if now() > 1 and (now() > 2 or now() > 3) then deny("x")')
    cond = ast.condition
    assert isinstance(cond, AndExpr)
    assert isinstance(cond.parts[1], OrExpr)


def test_unknown_function_at_parse_time():
    with pytest.raises(UnknownFunction):
        parse_policy('when e if frobnicate(event.x) then deny("x")')
    with pytest.raises(UnknownFunction):
        parse_policy("when e if now() > 1 then launch_missiles()")


def test_syntax_error_has_line_and_col():
    with pytest.raises(PolicySyntaxError) as err:
        parse_policy("when e if ((now() > 1 then deny()")
    assert err.value.line == 1
    assert err.value.col > 10


def test_string_escapes():
    ast = parse_policy('when e if event.name == "say \\"hi\\"" then deny("why")')
    comparison = ast.condition
    assert comparison.right == Literal('say "hi"')


# --- evaluation -------------------------------------------------------------------


def std_event(**over):
    fields = {"grantor": "aa", "requester": "bb", "document": "doc-1"}
    fields.update(over)
    return make_event("access_request", fields)


def test_condition_true_yields_actions():
    ast = parse_policy(STANDARD)
    actions = evaluate(ast, std_event(), StubView(active=True), now=1234)
    assert actions == [
        Action("release_document", ("doc-1", "bb")),
        Action("record", ("DocumentAccessed",)),
    ]


def test_condition_false_yields_deny():
    ast = parse_policy(STANDARD)
    actions = evaluate(ast, std_event(), StubView(active=False), now=1234)
    assert actions == [Action("deny", ("policy condition not met",))]


def test_consent_active_gets_now():
    ast = parse_policy(STANDARD)
    view = StubView(active=True)
    evaluate(ast, std_event(), view, now=777)
    assert view.calls[0] == ("consent_active", "aa", "bb", "doc-1", 777)


def test_missing_event_field_surfaces_as_deny():
    ast = parse_policy(STANDARD)
    event = make_event("access_request", {"grantor": "aa", "requester": "bb"})
    actions = evaluate(ast, event, StubView(active=True), now=0)
    assert actions[0].kind == "deny"
    assert "document" in actions[0].args[0]


def test_type_mismatch_surfaces_as_deny():
    ast = parse_policy('when e if event.count > "three" then deny("x")')
    event = make_event("e", {"count": 5})
    actions = evaluate(ast, event, StubView(), now=0)
    assert actions[0].kind == "deny"
    assert "integer" in actions[0].args[0]


def test_trigger_mismatch_raises():
    ast = parse_policy(STANDARD)
    with pytest.raises(TriggerMismatch):
        evaluate(ast, make_event("other", {}), StubView(), now=0)


def test_not_and_or_semantics():
    ast = parse_policy(
        'when e if not event.a == 1 or event.b == 2 and event.c == 3 then notify(event.who, "m")'
    )
    view = StubView()
    # not(a==1) or (b==2 and c==3)
    truth = lambda a, b, c: evaluate(
        ast, make_event("e", {"a": a, "b": b, "c": c, "who": "x"}), view, 0
    )[0].kind
    assert truth(0, 0, 0) == "notify"
    assert truth(1, 2, 3) == "notify"
    assert truth(1, 2, 0) == "deny"


def test_comparison_operators():
    for op, lhs, rhs, expected in [
        ("==", 1, 1, True), ("!=", 1, 2, True), ("<", 1, 2, True),
        ("<=", 2, 2, True), (">", 3, 2, True), (">=", 1, 2, False),
    ]:
        ast = parse_policy(f'when e if event.x {op} event.y then deny("d")')
        result = evaluate(ast, make_event("e", {"x": lhs, "y": rhs}), StubView(), 0)
        got = result[0].kind == "deny" and result[0].args == ("policy condition not met",)
        assert got != expected, (op, lhs, rhs)


def test_now_in_comparison():
    ast = parse_policy('when e if now() >= 1000 then record("AuthEvent")')
    assert evaluate(ast, make_event("e", {}), StubView(), 1000)[0].kind == "record"
    assert evaluate(ast, make_event("e", {}), StubView(), 999)[0].kind == "deny"


def test_attested_by_builtin():
    ast = parse_policy(
        "when register if attested_by(event.identity, event.authority) then record(\"AuthEvent\")"
    )
    event = make_event("register", {"identity": "aa", "authority": "bb"})
    assert evaluate(ast, event, StubView(attested=True), 0)[0].kind == "record"
    assert evaluate(ast, event, StubView(attested=False), 0)[0].kind == "deny"


def test_evaluation_is_deterministic():
    ast = parse_policy(STANDARD)
    runs = [evaluate(ast, std_event(), StubView(active=True), 42) for _ in range(3)]
    assert runs[0] == runs[1] == runs[2]


def test_termination_bounded_by_ast_size():
    # "not" takes a primary, so deep negation nests through parentheses
    deep = "when e if " + "not (" * 50 + "now() > 1" + ")" * 50 + " then deny(\"x\")"
    ast = parse_policy(deep)
    evaluate(ast, make_event("e", {}), StubView(), 5)  # completes


# --- pretty-printer roundtrip -------------------------------------------------------


CASES = [
    STANDARD,
    'when e if now() > 1 and now() > 2 or not now() > 3 then deny("x")',
    'when e if (now() > 1 or now() > 2) and now() > 3 then deny("x") and notify(event.who, "hello")',
    'when e if event.a == "s" then record("AuthEvent", event.a)',
    'when e if not (now() > 1 and now() > 2) then deny("x")',
    'when e if not (not (now() > 1)) then deny("x")',
]


@pytest.mark.parametrize("source", CASES)
def test_pretty_roundtrip(source):
    ast = parse_policy(source)
    assert parse_policy(pretty(ast)) == ast


def test_shipped_policy_file_matches_bootstrap_source():
    from pathlib import Path

    from civicnet.world import DEFAULT_POLICY_SOURCE

    shipped = (Path(__file__).parent.parent / "policies" / "access_default.pol").read_text()
    assert shipped == DEFAULT_POLICY_SOURCE
    ast = parse_policy(shipped)
    assert ast.trigger == "access_request"
    assert ast.actions[0].name == "release_document"


@settings(max_examples=60, deadline=None)
@given(
    a=st.integers(min_value=0, max_value=3),
    b=st.integers(min_value=0, max_value=3),
    connective=st.sampled_from(["and", "or"]),
    negate=st.booleans(),
)
def test_pretty_roundtrip_property(a, b, connective, negate):
    prefix = "not " if negate else ""
    source = (
        f'when e if {prefix}event.x > {a} {connective} event.y <= {b} '
        f'then notify(event.who, "m") and record("AuthEvent")'
    )
    ast = parse_policy(source)
    assert parse_policy(pretty(ast)) == ast
