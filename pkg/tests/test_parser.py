import pytest
from hypothesis import given, settings, strategies as st

from ecalp.parser import (
    ParseError, format_clause, format_term, parse_program, parse_query, parse_term,
)
from ecalp.terms import (
    BLANK, Atom, Blank, ListTerm, Number, Struct, Text, TimePoint, TimeSpan, Var, make_list,
    variant_key,
)

FLIGHT_LISTING = (
    "eca( every10Sec(), detect(request(Customer, Destination),T), "
    "find(Destination, Flight), book(Customer, Flight), !, "
    "notify(Customer, bookedUp(Destination)) ).\n"
    "every10Sec() :- sysTime(T), interval( timespan(0,0,0,10),T).\n"
    "detect(request(Customer, FlightDestination),T):- "
    "occurs(request(Customer,FlightDestination),T), consume(request(Customer,FlightDestination)).\n"
    "find(Destination,Flight) :- flight(Flight, Destination).\n"
    "book(Cust, Flight) :- bookFlight(Cust, Flight), sendMessage(Cust, booked(Flight)).\n"
    "notify(Customer, Message) :- sendMessage(Customer, Message).\n"
)


def test_fact_and_rule():
    prog = parse_program("f(1). r(X):-f(X).")
    assert len(prog.clauses) == 2
    assert prog.clauses[0].is_fact and not prog.clauses[1].is_fact
    x = prog.clauses[1].head.args[0]
    assert prog.clauses[1].body == (Struct("f", (x,)),)


def test_flight_listing_shape():
    prog = parse_program(FLIGHT_LISTING)
    assert len(prog.eca_rules) == 1
    assert len(prog.derivation_rules) == 5
    rule = prog.eca_rules[0]
    assert len(rule.args) == 6
    assert rule.args[4] == Atom("!")
    assert not any(isinstance(p, Blank) for p in rule.args)


def test_integrity_fact_listed():
    prog = parse_program("neg(p(x)). integrity(xor(p(x), neg(p(x)))).")
    assert prog.integrity_constraints == [parse_term("xor(p(x), neg(p(x)))")]


@pytest.mark.parametrize("arity,blank_slots", [
    (2, {0, 1, 4, 5}), (3, {0, 4, 5}), (4, {0, 5}), (5, {5}), (6, set()),
])
def test_eca_arity_normalization(arity, blank_slots):
    args = ", ".join(f"p{i}" for i in range(arity))
    (rule,) = parse_program(f"eca({args}).").eca_rules
    assert {i for i, p in enumerate(rule.args) if isinstance(p, Blank)} == blank_slots


def test_bare_underscore_in_eca_is_blank():
    (rule,) = parse_program("eca(_, e, _, a, _, _).").eca_rules
    assert rule.args[0] is BLANK and rule.args[2] == BLANK
    assert rule.args[1] == Atom("e")


def test_bad_eca_arity_and_rule_head():
    with pytest.raises(ParseError):
        parse_program("eca(a).")
    with pytest.raises(ParseError):
        parse_program("eca(a, b) :- c.")


def test_not_in_head_rejected():
    with pytest.raises(ParseError):
        parse_program("not(p) :- q.")


def test_semicolon_rejected_in_goals():
    with pytest.raises(ParseError):
        parse_program("p :- a ; b.")


def test_queries():
    (lit,) = parse_query("holdsInterval([a,b],Interval)?")
    assert lit.functor == "holdsInterval"
    f, g = parse_query("f(X), g(X)?")
    assert f.args[0] == g.args[0]
    with pytest.raises(ParseError):
        parse_query("?")


def test_directives_collected():
    prog = parse_program("f(1).\n:- add(m, \"g(2).\").\nq(X)?\n")
    assert len(prog.clauses) == 1
    assert len(prog.directives) == 2


def test_comments_and_strings():
    prog = parse_program('% comment\nf("a % not a comment"). % trailing\n')
    assert prog.clauses[0].head.args[0] == Text("a % not a comment")


def test_format_examples():
    assert format_term(TimePoint(2005, 1, 1, 0, 0, 1)) == "datetime(2005,1,1,0,0,1)"
    assert format_term(Var("Foo")) == "Foo"
    t = parse_term("f(a,[1,2|T])")
    assert variant_key(parse_term(format_term(t))) == variant_key(t)


def test_time_literals_parse_to_values():
    assert parse_term("datetime(2005,1,1,0,0,1)") == TimePoint(2005, 1, 1, 0, 0, 1)
    assert parse_term("timespan(0,0,0,10)") == TimeSpan(0, 0, 0, 10)


def test_error_position():
    with pytest.raises(ParseError) as info:
        parse_program("f(1).\ng(.\n")
    assert info.value.line == 2


def test_clause_order_matches_source():
    text = "".join(f"p{i}(x).\n" for i in range(20))
    assert [c.head.functor for c in parse_program(text).clauses] == [f"p{i}" for i in range(20)]


# -- properties ----------------------------------------------------------------

_names = st.sampled_from(["a", "foo", "bar_1", "zZ", "hello world", "It's", "[]x", "is"])
_leaf = st.one_of(
    st.builds(Atom, _names),
    st.builds(Number, st.integers(-10 ** 6, 10 ** 6)),
    st.builds(Text, st.text(max_size=8)),
    st.builds(Var, st.sampled_from(["X", "Y", "Foo", "_Bar"])),
    st.builds(lambda d: TimePoint.from_datetime(d.replace(microsecond=0)), st.datetimes()),
    st.builds(TimeSpan, *(st.integers(0, 50) for _ in range(4))),
)


def _term():
    return st.recursive(
        _leaf,
        lambda kids: st.one_of(
            st.builds(lambda n, xs: Struct(n, tuple(xs)),
                      st.sampled_from(["f", "g", "=", "<", ",", "-", "+", "is", "Quoted F"]),
                      st.lists(kids, min_size=1, max_size=3)),
            st.builds(lambda xs, tail: make_list(xs, tail if xs else None),
                      st.lists(kids, max_size=3), st.sampled_from([None, Var("T")])),
        ),
        max_leaves=10,
    )


@settings(max_examples=300)
@given(_term())
def test_format_parse_round_trip(t):
    back = parse_term(format_term(t))
    assert variant_key(back) == variant_key(t)


@settings(max_examples=300)
@given(st.text(alphabet="abXY_(),.:-[]|\"'%?! \n019=<", max_size=40))
def test_parser_never_crashes(text):
    try:
        prog = parse_program(text)
    except ParseError:
        return
    for c in prog.clauses:
        parse_program(format_clause(c))
