import itertools
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridsel.classad import (
    UNDEFINED,
    AttrRef,
    Binary,
    ClassAd,
    ClassAdError,
    ClassAdSyntaxError,
    Error,
    Literal,
    MatchContext,
    Unary,
    evaluate,
    format_expression,
    match_ads,
    parse_classad,
    parse_expression,
    parse_quantity,
    rank_candidates,
    references,
    serialize,
)
from strategies import classads, expressions

STORAGE_AD = """
hostname = "hugo.mcs.anl.gov";
volume = "/dev/sandbox";
availableSpace = 50G;
MaxRDBandwidth = 75K/Sec;
requirement = other.reqdSpace < 10G && other.reqdRDBandwidth < 75K/Sec;
"""

APPLICATION_AD = """
hostname = "comet.xyz.com";
reqdSpace = 5G;
reqdRDBandwidth = 50K/Sec;
rank = other.availableSpace;
requirement = other.availableSpace > 5G && other.MaxRDBandwidth > 50K/Sec;
"""


def ev(text, self_ad=None, other_ad=None):
    return evaluate(parse_expression(text), MatchContext(self_ad or ClassAd(), other_ad))


# -- parsing -----------------------------------------------------------------


def test_parse_storage_ad():
    ad = parse_classad(STORAGE_AD)
    assert list(ad) == ["hostname", "volume", "availableSpace", "MaxRDBandwidth", "requirement"]
    assert ad["availableSpace"] == Literal(53687091200)
    assert ad["maxrdbandwidth"] == Literal(76800)
    assert ad["hostname"] == Literal("hugo.mcs.anl.gov")
    assert ad.requirement == Binary(
        "&&",
        Binary("<", AttrRef("reqdSpace", "other"), Literal(10 * 2**30)),
        Binary("<", AttrRef("reqdRDBandwidth", "other"), Literal(75 * 1024)),
    )


def test_tex_quotes_as_printed():
    ad = parse_classad("hostname = ``hugo.mcs.anl.gov'';\nvolume = ``/dev/sandbox'';")
    assert ad["hostname"] == Literal("hugo.mcs.anl.gov")
    assert ad["volume"] == Literal("/dev/sandbox")


def test_minimal_ad():
    ad = parse_classad("a = 1;")
    assert len(ad) == 1
    assert ad["a"] == Literal(1)
    assert evaluate(ad["a"]) == 1


def test_case_insensitive_names():
    ad = parse_classad("AvailableSpace = 3;")
    assert "availablespace" in ad
    assert ev("other.AVAILABLESPACE", other_ad=ad) == 3


@pytest.mark.parametrize(
    "text, line, column",
    [
        ("a = ;", 1, 5),
        ("a = 1;\nb = (2 + ;", 2, 10),
        ("a = 1", 1, 6),
        ('a = "open;', 1, 5),
        ("a = 1 $ 2;", 1, 7),
    ],
)
def test_syntax_errors_report_position(text, line, column):
    with pytest.raises(ClassAdSyntaxError) as info:
        parse_classad(text)
    assert (info.value.line, info.value.column) == (line, column)


def test_duplicate_attribute_rejected():
    with pytest.raises(ClassAdSyntaxError, match="duplicate"):
        parse_classad("a = 1;\nA = 2;")


def test_both_requirement_spellings_rejected():
    with pytest.raises(ClassAdSyntaxError, match="duplicate"):
        parse_classad("requirement = true;\nrequirements = true;")


def test_requirement_spellings_are_synonyms():
    ad = parse_classad("requirements = false;")
    assert ad.requirement == Literal(False)
    assert ad["requirement"] == Literal(False)


def test_unknown_unit_suffix():
    with pytest.raises(ClassAdSyntaxError, match="unknown unit suffix 'Q'"):
        parse_classad("a = 10Q;")
    with pytest.raises(ClassAdSyntaxError, match="unknown unit suffix"):
        parse_classad("a = 10KB;")


@given(st.integers(0, 2**20), st.sampled_from("KMGTkmgt"), st.booleans())
def test_unit_expansion(n, suffix, rate):
    k = "KMGT".index(suffix.upper()) + 1
    text = f"{n}{suffix}" + ("/Sec" if rate else "")
    assert parse_quantity(text) == n * 2 ** (10 * k)
    assert isinstance(parse_quantity(text), int)


def test_real_with_unit_and_negative_literals():
    assert parse_quantity("1.5G") == 1.5 * 2**30
    assert parse_quantity("-3") == -3
    assert parse_expression("-3") == Literal(-3)
    assert parse_expression("-(3)") == Unary("-", Literal(3))


def test_integer_literal_range():
    assert parse_quantity("-9223372036854775808") == -(2**63)
    with pytest.raises(ClassAdSyntaxError, match="out of range"):
        parse_expression("9223372036854775808")


def test_precedence():
    assert parse_expression("1 + 2 * 3") == Binary("+", Literal(1), Binary("*", Literal(2), Literal(3)))
    assert parse_expression("a || b && c") == Binary(
        "||", AttrRef("a"), Binary("&&", AttrRef("b"), AttrRef("c"))
    )
    assert parse_expression("!a == b") == Binary("==", Unary("!", AttrRef("a")), AttrRef("b"))
    assert ev("10 - 4 - 3") == 3
    assert ev("2 * 3 < 7 && 1 + 1 == 2") is True


def test_serializer_format():
    ad = parse_classad(STORAGE_AD)
    text = serialize(ad)
    assert text.splitlines()[2] == "availableSpace = 53687091200;"
    assert text.splitlines()[4] == (
        "requirement = other.reqdSpace < 10737418240 && other.reqdRDBandwidth < 76800;"
    )
    assert parse_classad(text) == ad


@pytest.mark.parametrize(
    "expr",
    [
        Unary("-", Literal(5)),
        Unary("-", Literal(-5)),
        Binary("-", AttrRef("a"), Literal(-5)),
        Binary("/", Literal(5), AttrRef("sec")),
        Binary("/", Binary("*", AttrRef("a"), Literal(5)), AttrRef("Sec")),
        Binary("-", AttrRef("a"), Binary("-", AttrRef("b"), AttrRef("c"))),
        Unary("!", Literal(-0.0)),
        Literal(1e-05),
        Literal('quo"te\\n\n'),
    ],
)
def test_format_reparses(expr):
    assert parse_expression(format_expression(expr)) == expr


@settings(max_examples=500)
@given(classads())
def test_serialize_parse_round_trip(ad):
    text = serialize(ad)
    again = parse_classad(text)
    assert again == ad
    assert serialize(again) == text


# -- evaluation ----------------------------------------------------------------


def test_policy_against_application_request():
    app = parse_classad(APPLICATION_AD)
    assert ev("other.reqdSpace < 10G", other_ad=app) is True


def test_arithmetic_and_coercion():
    assert ev("1 + 1") == 2
    assert isinstance(ev("1 + 1"), int)
    assert ev("1 + 0.5") == 1.5
    assert ev("7 / 2") == 3
    assert ev("-7 / 2") == -3
    assert ev("7.0 / 2") == 3.5
    assert ev("3 < 3.5") is True
    assert ev("2 == 2.0") is True


def test_division_by_zero_is_error():
    assert isinstance(ev("1 / 0"), Error)
    assert isinstance(ev("1.0 / 0"), Error)


def test_integer_overflow_is_error():
    assert isinstance(ev("9223372036854775807 + 1"), Error)
    assert isinstance(ev("-9223372036854775808 / -1"), Error)
    assert isinstance(ev("1e308 * 10"), Error)


def test_text_semantics():
    assert ev('"a" == "a"') is True
    assert ev('"a" == "A"') is False
    assert ev('"a" != "b"') is True
    assert isinstance(ev('"a" + 1'), Error)
    assert isinstance(ev('"a" < "b"'), Error)
    assert isinstance(ev('"a" == 1'), Error)


def test_type_faults():
    assert isinstance(ev("!3"), Error)
    assert isinstance(ev("-true"), Error)
    assert isinstance(ev("1 && true"), Error)
    assert isinstance(ev("true < false"), Error)
    assert ev("true == true") is True


def test_undefined_propagation():
    assert ev("missing > 3") is UNDEFINED
    assert ev("false && (missing > 3)") is False
    assert ev("missing + 1") is UNDEFINED
    assert ev("-missing") is UNDEFINED
    assert ev("!missing") is UNDEFINED
    assert ev("other.x") is UNDEFINED


def test_error_dominates_undefined():
    assert isinstance(ev('missing + ("a" + 1)'), Error)


T, F, U = True, False, UNDEFINED
_SYMBOL = {True: "true", False: "false", UNDEFINED: "missing"}


def kleene_and(a, b):
    if a is F or b is F:
        return F
    if a is T and b is T:
        return T
    return U


def kleene_or(a, b):
    if a is T or b is T:
        return T
    if a is F and b is F:
        return F
    return U


@pytest.mark.parametrize("a, b", list(itertools.product([T, F, U], repeat=2)))
def test_three_valued_truth_table(a, b):
    assert ev(f"{_SYMBOL[a]} && {_SYMBOL[b]}") is kleene_and(a, b)
    assert ev(f"{_SYMBOL[a]} || {_SYMBOL[b]}") is kleene_or(a, b)


def test_other_scope_swaps_on_resolution():
    # x in b refers back to a's y through "other"
    a = parse_classad("y = 10; probe = other.x;")
    b = parse_classad("y = 20; x = other.y + y;")
    assert evaluate(a["probe"], MatchContext(a, b)) == 30


def test_bare_names_resolve_in_own_ad_only():
    a = parse_classad("probe = x;")
    b = parse_classad("x = 1;")
    assert evaluate(a["probe"], MatchContext(a, b)) is UNDEFINED


def test_circular_reference_is_error():
    ad = parse_classad("a = b + 1; b = a;")
    assert isinstance(evaluate(ad["a"], ad), Error)


@settings(max_examples=200)
@given(expressions, classads(), classads())
def test_evaluation_is_pure(expr, a, b):
    ctx = MatchContext(a, b)
    first = evaluate(expr, ctx)
    second = evaluate(expr, ctx)
    assert type(first) is type(second)
    if isinstance(first, float) and math.isnan(first):
        pytest.fail("NaN escaped evaluation")
    assert first == second


def test_references():
    expr = parse_expression("other.a > b && other.A < 3")
    assert references(expr) == {AttrRef("a", "other"), AttrRef("b")}


# -- matching ------------------------------------------------------------------


def test_example_ads_match():
    storage, app = parse_classad(STORAGE_AD), parse_classad(APPLICATION_AD)
    result = match_ads(app, storage)
    assert result.matched
    assert result.self_requirement is True and result.other_requirement is True
    assert result.rank == 50 * 2**30


def test_vacuous_requirements_match():
    a = parse_classad("requirement = true;")
    assert match_ads(a, parse_classad("requirement = true;")).matched


def test_policy_rejects_large_request():
    storage = parse_classad(STORAGE_AD)
    app = parse_classad(APPLICATION_AD.replace("reqdSpace = 5G", "reqdSpace = 20G"))
    result = match_ads(app, storage)
    assert not result.matched
    assert result.self_requirement is True
    assert result.other_requirement is False


def test_missing_requirement_is_willing_and_missing_rank_undefined():
    result = match_ads(parse_classad("a = 1;"), parse_classad("b = 2;"))
    assert result.matched
    assert result.rank is UNDEFINED


def test_undefined_requirement_does_not_match():
    result = match_ads(parse_classad("requirement = other.nope > 1;"), ClassAd())
    assert not result.matched
    assert result.self_requirement is UNDEFINED


@settings(max_examples=300)
@given(classads(), classads())
def test_match_outcome_symmetric(a, b):
    assert match_ads(a, b).matched == match_ads(b, a).matched


# -- ranking -------------------------------------------------------------------


def storage(host, avail, policy=None, volume="/data"):
    lines = [f'hostname = "{host}";', f'volume = "{volume}";', f"availableSpace = {avail};"]
    if policy:
        lines.append(f"requirement = {policy};")
    return parse_classad("\n".join(lines))


def test_rank_prefers_more_space():
    app = parse_classad(APPLICATION_AD.replace(" && other.MaxRDBandwidth > 50K/Sec", ""))
    small, big = storage("a.org", "20G"), storage("b.org", "50G")
    ranked = rank_candidates(app, [small, big])
    assert [ad for ad, _ in ranked] == [big, small]


def test_rank_single_candidate():
    app = parse_classad("rank = other.availableSpace;")
    only = storage("a.org", "1G")
    ranked = rank_candidates(app, [only])
    assert len(ranked) == 1 and ranked[0][0] is only


def test_rank_ties_by_hostname_then_volume():
    app = parse_classad("rank = 1;")
    c = [storage("B.org", 1, volume="/z"), storage("a.org", 1), storage("b.org", 1, volume="/a")]
    ranked = [ad for ad, _ in rank_candidates(app, c)]
    assert ranked == [c[1], c[2], c[0]]


_RANKS = [None, "other.availableSpace", "other.availableSpace / 3", "0", "other.flag",
          "other.availableSpace * -1", "other.speed + other.availableSpace", "other.missing"]
_REQS = [None, "other.availableSpace > 10", "other.speed >= 2.5 || other.flag", "other.flag"]
_POLICIES = [None, "other.need < availableSpace", "other.need > 50", "other.flag"]


def random_market(rng: random.Random):
    def optional(name, choices):
        expr = rng.choice(choices)
        return f"{name} = {expr};" if expr else ""

    requester = parse_classad(
        f"need = {rng.randint(0, 100)}; flag = {rng.choice(['true', 'false'])};"
        + optional("rank", _RANKS) + optional("requirement", _REQS)
    )
    candidates = []
    for _ in range(rng.randint(0, 12)):
        parts = [
            f'hostname = "h{rng.randint(0, 5)}.{rng.choice(["org", "ORG"])}";',
            f'volume = "/v{rng.randint(0, 2)}";',
            f"availableSpace = {rng.randint(0, 100)};",
            f"speed = {rng.choice([1, 2.5, 3.75])};",
        ]
        if rng.random() < 0.5:
            parts.append(f"flag = {rng.choice(['true', 'false'])};")
        parts.append(optional("requirement", _POLICIES))
        candidates.append(parse_classad("".join(parts)))
    return requester, candidates


def brute_force_ranking(requester, candidates):
    rows = []
    for i, cand in enumerate(candidates):
        mine = evaluate(requester["requirement"], MatchContext(requester, cand)) if "requirement" in requester else True
        theirs = evaluate(cand["requirement"], MatchContext(cand, requester)) if "requirement" in cand else True
        if mine is not True or theirs is not True:
            continue
        rank = evaluate(requester["rank"], MatchContext(requester, cand)) if "rank" in requester else 0
        if isinstance(rank, bool) or not isinstance(rank, (int, float)):
            rank = 0
        rows.append((-rank, evaluate(cand["hostname"]).lower(), evaluate(cand["volume"]), i))
    return [candidates[row[-1]] for row in sorted(rows)]


@pytest.mark.parametrize("seed", range(200))
def test_rank_matches_brute_force(seed):
    requester, candidates = random_market(random.Random(seed))
    got = [ad for ad, _ in rank_candidates(requester, candidates)]
    expected = brute_force_ranking(requester, candidates)
    assert [id(a) for a in got] == [id(a) for a in expected]


@pytest.mark.parametrize("seed", range(50))
@pytest.mark.parametrize("factor", [0.5, 3, 1000])
def test_rank_scaling_keeps_order(seed, factor):
    requester, candidates = random_market(random.Random(seed))
    if requester.rank is None:
        requester = requester.with_attribute("rank", parse_expression("other.availableSpace"))
    scaled = requester.with_attribute("rank", Binary("*", requester.rank, Literal(factor)))
    base = [id(ad) for ad, _ in rank_candidates(requester, candidates)]
    assert [id(ad) for ad, _ in rank_candidates(scaled, candidates)] == base


def test_classad_construction_errors():
    with pytest.raises(ClassAdError):
        ClassAd([("a", Literal(1)), ("A", Literal(2))])
    with pytest.raises(ClassAdError):
        ClassAd([("other", Literal(1))])
    with pytest.raises(ClassAdError):
        ClassAd([("a", 1)])


def test_with_attribute_replaces_in_place():
    ad = parse_classad("a = 1; b = 2;")
    new = ad.with_attribute("A", Literal(5))
    assert list(new) == ["A", "b"] and new["a"] == Literal(5)
    assert ad["a"] == Literal(1)
