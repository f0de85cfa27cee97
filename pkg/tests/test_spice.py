import math

import pytest

from circret.spice import (
    BadNumber,
    DeviceKind,
    DuplicateDeviceName,
    LexError,
    NetlistIR,
    TooFewTerminals,
    UnknownCardPrefix,
    UnterminatedSubckt,
    parse_netlist,
    parse_value,
    to_spice,
)


@pytest.mark.parametrize(
    "tok, want",
    [("10k", 1.0e4), ("1meg", 1.0e6), ("1m", 1.0e-3), ("2.2u", 2.2e-6), ("1MEG", 1e6), ("4.7pF", 4.7e-12),
     ("10kOhm", 1e4), ("1e3", 1e3), (".5n", 0.5e-9), ("-3", -3.0), ("100", 100.0), ("1f", 1e-15), ("2g", 2e9),
     ("1t", 1e12)],
)
def test_parse_value(tok, want):
    assert math.isclose(parse_value(tok), want, rel_tol=1e-12)


@pytest.mark.parametrize("tok", ["abc", "", "1.2.3", "k10", "1e999"])
def test_parse_value_rejects(tok):
    with pytest.raises(BadNumber):
        parse_value(tok)


def test_resistor_card():
    ir = parse_netlist("R1 in out 10k")
    (dev,) = ir.devices
    assert dev.name == "r1" and dev.kind is DeviceKind.RESISTOR
    assert dev.terminals == [("t1", "in"), ("t2", "out")]
    assert dev.params["value"] == 1.0e4
    assert ir.nets == {"in", "out"}


def test_mosfet_card():
    ir = parse_netlist("M1 d g s b NMOS W=10u L=1u")
    (dev,) = ir.devices
    assert dev.kind is DeviceKind.NMOS
    assert [p for p, _ in dev.terminals] == ["d", "g", "s", "b"]
    assert math.isclose(dev.params["w"], 1.0e-5) and math.isclose(dev.params["l"], 1.0e-6)
    assert dev.model_ref == "nmos"


def test_pmos_from_model_card():
    ir = parse_netlist("* t\n.model mp pmos (level=1)\nm1 d g s b mp w=1u l=1u\n")
    assert ir.devices[0].kind is DeviceKind.PMOS


def test_subckt_instance():
    text = """* amp
.subckt OPA p n o
R1 p o 1k
R2 n o 1k
.ends
X1 a b c OPA
"""
    ir = parse_netlist(text)
    (x1,) = ir.devices
    assert x1.kind is DeviceKind.SUBCKT and x1.model_ref == "opa"
    assert x1.terminals == [("p", "a"), ("n", "b"), ("o", "c")]
    assert ir.subckts["opa"].terminals == ["p", "n", "o"]
    assert len(ir.subckts["opa"].body.devices) == 2


def test_too_few_terminals_line():
    with pytest.raises(TooFewTerminals) as exc:
        parse_netlist("M1 d g NMOS")
    assert exc.value.line == 1


def test_errors():
    with pytest.raises(UnterminatedSubckt):
        parse_netlist("* t\n.subckt a x y\nr1 x y 1\n")
    with pytest.raises(UnterminatedSubckt):
        parse_netlist("* t\n.ends\n")
    with pytest.raises(DuplicateDeviceName) as exc:
        parse_netlist("* t\nr1 a b 1\nR1 a c 2\n")
    assert exc.value.line == 3
    with pytest.raises(UnknownCardPrefix):
        parse_netlist("* t\nz1 a b 1\n")
    with pytest.raises(LexError):
        parse_netlist("* t\nr1 a b (1\n")
    with pytest.raises(LexError):
        parse_netlist("+ r1 a b 1\n", title_line=False)
    with pytest.raises(BadNumber):
        parse_netlist("* t\nm1 d g s b n w=abc\n")


def test_continuation_comments_and_ground():
    text = """Title line
* comment
R1 in GND 1k ; trailing
+ m=2
.op
.end
R9 ignored after end 1
"""
    ir = parse_netlist(text)
    assert ir.title == "Title line"
    (r1,) = ir.devices
    assert r1.terminals == [("t1", "in"), ("t2", "0")]
    assert r1.params == {"value": 1000.0, "m": 2.0}
    assert ".op" in ir.directives


def test_unknown_directive_preserved():
    ir = parse_netlist("* t\n.fancyopt foo=bar\nr1 a b 1\n")
    assert any(d.startswith(".fancyopt") for d in ir.directives)


def test_sources_and_controlled():
    text = """* t
v1 in 0 dc 1.8 ac 1
i1 a 0 10u
e1 o 0 in 0 2
g1 o 0 in 0 1m
f1 o 0 v1 3
h1 o 0 v1 1k
d1 a k dmod
q1 c b e qn
.model qn npn
"""
    ir = parse_netlist(text)
    kinds = {d.name: d.kind for d in ir.devices}
    assert kinds["e1"] is DeviceKind.VCVS and kinds["f1"] is DeviceKind.CCCS
    assert ir.device("v1").params == {"value": 1.8, "ac": 1.0}
    assert ir.device("f1").control == "v1" and len(ir.device("f1").terminals) == 2
    assert ir.device("q1").kind is DeviceKind.NPN
    assert ir.unresolved_models() == {"dmod"}


def _canonical(ir: NetlistIR):
    devs = sorted((d.name, d.kind.value, tuple(d.terminals), tuple(sorted(d.params.items())), d.model_ref, d.control)
                  for d in ir.devices)
    return devs, ir.nets


def test_idempotence_on_corpus(corpus):
    for rec in corpus.records[::7]:
        ir = parse_netlist(corpus.netlist_text(rec))
        again = parse_netlist(to_spice(ir))
        assert _canonical(again) == _canonical(ir)
        assert again.to_json() == ir.to_json()


def test_case_insensitive(corpus):
    for rec in corpus.records[::11]:
        text = corpus.netlist_text(rec)
        a, b = parse_netlist(text).to_json(), parse_netlist(text.upper()).to_json()
        # the title is free text, not an identifier
        assert a.pop("title").upper() == b.pop("title")
        assert a == b


def test_device_count_matches_cards(corpus):
    for rec in corpus.records[::13]:
        text = corpus.netlist_text(rec)
        cards = [ln for ln in text.splitlines()[1:] if ln.strip() and ln[0] not in "*.+"]
        assert len(parse_netlist(text).devices) == len(cards)


def test_json_round_trip():
    ir = parse_netlist("* t\n.subckt s a b\nr1 a b 1k\n.ends\nx1 n1 n2 s\nc1 n1 0 1p\n")
    assert NetlistIR.from_json(ir.to_json()).to_json() == ir.to_json()
