"""SPICE netlist reader.

Turns Ngspice-style deck text into a :class:`NetlistIR`: devices with typed
terminals, the net set, ``.model`` cards and ``.subckt`` definitions.
Identifiers are canonicalized to lower case and ``gnd`` is folded into ``0``.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any


class NetlistError(ValueError):
    """Base class for parse failures; ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


class LexError(NetlistError):
    pass


class TooFewTerminals(NetlistError):
    pass


class UnknownCardPrefix(NetlistError):
    pass


class UnterminatedSubckt(NetlistError):
    pass


class DuplicateDeviceName(NetlistError):
    pass


class BadNumber(NetlistError):
    pass


class DeviceKind(str, Enum):
    NMOS = "nmos"
    PMOS = "pmos"
    NPN = "npn"
    PNP = "pnp"
    DIODE = "diode"
    RESISTOR = "resistor"
    CAPACITOR = "capacitor"
    INDUCTOR = "inductor"
    VSOURCE = "vsource"
    ISOURCE = "isource"
    VCVS = "vcvs"
    CCCS = "cccs"
    VCCS = "vccs"
    CCVS = "ccvs"
    SUBCKT = "subckt_instance"


KIND_ORDER = list(DeviceKind)

# port names in terminal order
PORTS = {
    DeviceKind.NMOS: ("d", "g", "s", "b"),
    DeviceKind.PMOS: ("d", "g", "s", "b"),
    DeviceKind.NPN: ("c", "b", "e"),
    DeviceKind.PNP: ("c", "b", "e"),
    DeviceKind.DIODE: ("a", "k"),
    DeviceKind.RESISTOR: ("t1", "t2"),
    DeviceKind.CAPACITOR: ("t1", "t2"),
    DeviceKind.INDUCTOR: ("t1", "t2"),
    DeviceKind.VSOURCE: ("p", "n"),
    DeviceKind.ISOURCE: ("p", "n"),
    DeviceKind.VCVS: ("p", "n", "cp", "cn"),
    DeviceKind.VCCS: ("p", "n", "cp", "cn"),
    DeviceKind.CCCS: ("p", "n"),
    DeviceKind.CCVS: ("p", "n"),
}

_PREFIX_KIND = {
    "r": DeviceKind.RESISTOR,
    "c": DeviceKind.CAPACITOR,
    "l": DeviceKind.INDUCTOR,
    "v": DeviceKind.VSOURCE,
    "i": DeviceKind.ISOURCE,
    "d": DeviceKind.DIODE,
    "e": DeviceKind.VCVS,
    "g": DeviceKind.VCCS,
    "f": DeviceKind.CCCS,
    "h": DeviceKind.CCVS,
    "x": DeviceKind.SUBCKT,
}
DEVICE_PREFIXES = set(_PREFIX_KIND) | {"m", "q"}

GROUND = "0"

_SUFFIX = {
    "t": 1e12,
    "g": 1e9,
    "meg": 1e6,
    "k": 1e3,
    "m": 1e-3,
    "u": 1e-6,
    "n": 1e-9,
    "p": 1e-12,
    "f": 1e-15,
}
_NUMBER_RE = re.compile(
    r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:e[+-]?\d+)?)(meg|[tgkmunpf])?([a-z]*)$"
)


def parse_value(token: str) -> float:
    """Convert a SPICE number such as ``10k``, ``1meg`` or ``2.2uF`` to SI.

    Unit letters after the scale suffix are ignored, so ``10kOhm`` is 1e4.
    """
    m = _NUMBER_RE.match(token.strip().lower())
    if m is None:
        raise BadNumber(f"cannot parse number {token!r}")
    mantissa, suffix, _unit = m.groups()
    value = float(mantissa) * (_SUFFIX[suffix] if suffix else 1.0)
    if not math.isfinite(value):
        raise BadNumber(f"non-finite number {token!r}")
    return value


def _is_number(token: str) -> bool:
    return _NUMBER_RE.match(token) is not None


@dataclass
class Device:
    name: str
    kind: DeviceKind
    terminals: list[tuple[str, str]]
    params: dict[str, float] = field(default_factory=dict)
    model_ref: str | None = None
    control: str | None = None  # controlling V-source name for F/H

    @property
    def nets(self) -> list[str]:
        return [net for _, net in self.terminals]

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "name": self.name,
            "kind": self.kind.value,
            "terminals": [list(t) for t in self.terminals],
            "params": dict(self.params),
            "model_ref": self.model_ref,
        }
        if self.control is not None:
            out["control"] = self.control
        return out

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "Device":
        return cls(
            name=obj["name"],
            kind=DeviceKind(obj["kind"]),
            terminals=[(p, n) for p, n in obj["terminals"]],
            params={k: float(v) for k, v in obj.get("params", {}).items()},
            model_ref=obj.get("model_ref"),
            control=obj.get("control"),
        )


@dataclass
class ModelCard:
    family: str
    params: dict[str, float] = field(default_factory=dict)


@dataclass
class SubcktDef:
    terminals: list[str]
    body: "NetlistIR"


@dataclass
class NetlistIR:
    title: str = ""
    devices: list[Device] = field(default_factory=list)
    nets: set[str] = field(default_factory=set)
    models: dict[str, ModelCard] = field(default_factory=dict)
    subckts: dict[str, SubcktDef] = field(default_factory=dict)
    # analysis and unknown dot-cards, kept verbatim
    directives: list[str] = field(default_factory=list)

    def device(self, name: str) -> Device:
        for dev in self.devices:
            if dev.name == name:
                return dev
        raise KeyError(name)

    def unresolved_models(self, outer: dict[str, ModelCard] | None = None) -> set[str]:
        """Model references that no visible ``.model`` card defines."""
        known = dict(outer or {})
        known.update(self.models)
        missing = {
            d.model_ref
            for d in self.devices
            if d.model_ref is not None
            and d.kind is not DeviceKind.SUBCKT
            and d.model_ref not in known
        }
        for sub in self.subckts.values():
            missing |= sub.body.unresolved_models(known)
        return missing

    def to_json(self) -> dict[str, Any]:
        return {
            "title": self.title,
            "devices": [d.to_json() for d in self.devices],
            "nets": sorted(self.nets),
            "models": {
                name: {"family": m.family, "params": dict(m.params)}
                for name, m in self.models.items()
            },
            "subckts": {
                name: {"terminals": list(s.terminals), "body": s.body.to_json()}
                for name, s in self.subckts.items()
            },
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "NetlistIR":
        return cls(
            title=obj.get("title", ""),
            devices=[Device.from_json(d) for d in obj.get("devices", [])],
            nets=set(obj.get("nets", [])),
            models={
                name: ModelCard(m["family"], {k: float(v) for k, v in m["params"].items()})
                for name, m in obj.get("models", {}).items()
            },
            subckts={
                name: SubcktDef(list(s["terminals"]), NetlistIR.from_json(s["body"]))
                for name, s in obj.get("subckts", {}).items()
            },
        )

    def dumps(self, **kw) -> str:
        return json.dumps(self.to_json(), **kw)


# ---------------------------------------------------------------- lexing


def _split_comment(line: str) -> str:
    idx = line.find(";")
    return line if idx < 0 else line[:idx]


def tokenize(card: str, lineno: int) -> list[str]:
    """Whitespace tokenizer that keeps ``(...)``, ``{...}`` and quoted groups
    intact and glues ``key = value`` into ``key=value``."""
    card = re.sub(r"\s*=\s*", "=", card.strip())
    tokens: list[str] = []
    buf: list[str] = []
    depth = 0
    quote: str | None = None
    closers = {"(": ")", "{": "}"}
    stack: list[str] = []
    for ch in card:
        if quote is not None:
            buf.append(ch)
            if ch == quote:
                quote = None
            continue
        if ch in "'\"":
            quote = ch
            buf.append(ch)
        elif ch in closers:
            stack.append(closers[ch])
            depth += 1
            buf.append(ch)
        elif ch in ")}":
            if not stack or stack.pop() != ch:
                raise LexError(f"unbalanced {ch!r}", lineno)
            depth -= 1
            buf.append(ch)
        elif (ch.isspace() or ch == ",") and depth == 0:
            if buf:
                tokens.append("".join(buf))
                buf = []
        elif not ch.isprintable():
            raise LexError(f"non-printable character {ch!r}", lineno)
        else:
            buf.append(ch)
    if quote is not None:
        raise LexError("unterminated quote", lineno)
    if stack:
        raise LexError("unbalanced parenthesis", lineno)
    if buf:
        tokens.append("".join(buf))
    return tokens


def _logical_cards(text: str, title_line: bool | None) -> tuple[str, list[tuple[int, str]]]:
    lines = text.splitlines()
    title = ""
    start = 0
    if lines:
        first = lines[0].strip()
        is_title = title_line
        if is_title is None:
            # a leading comment, or a line that cannot open a card, is the title
            is_title = first.startswith("*") or (
                bool(first) and first[0].lower() not in DEVICE_PREFIXES | {".", "+", ";"}
            )
        if is_title:
            title = first.lstrip("*").strip()
            start = 1
    cards: list[tuple[int, str]] = []
    for idx in range(start, len(lines)):
        raw = _split_comment(lines[idx]).rstrip()
        stripped = raw.strip()
        if not stripped or stripped.startswith("*"):
            continue
        if stripped.startswith("+"):
            if not cards:
                raise LexError("continuation line without a card", idx + 1)
            ln, prev = cards[-1]
            cards[-1] = (ln, prev + " " + stripped[1:])
            continue
        cards.append((idx + 1, stripped))
    return title, cards


# ---------------------------------------------------------------- parsing


def _canon_net(name: str) -> str:
    name = name.lower()
    return GROUND if name in ("0", "gnd", "gnd!") else name


def _split_params(tokens: list[str], lineno: int) -> tuple[list[str], dict[str, float]]:
    positional: list[str] = []
    params: dict[str, float] = {}
    for tok in tokens:
        if "=" in tok:
            key, _, val = tok.partition("=")
            if not key or not val:
                raise LexError(f"malformed parameter {tok!r}", lineno)
            try:
                params[key] = parse_value(val)
            except BadNumber as exc:
                raise BadNumber(str(exc), lineno) from None
        else:
            positional.append(tok)
    return positional, params


def _value(tok: str, lineno: int) -> float:
    try:
        return parse_value(tok)
    except BadNumber as exc:
        raise BadNumber(str(exc), lineno) from None


def _source_params(rest: list[str], lineno: int) -> dict[str, float]:
    """DC/AC values of an independent source; waveform specs are skipped."""
    params: dict[str, float] = {}
    i = 0
    while i < len(rest):
        tok = rest[i]
        if tok in ("dc", "ac") and i + 1 < len(rest) and _is_number(rest[i + 1]):
            params["value" if tok == "dc" else "ac"] = _value(rest[i + 1], lineno)
            i += 2
            continue
        if _is_number(tok) and "value" not in params:
            params["value"] = _value(tok, lineno)
        i += 1
    return params


def _parse_device(tokens: list[str], lineno: int) -> Device:
    name = tokens[0]
    prefix = name[0]
    body = tokens[1:]
    if prefix not in DEVICE_PREFIXES:
        raise UnknownCardPrefix(f"unknown card prefix {prefix!r}", lineno)

    def need(n: int, what: str) -> None:
        if len(body) < n:
            raise TooFewTerminals(f"{name}: {what} needs {n} fields, got {len(body)}", lineno)

    if prefix == "m":
        positional, params = _split_params(body, lineno)
        if len(positional) < 5:
            raise TooFewTerminals(f"{name}: MOSFET needs 4 nodes and a model", lineno)
        nets = positional[:4]
        model = positional[4]
        # kind is settled once every .model card is known
        return Device(name, DeviceKind.NMOS, _bind(DeviceKind.NMOS, nets), params, model)
    if prefix == "q":
        positional, params = _split_params(body, lineno)
        if len(positional) < 4:
            raise TooFewTerminals(f"{name}: BJT needs 3 nodes and a model", lineno)
        nets = positional[:3]
        # optional substrate node sits between emitter and model
        model = positional[4] if len(positional) >= 5 and not _is_number(positional[4]) else positional[3]
        return Device(name, DeviceKind.NPN, _bind(DeviceKind.NPN, nets), params, model)

    kind = _PREFIX_KIND[prefix]
    if kind in (DeviceKind.RESISTOR, DeviceKind.CAPACITOR, DeviceKind.INDUCTOR):
        need(2, "two-terminal element")
        positional, params = _split_params(body[2:], lineno)
        model = None
        for tok in positional:
            if _is_number(tok) and "value" not in params:
                params["value"] = _value(tok, lineno)
            elif not _is_number(tok) and model is None:
                model = tok
        for alias in ("r", "c", "l"):
            if alias in params and "value" not in params:
                params["value"] = params.pop(alias)
        return Device(name, kind, _bind(kind, body[:2]), params, model)
    if kind in (DeviceKind.VSOURCE, DeviceKind.ISOURCE):
        need(2, "source")
        return Device(name, kind, _bind(kind, body[:2]), _source_params(body[2:], lineno))
    if kind is DeviceKind.DIODE:
        need(3, "diode")
        positional, params = _split_params(body[2:], lineno)
        if positional[1:] and _is_number(positional[1]):
            params["area"] = _value(positional[1], lineno)
        return Device(name, kind, _bind(kind, body[:2]), params, positional[0])
    if kind in (DeviceKind.VCVS, DeviceKind.VCCS):
        need(5, "voltage-controlled source")
        positional, params = _split_params(body[4:], lineno)
        if positional:
            params["value"] = _value(positional[0], lineno)
        return Device(name, kind, _bind(kind, body[:4]), params)
    if kind in (DeviceKind.CCCS, DeviceKind.CCVS):
        need(4, "current-controlled source")
        positional, params = _split_params(body[3:], lineno)
        if positional:
            params["value"] = _value(positional[0], lineno)
        return Device(name, kind, _bind(kind, body[:2]), params, control=body[2])
    # subcircuit instance: nodes..., subckt name, params
    positional, params = _split_params(body, lineno)
    if len(positional) < 2:
        raise TooFewTerminals(f"{name}: instance needs at least one node and a subckt name", lineno)
    nets = positional[:-1]
    sub = positional[-1]
    terms = [(f"p{i + 1}", _canon_net(n)) for i, n in enumerate(nets)]
    return Device(name, kind, terms, params, sub)


def _bind(kind: DeviceKind, nets: list[str]) -> list[tuple[str, str]]:
    return [(port, _canon_net(n)) for port, n in zip(PORTS[kind], nets)]


def _parse_model(tokens: list[str], lineno: int) -> tuple[str, ModelCard]:
    if len(tokens) < 3:
        raise LexError(".model needs a name and a type", lineno)
    name = tokens[1]
    family = tokens[2]
    rest = tokens[3:]
    if "(" in family:
        family, _, tail = family.partition("(")
        rest = ["(" + tail] + rest
    flat: list[str] = []
    for tok in rest:
        if tok.startswith("(") and tok.endswith(")"):
            flat.extend(tokenize(tok[1:-1], lineno))
        else:
            flat.append(tok)
    params: dict[str, float] = {}
    for tok in flat:
        if "=" not in tok:
            continue
        key, _, val = tok.partition("=")
        try:
            params[key] = parse_value(val)
        except BadNumber:
            # string-valued model options (e.g. version tags) carry no numeric meaning
            continue
    return name, ModelCard(family, params)


def _resolve(ir: NetlistIR, outer_models: dict[str, ModelCard], outer_subckts: dict[str, SubcktDef]) -> None:
    models = dict(outer_models)
    models.update(ir.models)
    subckts = dict(outer_subckts)
    subckts.update(ir.subckts)
    for dev in ir.devices:
        if dev.kind in (DeviceKind.NMOS, DeviceKind.PMOS):
            fam = models[dev.model_ref].family if dev.model_ref in models else dev.model_ref
            dev.kind = DeviceKind.PMOS if fam.startswith("p") else DeviceKind.NMOS
            dev.terminals = _bind(dev.kind, [n for _, n in dev.terminals])
        elif dev.kind in (DeviceKind.NPN, DeviceKind.PNP):
            fam = models[dev.model_ref].family if dev.model_ref in models else dev.model_ref
            dev.kind = DeviceKind.PNP if fam.startswith("pnp") else DeviceKind.NPN
        elif dev.kind is DeviceKind.SUBCKT and dev.model_ref in subckts:
            ports = subckts[dev.model_ref].terminals
            if len(ports) == len(dev.terminals):
                dev.terminals = [(p, n) for p, (_, n) in zip(ports, dev.terminals)]
    for sub in ir.subckts.values():
        _resolve(sub.body, models, subckts)


def parse_netlist(text: str, title_line: bool | None = None) -> NetlistIR:
    """Parse SPICE deck text into a :class:`NetlistIR`.

    ``title_line=None`` treats the first line as the deck title only when it
    is a comment or cannot start a card; pass ``True`` for strict SPICE
    behaviour where line 1 is always the title.
    """
    title, cards = _logical_cards(text, title_line)
    root = NetlistIR(title=title)
    stack: list[tuple[str, list[str], NetlistIR, int]] = []
    current = root
    seen: list[set[str]] = [set()]
    in_control = False

    for lineno, card in cards:
        lowered = card.lower()
        if in_control:
            current.directives.append(lowered)
            if lowered.startswith(".endc"):
                in_control = False
            continue
        tokens = tokenize(lowered, lineno)
        if not tokens:
            continue
        head = tokens[0]
        if head.startswith("."):
            if head == ".end":
                break
            if head == ".model":
                name, card_ = _parse_model(tokens, lineno)
                current.models[name] = card_
            elif head == ".subckt":
                if len(tokens) < 2:
                    raise LexError(".subckt needs a name", lineno)
                ports = [_canon_net(t) for t in tokens[2:] if "=" not in t and t != "params:"]
                body = NetlistIR(title=tokens[1])
                stack.append((tokens[1], ports, current, lineno))
                current = body
                seen.append(set())
            elif head == ".ends":
                if not stack:
                    raise UnterminatedSubckt("'.ends' without a matching '.subckt'", lineno)
                name, ports, parent, _ = stack.pop()
                current.nets.update(ports)
                parent.subckts[name] = SubcktDef(ports, current)
                current = parent
                seen.pop()
            else:
                if head == ".control":
                    in_control = True
                current.directives.append(" ".join(tokens))
            continue
        dev = _parse_device(tokens, lineno)
        if dev.name in seen[-1]:
            raise DuplicateDeviceName(f"duplicate device {dev.name!r}", lineno)
        seen[-1].add(dev.name)
        current.devices.append(dev)
        current.nets.update(dev.nets)

    if stack:
        name, _, _, opened = stack[-1]
        raise UnterminatedSubckt(f"subckt {name!r} opened here is never closed", opened)
    _resolve(root, {}, {})
    return root


def _fmt(x: float) -> str:
    return repr(float(x))


def _device_card(dev: Device) -> str:
    nets = " ".join(dev.nets)
    params = " ".join(f"{k}={_fmt(v)}" for k, v in dev.params.items() if k != "value")
    parts = [dev.name, nets]
    if dev.kind in (DeviceKind.CCCS, DeviceKind.CCVS):
        parts.append(dev.control or "")
    if dev.kind in (DeviceKind.VSOURCE, DeviceKind.ISOURCE):
        if "value" in dev.params:
            parts.append(f"dc {_fmt(dev.params['value'])}")
        if "ac" in dev.params:
            parts.append(f"ac {_fmt(dev.params['ac'])}")
        return " ".join(parts)
    if dev.model_ref is not None and dev.kind is not DeviceKind.DIODE:
        if dev.kind in (DeviceKind.RESISTOR, DeviceKind.CAPACITOR, DeviceKind.INDUCTOR):
            if "value" in dev.params:
                parts.append(_fmt(dev.params["value"]))
        parts.append(dev.model_ref)
    elif dev.kind is DeviceKind.DIODE:
        parts.append(dev.model_ref or "")
        params = " ".join(f"{k}={_fmt(v)}" for k, v in dev.params.items() if k not in ("value", "area"))
        if "area" in dev.params:
            parts.append(_fmt(dev.params["area"]))
    elif "value" in dev.params:
        parts.append(_fmt(dev.params["value"]))
    if params:
        parts.append(params)
    return " ".join(p for p in parts if p)


def to_spice(ir: NetlistIR) -> str:
    """Canonical SPICE text for ``ir``; parsing it gives back an equal IR."""
    lines = [f"* {ir.title}"]
    lines.extend(_body_lines(ir))
    lines.append(".end")
    return "\n".join(lines) + "\n"


def _body_lines(ir: NetlistIR) -> list[str]:
    lines = []
    for name, m in ir.models.items():
        ps = " ".join(f"{k}={_fmt(v)}" for k, v in m.params.items())
        lines.append(f".model {name} {m.family} ({ps})")
    for name, sub in ir.subckts.items():
        lines.append(f".subckt {name} {' '.join(sub.terminals)}")
        lines.extend(_body_lines(sub.body))
        lines.append(".ends")
    lines.extend(_device_card(d) for d in ir.devices)
    return lines
