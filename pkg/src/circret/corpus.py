"""Triplet manifests, a seeded synthetic circuit corpus, and simulator compile checks.

A manifest is line-delimited JSON. An optional first line
``{"kind": "header", "feature_dim": F, "labels": [...]}`` carries the feature
dimension and the 19-name label vocabulary; every other line is one
:class:`TripletRecord`. Paths are relative to the manifest's directory.
"""

from __future__ import annotations

import json
import os
import re
import shutil
import subprocess
import warnings
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

LABELS = (
    "common_source_amplifier",
    "common_gate_amplifier",
    "source_follower",
    "differential_pair",
    "current_mirror",
    "cascode_current_mirror",
    "two_stage_miller_opamp",
    "folded_cascode_ota",
    "bandgap_reference",
    "ring_oscillator_vco",
    "lc_vco",
    "comparator",
    "ldo_regulator",
    "rc_lowpass_filter",
    "active_filter",
    "wien_bridge_network",
    "resistive_divider",
    "rc_highpass_filter",
    "sample_and_hold",
)

DEFAULT_FEATURE_DIM = 512
IMAGE_NOISE = 0.05
SIMULATOR_ENV = "CIRCRET_SIMULATOR"


class SchemaError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnknownFamily(ValueError):
    pass


class SimulatorNotFound(FileNotFoundError):
    pass


@dataclass
class TripletRecord:
    id: str
    netlist_path: str
    caption: str
    image_feature_path: str
    cluster_id: int | None = None
    type_label: int | None = None
    split: str = "train"


@dataclass
class Manifest:
    records: list[TripletRecord] = field(default_factory=list)
    feature_dim: int = DEFAULT_FEATURE_DIM
    labels: tuple[str, ...] = LABELS
    root: Path = field(default_factory=Path, compare=False)

    def split(self, name: str) -> list[TripletRecord]:
        return [r for r in self.records if r.split == name]

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def netlist_text(self, rec: TripletRecord) -> str:
        return self.resolve(rec.netlist_path).read_text(encoding="utf-8")

    def image_features(self, rec: TripletRecord) -> np.ndarray:
        return read_features(self.resolve(rec.image_feature_path))


_FIELDS = {
    "id": str,
    "netlist_path": str,
    "caption": str,
    "image_feature_path": str,
}


def _check_record(obj: dict, line: int) -> TripletRecord:
    for key, typ in _FIELDS.items():
        if not isinstance(obj.get(key), typ):
            raise SchemaError(f"field {key!r} missing or not a {typ.__name__}", line)
    y = obj.get("type_label")
    if y is not None and (not isinstance(y, int) or not 0 <= y < len(LABELS)):
        raise SchemaError(f"type_label {y!r} outside [0, {len(LABELS) - 1}]", line)
    cid = obj.get("cluster_id")
    if cid is not None and not isinstance(cid, int):
        raise SchemaError("cluster_id must be an integer", line)
    split = obj.get("split", "train")
    if split not in ("train", "test"):
        raise SchemaError(f"split must be 'train' or 'test', got {split!r}", line)
    return TripletRecord(obj["id"], obj["netlist_path"], obj["caption"], obj["image_feature_path"],
                         cid, y, split)


def load_manifest(path) -> Manifest:
    path = Path(path)
    m = Manifest(root=path.parent)
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc.msg}", lineno) from None
            if not isinstance(obj, dict):
                raise SchemaError("each line must be a JSON object", lineno)
            if obj.get("kind") == "header":
                m.feature_dim = int(obj.get("feature_dim", DEFAULT_FEATURE_DIM))
                m.labels = tuple(obj.get("labels", LABELS))
                if len(m.labels) != len(LABELS):
                    raise SchemaError(f"label vocabulary must have {len(LABELS)} names", lineno)
                continue
            rec = _check_record(obj, lineno)
            if rec.id in seen:
                raise SchemaError(f"duplicate id {rec.id!r}", lineno)
            seen.add(rec.id)
            m.records.append(rec)
    return m


def save_manifest(manifest: Manifest, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        header = {"kind": "header", "feature_dim": manifest.feature_dim, "labels": list(manifest.labels)}
        fh.write(json.dumps(header) + "\n")
        for rec in manifest.records:
            fh.write(json.dumps(asdict(rec)) + "\n")


def write_features(path, vec: np.ndarray) -> None:
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(json.dumps([float(x) for x in np.asarray(vec, dtype=np.float32)]))
    else:
        path.write_bytes(np.ascontiguousarray(vec, dtype="<f4").tobytes())


def read_features(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".json":
        return np.asarray(json.loads(path.read_text()), dtype=np.float32)
    return np.frombuffer(path.read_bytes(), dtype="<f4").astype(np.float32)


# ---------------------------------------------------------------- synthetic families

_MODELS = """.model nch nmos (level=1 vto=0.5 kp=200u lambda=0.05)
.model pch pmos (level=1 vto=-0.5 kp=80u lambda=0.05)"""

_RES = ("220", "470", "1k", "2.2k", "4.7k", "10k", "22k", "47k", "100k")
_CAP_P = ("0.1p", "0.22p", "0.47p", "1p", "2.2p", "4.7p")
_CAP_N = ("1n", "2.2n", "4.7n", "10n", "22n", "47n", "100n", "220n")
_W = ("1u", "2u", "5u", "10u", "20u", "50u")
_L = ("0.18u", "0.5u", "1u", "2u")
_I = ("10u", "20u", "50u", "100u", "200u")


@dataclass(frozen=True)
class Family:
    name: str
    label: str
    slots: dict[str, tuple[str, ...]]
    render: Callable[[dict[str, str]], tuple[str, str]]  # values -> (netlist body, caption)
    drawn: tuple[str, ...] = ()  # slots annotated on the schematic drawing


def _cs(v):
    body = f"""vdd vdd 0 dc 1.8
vin in 0 dc 0.7 ac 1
m1 out in 0 0 nch w={v['w']} l={v['l']}
rd vdd out {v['rd']}
cl out 0 {v['cl']}"""
    cap = (f"common-source amplifier with nmos input w={v['w']} l={v['l']}, "
           f"drain resistor rd={v['rd']} and load capacitor cl={v['cl']}")
    return body, cap


def _diff(v):
    body = f"""vdd vdd 0 dc 1.8
vinp inp 0 dc 0.9 ac 1
vinn inn 0 dc 0.9
m1 outn inp tail 0 nch w={v['w']} l={v['l']}
m2 outp inn tail 0 nch w={v['w']} l={v['l']}
r1 vdd outn {v['rd']}
r2 vdd outp {v['rd']}
itail tail 0 dc {v['itail']}"""
    cap = (f"nmos differential pair with resistive loads rd={v['rd']}, input devices "
           f"w={v['w']} l={v['l']} and tail current itail={v['itail']}")
    return body, cap


def _mirror(v):
    body = f"""vdd vdd 0 dc 1.8
iref vdd ref dc {v['iref']}
m1 ref ref 0 0 nch w={v['wref']} l=1u
m2 out ref 0 0 nch w={v['wout']} l=1u
rload vdd out {v['rl']}"""
    cap = (f"nmos current mirror with reference current iref={v['iref']}, diode device wref={v['wref']}, "
           f"output device wout={v['wout']} and load rl={v['rl']}")
    return body, cap


def _miller(v):
    body = f"""vdd vdd 0 dc 1.8
vinp inp 0 dc 0.9 ac 1
vinn inn 0 dc 0.9
ibias vdd nbias dc {v['ibias']}
m8 nbias nbias 0 0 nch w=2u l=1u
m5 tail nbias 0 0 nch w=4u l=1u
m1 x inn tail 0 nch w={v['win']} l=1u
m2 y inp tail 0 nch w={v['win']} l=1u
m3 x x vdd vdd pch w=4u l=1u
m4 y x vdd vdd pch w=4u l=1u
m6 out y vdd vdd pch w={v['wout']} l=0.5u
m7 out nbias 0 0 nch w=8u l=1u
cc y out {v['cc']}
cl out 0 1p"""
    cap = (f"two-stage op-amp with miller compensation cc={v['cc']}, input pair win={v['win']}, "
           f"output stage wout={v['wout']} and bias current ibias={v['ibias']}")
    return body, cap


def _rc(v):
    body = f"""vin in 0 dc 0 ac 1
r1 in out {v['r']}
c1 out 0 {v['c']}"""
    cap = f"first-order rc low-pass filter with series resistor r={v['r']} and shunt capacitor c={v['c']}"
    return body, cap


def _wien(v):
    body = f"""vin in 0 dc 0 ac 1
r1 in a {v['r']}
c1 a out {v['c']}
r2 out 0 {v['r']}
c2 out 0 {v['c']}
rload out 0 {v['rl']}"""
    cap = (f"wien-bridge rc network with series and parallel arms r={v['r']} c={v['c']} "
           f"loaded by rl={v['rl']}")
    return body, cap


def _ring(v):
    n = int(v["stages"])
    lines = ["vdd vdd 0 dc 1.8"]
    for i in range(1, n + 1):
        a = f"n{i}"
        b = f"n{i % n + 1}"
        lines.append(f"mp{i} {b} {a} vdd vdd pch w={v['wp']} l=0.18u")
        lines.append(f"mn{i} {b} {a} 0 0 nch w={v['wn']} l=0.18u")
        lines.append(f"c{i} {b} 0 {v['cl']}")
    cap = (f"ring oscillator with stages={n} cmos inverters, pmos wp={v['wp']}, "
           f"nmos wn={v['wn']} and node load cl={v['cl']}")
    return "\n".join(lines), cap


def _divider(v):
    body = f"""vin in 0 dc {v['vin']}
r1 in out {v['r1']}
r2 out 0 {v['r2']}"""
    cap = f"resistive voltage divider from vin={v['vin']} with top resistor r1={v['r1']} and bottom resistor r2={v['r2']}"
    return body, cap


FAMILIES: dict[str, Family] = {
    f.name: f
    for f in (
        Family("common_source", "common_source_amplifier",
               {"w": _W, "l": _L, "rd": _RES, "cl": _CAP_P}, _cs, ("rd", "cl")),
        Family("differential_pair", "differential_pair",
               {"w": _W, "l": _L, "rd": _RES, "itail": _I}, _diff, ("rd",)),
        Family("current_mirror", "current_mirror",
               {"iref": _I, "wref": _W, "wout": _W, "rl": _RES}, _mirror, ("rl",)),
        Family("two_stage_miller", "two_stage_miller_opamp",
               {"ibias": _I, "win": _W, "wout": _W, "cc": _CAP_P}, _miller, ("cc",)),
        Family("rc_lowpass", "rc_lowpass_filter", {"r": _RES, "c": _CAP_N}, _rc, ("r", "c")),
        Family("wien_bridge", "wien_bridge_network", {"r": _RES, "c": _CAP_N, "rl": _RES}, _wien, ("r", "c", "rl")),
        Family("ring_oscillator", "ring_oscillator_vco",
               {"stages": ("3", "5", "7"), "wp": _W, "wn": _W, "cl": ("1f", "2f", "5f", "10f", "20f")}, _ring, ("stages", "cl")),
        Family("resistive_divider", "resistive_divider",
               {"vin": ("1", "1.8", "3.3", "5", "12"), "r1": _RES, "r2": _RES}, _divider, ("r1", "r2")),
    )
}


def render_netlist(family: Family, values: dict[str, str], title: str) -> tuple[str, str]:
    body, caption = family.render(values)
    uses_mos = re.search(r"^m", body, re.M) is not None
    parts = [f"* {title}", body]
    if uses_mos:
        parts.append(_MODELS)
    parts += [".op", ".end"]
    return "\n".join(parts) + "\n", caption


def _stable_rng(*key) -> np.random.Generator:
    return np.random.default_rng(zlib.crc32("/".join(map(str, key)).encode("utf-8")))


def family_anchor(name: str, dim: int) -> np.ndarray:
    v = _stable_rng("anchor", name).standard_normal(dim)
    return v / np.linalg.norm(v)


def image_features(family: Family, values: dict[str, str], dim: int, rng: np.random.Generator,
                   noise: float = IMAGE_NOISE) -> np.ndarray:
    """Stand-in for a schematic image embedding.

    Family anchor, plus a fixed pattern for each value annotated on the
    drawing (passive values, stage count; transistor sizing and bias are not
    drawn), plus seeded per-sample noise; re-normalized.
    """
    drawn = [s for s in family.drawn if s in values]
    code = np.zeros(dim)
    for slot in drawn:
        code += _stable_rng("value", family.name, slot, values[slot]).standard_normal(dim)
    code /= np.sqrt(max(1, len(drawn)))
    v = family_anchor(family.name, dim) + noise * code + noise * rng.standard_normal(dim)
    return (v / np.linalg.norm(v)).astype(np.float32)


def generate_synthetic_corpus(out_dir, n_per_family: int = 40, families=None, seed: int = 0,
                              feature_dim: int = DEFAULT_FEATURE_DIM, test_per_family: int | None = None,
                              feature_format: str = "f32") -> Manifest:
    """Write netlists, feature vectors and ``manifest.jsonl`` under ``out_dir``.

    Component values are drawn without repeating a combination within a
    family. The last ``test_per_family`` samples of each family (default 20%)
    form the test split.
    """
    families = list(FAMILIES) if families is None else list(families)
    for name in families:
        if name not in FAMILIES:
            raise UnknownFamily(name)
    if test_per_family is None:
        test_per_family = n_per_family // 5
    out = Path(out_dir)
    (out / "netlists").mkdir(parents=True, exist_ok=True)
    (out / "features").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    manifest = Manifest(feature_dim=feature_dim, root=out)
    for name in families:
        fam = FAMILIES[name]
        combos = int(np.prod([len(v) for v in fam.slots.values()]))
        if n_per_family > combos:
            raise ValueError(f"{name}: only {combos} distinct value combinations")
        seen: set[tuple[str, ...]] = set()
        for k in range(n_per_family):
            while True:
                values = {s: opts[int(rng.integers(len(opts)))] for s, opts in fam.slots.items()}
                key = tuple(values.values())
                if key not in seen:
                    seen.add(key)
                    break
            sid = f"{name}_{k:04d}"
            text, caption = render_netlist(fam, values, f"{name} {k}")
            feats = image_features(fam, values, feature_dim, rng)
            net_rel = f"netlists/{sid}.sp"
            feat_rel = f"features/{sid}.{feature_format}"
            (out / net_rel).write_text(text, encoding="utf-8")
            write_features(out / feat_rel, feats)
            split = "test" if k >= n_per_family - test_per_family else "train"
            manifest.records.append(
                TripletRecord(sid, net_rel, caption, feat_rel, None, LABELS.index(fam.label), split)
            )
    save_manifest(manifest, out / "manifest.jsonl")
    return manifest


# ---------------------------------------------------------------- simulator validation


@dataclass
class CompileResult:
    id: str
    ok: bool
    returncode: int | None
    stderr: str


@dataclass
class ValidationReport:
    results: list[CompileResult]

    @property
    def compile_rate(self) -> float:
        if not self.results:
            return 0.0
        return 100.0 * sum(r.ok for r in self.results) / len(self.results)

    def to_json(self) -> dict:
        return {
            "compile_rate": self.compile_rate,
            "n": len(self.results),
            "failures": [asdict(r) for r in self.results if not r.ok],
        }


def find_simulator(path: str | None = None) -> str | None:
    """Explicit path, then ``$CIRCRET_SIMULATOR``, then ``ngspice`` on PATH."""
    for cand in (path, os.environ.get(SIMULATOR_ENV), "ngspice"):
        if not cand:
            continue
        found = shutil.which(cand)
        if found:
            return found
        if cand == path:
            return None
    return None


_ERROR_RE = re.compile(r"\berror\b", re.IGNORECASE)


def _compile_one(simulator: str, rec: TripletRecord, manifest: Manifest, timeout: float) -> CompileResult:
    try:
        proc = subprocess.run(
            [simulator, "-b", str(manifest.resolve(rec.netlist_path))],
            capture_output=True,
            text=True,
            timeout=timeout,
        )
    except subprocess.TimeoutExpired:
        return CompileResult(rec.id, False, None, f"timeout after {timeout}s")
    log = (proc.stdout or "") + (proc.stderr or "")
    ok = proc.returncode == 0 and _ERROR_RE.search(log) is None
    return CompileResult(rec.id, ok, proc.returncode, proc.stderr or "")


def validate_corpus(manifest: Manifest, simulator_path: str | None = None, timeout: float = 30.0,
                    jobs: int = 4) -> ValidationReport | None:
    """Run each netlist through the simulator in batch mode.

    Returns None (with a warning) when no simulator is available.
    """
    sim = find_simulator(simulator_path)
    if sim is None:
        warnings.warn("no SPICE simulator found; skipping compile validation", RuntimeWarning, stacklevel=2)
        return None
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(lambda r: _compile_one(sim, r, manifest, timeout), manifest.records))
    return ValidationReport(results)
