"""Three-phase curriculum training loop."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .corpus import Manifest
from .curriculum import (
    ClusterAssignment,
    DatasetTooSmall,
    PhaseConfig,
    cluster_captions,
    default_phases,
    hard_negative_ratio,
    sample_batch,
)
from .encoders import GraphBatch
from .engine import AdamW, ParamGroup, lr_schedule
from .graph import CircuitGraph, build_graph
from .model import RetrievalModel, TrainConfig, save_model
from .objective import ObjectiveConfig, aux_cls_loss, total_loss, tri_modal_loss
from .retrieval import RetrievalReport, evaluate_six_directions
from .spice import parse_netlist

log = logging.getLogger(__name__)

_LETTER = {"code": "C", "image": "I", "text": "T"}


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass
class Dataset:
    ids: list[str]
    graphs: dict[str, CircuitGraph]
    captions: dict[str, str]
    features: dict[str, np.ndarray]
    labels: dict[str, int]
    split: dict[str, str]

    @classmethod
    def from_manifest(cls, manifest: Manifest) -> "Dataset":
        ids, graphs, captions, feats, labels, split = [], {}, {}, {}, {}, {}
        for rec in manifest.records:
            ids.append(rec.id)
            graphs[rec.id] = build_graph(parse_netlist(manifest.netlist_text(rec)))
            captions[rec.id] = rec.caption
            feats[rec.id] = manifest.image_features(rec)
            labels[rec.id] = rec.type_label if rec.type_label is not None else -1
            split[rec.id] = rec.split
        return cls(ids, graphs, captions, feats, labels, split)

    def ids_in(self, split: str) -> list[str]:
        return [i for i in self.ids if self.split[i] == split]

    def inputs(self, modality: str, ids: list[str]):
        if modality == "code":
            return [self.graphs[i] for i in ids]
        if modality == "text":
            return [self.captions[i] for i in ids]
        return [self.features[i] for i in ids]


@dataclass
class TrainResult:
    model: RetrievalModel
    log: list[dict[str, Any]]
    report: RetrievalReport | None
    clusters: ClusterAssignment | None = None
    optimizer_events: list[dict[str, Any]] = field(default_factory=list)


def plan_phases(config: TrainConfig) -> list[PhaseConfig]:
    phases = default_phases(*config.epochs)
    letters = {_LETTER[m] for m in config.model.modalities}
    for p in phases:
        p.directions = tuple(d for d in p.directions if d[0] in letters and d[1] in letters)
    if "code" not in config.model.modalities:
        # no graph tower to warm up: every phase trains all groups on the available pairs
        for p in phases:
            p.trainable = ("*",)
            p.directions = phases[-1].directions
    return phases


def embed_split(model: RetrievalModel, data: Dataset, ids: list[str]) -> dict[str, tuple[list[str], np.ndarray]]:
    out = {}
    for m in model.config.modalities:
        out[m] = (ids, model.embed_many(m, data.inputs(m, ids)))
    return out


def evaluate(model: RetrievalModel, data: Dataset, ids: list[str]) -> RetrievalReport:
    return evaluate_six_directions(embed_split(model, data, ids))


class Trainer:
    def __init__(self, config: TrainConfig, data: Dataset, out_dir=None, on_phase_start=None):
        """``on_phase_start(trainer, phase)`` runs before a phase's trainable
        flags are applied, i.e. on the parameters as the previous phase left them."""
        self.config = config
        self.on_phase_start = on_phase_start
        self.data = data
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.model = RetrievalModel(config.model, seed=config.seed)
        self.model.train()
        self.sampler_rng = np.random.default_rng(config.seed + 1)
        self.phases = plan_phases(config)
        self.objective = ObjectiveConfig(config.label_smoothing, config.aux_weight)
        self.train_ids = data.ids_in("train")
        self.test_ids = data.ids_in("test")
        if len(self.train_ids) < config.batch_size:
            raise DatasetTooSmall(f"{len(self.train_ids)} training samples < batch size {config.batch_size}")
        self.steps_per_epoch = len(self.train_ids) // config.batch_size
        self.optimizer: AdamW | None = None
        self.sched_start = 0
        self.sched_total = 0
        self.clusters: ClusterAssignment | None = None
        self.records: list[dict[str, Any]] = []
        self.optimizer_events: list[dict[str, Any]] = []
        self.global_step = 0

    # ------------------------------------------------------------ setup
    def _param_groups(self) -> list[ParamGroup]:
        groups = []
        for name, params in self.model.groups().items():
            if name.startswith("graph"):
                lr = self.config.lr_graph
            elif name in ("aux", "temperature"):
                lr = self.config.lr_heads
            else:
                lr = self.config.lr_other
            groups.append(ParamGroup(name, params, lr, self.config.weight_decay))
        return groups

    def _apply_trainable(self, phase: PhaseConfig) -> None:
        all_groups = list(self.model.groups())
        self.model.set_trainable(all_groups, False)
        if phase.trainable == ("*",):
            self.model.set_trainable(all_groups, True)
        else:
            present = [g for g in phase.trainable if any(n == g or n.startswith(g + ".") for n in all_groups)]
            if present:
                self.model.set_trainable(present, True)
        frozen = [g for g in self.config.always_frozen if g in all_groups]
        if frozen:
            self.model.set_trainable(frozen, False)

    def _phase_steps_until_rebuild(self, phase_idx: int) -> int:
        epochs = 0
        for j in range(phase_idx, len(self.phases)):
            if j > phase_idx and self.phases[j].rebuild_optimizer:
                break
            lo, hi = self.phases[j].epochs
            epochs += hi - lo + 1
        return epochs * self.steps_per_epoch

    def _enter_phase(self, idx: int) -> None:
        phase = self.phases[idx]
        if self.on_phase_start is not None:
            self.on_phase_start(self, phase)
        self._apply_trainable(phase)
        if self.optimizer is None or phase.rebuild_optimizer:
            if self.optimizer is None:
                self.optimizer = AdamW(self._param_groups())
            else:
                self.optimizer.rebuild()
            self.sched_start = self.global_step
            self.sched_total = self._phase_steps_until_rebuild(idx)
            self.optimizer_events.append(
                {"phase": phase.phase, "step": self.global_step, "optimizer_step": self.optimizer.state.step,
                 "moments_zero": all(not m.any() for m in self.optimizer.state.m.values())}
            )
        if phase.sampling == "curriculum" and self.clusters is None:
            caps = [self.data.captions[i] for i in self.train_ids]
            self.clusters = cluster_captions(self.train_ids, caps, self.config.n_clusters, self.config.seed)

    # ------------------------------------------------------------ batches
    def _epoch_batches(self, phase: PhaseConfig, alpha: float) -> list[list[str]]:
        b = self.config.batch_size
        if phase.sampling == "curriculum":
            return [sample_batch(self.train_ids, b, alpha, self.clusters, self.sampler_rng)
                    for _ in range(self.steps_per_epoch)]
        perm = self.sampler_rng.permutation(len(self.train_ids))
        return [[self.train_ids[i] for i in perm[k * b : (k + 1) * b]] for k in range(self.steps_per_epoch)]

    def _step(self, ids: list[str], phase: PhaseConfig, alpha: float) -> dict[str, Any]:
        model = self.model
        mods = model.config.modalities
        emb = {}
        for m in mods:
            inp = self.data.inputs(m, ids)
            if m == "code":
                inp = GraphBatch.collate(inp)
            elif m == "image":
                inp = np.stack(inp)
            emb[m] = model.encode(m, inp)
        cfg = ObjectiveConfig(self.objective.label_smoothing, self.objective.aux_weight, phase.directions)
        align = tri_modal_loss(emb.get("code"), emb.get("image"), emb.get("text"),
                               model.temperature.logit_scale, cfg)
        labels = np.array([self.data.labels[i] for i in ids])
        cls = None
        if "code" in mods and "text" in mods and (labels >= 0).all():
            cls = aux_cls_loss(emb["text"], emb["code"], labels, model.aux)
        loss = total_loss(align, cls, cfg.aux_weight)
        rec = {
            "step": self.global_step + 1,
            "phase": phase.phase,
            "L_align": float(align.item()),
            "L_cls": float(cls.item()) if cls is not None else None,
            "loss": float(loss.item()),
            "logit_scale": model.temperature.value,
            "alpha": alpha,
        }
        if not math.isfinite(rec["loss"]):
            self._dump(rec, ids)
            raise NonFiniteLoss(f"non-finite loss at step {rec['step']}")
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.lr_scale = lr_schedule(
            self.global_step - self.sched_start + 1, self.sched_total,
            max(1, int(round(self.config.warmup_frac * self.sched_total))), 1.0,
        )
        self.optimizer.step()
        model.temperature.clamp()
        self.global_step += 1
        return rec

    def _dump(self, rec: dict[str, Any], ids: list[str]) -> None:
        if self.out_dir is None:
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / "diagnostic.json").write_text(json.dumps({"record": rec, "batch": ids}, indent=2))

    # ------------------------------------------------------------ loop
    def run(self) -> TrainResult:
        total_epochs = sum(self.config.epochs)
        p3 = self.phases[2]
        m_total = p3.epochs[1] - p3.epochs[0] + 1
        current = -1
        report = None
        for epoch in range(1, total_epochs + 1):
            idx = next(i for i, p in enumerate(self.phases) if p.contains(epoch))
            if idx != current:
                self._enter_phase(idx)
                current = idx
            phase = self.phases[idx]
            alpha = 0.0
            if phase.sampling == "curriculum":
                m = epoch - phase.epochs[0] + 1
                alpha = (hard_negative_ratio(m, m_total, self.config.alpha0, self.config.alpha_max)
                         if m_total >= 2 else self.config.alpha_max)
            losses = []
            for ids in self._epoch_batches(phase, alpha):
                rec = self._step(ids, phase, alpha)
                self.records.append(rec)
                losses.append(rec["loss"])
            ep = {"epoch": epoch, "phase": phase.phase, "loss": float(np.mean(losses)), "alpha": alpha}
            if self.config.eval_every_epoch or epoch == total_epochs:
                if self.test_ids:
                    report = evaluate(self.model, self.data, self.test_ids)
                    ep["recall"] = report.to_json()["directions"]
                    ep["avg_r1"] = report.avg_r1
            self.records.append(ep)
            log.info("epoch %d phase %d loss %.4f avg_r1 %s", epoch, phase.phase, ep["loss"], ep.get("avg_r1"))
        self.model.eval()
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            save_model(self.model, self.out_dir / "model.ckpt", self.config)
            write_log(self.records, self.out_dir / "train_log.jsonl")
        return TrainResult(self.model, self.records, report, self.clusters, self.optimizer_events)


def write_log(records: list[dict[str, Any]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def train(manifest: Manifest, config: TrainConfig, out_dir=None, data: Dataset | None = None) -> TrainResult:
    data = data if data is not None else Dataset.from_manifest(manifest)
    return Trainer(config, data, out_dir).run()
