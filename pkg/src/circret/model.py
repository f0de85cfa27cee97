"""The three encoders plus temperature and auxiliary classifier, with config and checkpoint I/O."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .encoders import Embedding, GraphEncoder, ImageFeatureEncoder, TextEncoder
from .engine import Module, Tensor, load_tensors, save_tensors
from .graph import CircuitGraph
from .objective import AuxClassifier, Temperature

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

MODALITIES = ("code", "text", "image")


@dataclass
class ModelConfig:
    d_g: int = 512
    layers: int = 2
    d_type: int = 64
    d_cont: int = 64
    head_hidden: int = 1024
    embed_dim: int = 768
    dropout: float = 0.1
    text_vocab: int = 8192
    text_dim: int = 256
    feature_dim: int = 512
    aux_hidden: int = 256
    logit_scale_init: float = 1.0 / 0.07
    logit_scale_max: float = 100.0
    modalities: tuple[str, ...] = MODALITIES

    def __post_init__(self):
        self.modalities = tuple(self.modalities)
        bad = set(self.modalities) - set(MODALITIES)
        if bad or len(self.modalities) < 2:
            raise ValueError(f"modalities must be >= 2 of {MODALITIES}, got {self.modalities}")


@dataclass
class TrainConfig:
    seed: int = 0
    batch_size: int = 256
    epochs: tuple[int, int, int] = (6, 2, 12)
    lr_graph: float = 5e-4
    lr_other: float = 5e-5
    lr_heads: float = 5e-4
    weight_decay: float = 0.01
    warmup_frac: float = 0.1
    label_smoothing: float = 0.1
    aux_weight: float = 0.5
    alpha0: float = 0.05
    alpha_max: float = 0.3
    n_clusters: int = 30
    always_frozen: tuple[str, ...] = ("text.embedding",)
    eval_every_epoch: bool = True
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        self.epochs = tuple(int(e) for e in self.epochs)
        self.always_frozen = tuple(self.always_frozen)
        if len(self.epochs) != 3 or min(self.epochs) < 1:
            raise ValueError("epochs must list three positive phase lengths")

    def to_json(self) -> dict[str, Any]:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)


def load_config(path) -> tuple[TrainConfig, dict[str, Any]]:
    """Read a JSON or TOML config. Keys outside :class:`TrainConfig` (such as
    ``manifest`` and ``out_dir``) are returned separately."""
    path = Path(path)
    if path.suffix == ".toml":
        raw = tomllib.loads(path.read_text())
    else:
        raw = json.loads(path.read_text())
    extra = {k: raw.pop(k) for k in ("manifest", "out_dir") if k in raw}
    return TrainConfig.from_dict(raw), extra


class RetrievalModel(Module):
    def __init__(self, config: ModelConfig | None = None, seed: int = 0):
        self.config = config or ModelConfig()
        c = self.config
        rng = np.random.default_rng(seed)
        self.code = (
            GraphEncoder(rng, c.d_g, c.layers, c.d_type, c.d_cont, c.head_hidden, c.embed_dim, c.dropout)
            if "code" in c.modalities
            else None
        )
        self.text = TextEncoder(rng, c.text_vocab, c.text_dim, c.embed_dim) if "text" in c.modalities else None
        self.image = ImageFeatureEncoder(rng, c.feature_dim, c.embed_dim) if "image" in c.modalities else None
        self.temperature = Temperature(c.logit_scale_init, c.logit_scale_max)
        self.aux = AuxClassifier(rng, c.embed_dim, c.aux_hidden)

    def encode(self, modality: str, inputs) -> Tensor:
        enc = getattr(self, modality)
        if enc is None:
            raise ValueError(f"model has no {modality} encoder")
        return enc(inputs)

    # single-item helpers used at inference time
    def encode_circuit(self, graph: CircuitGraph, sample_id: str | None = None) -> Embedding:
        return Embedding(self.encode("code", [graph]).data[0], "code", sample_id)

    def encode_text(self, caption: str, sample_id: str | None = None) -> Embedding:
        return Embedding(self.encode("text", [caption]).data[0], "text", sample_id)

    def encode_image_features(self, vec, sample_id: str | None = None) -> Embedding:
        return Embedding(self.encode("image", np.asarray(vec)[None, :]).data[0], "image", sample_id)

    def embed_many(self, modality: str, items: Sequence, batch: int = 64) -> np.ndarray:
        was = self.training
        self.eval()
        try:
            chunks = []
            for i in range(0, len(items), batch):
                part = items[i : i + batch]
                if modality == "image":
                    part = np.stack(part)
                chunks.append(self.encode(modality, part).data)
            return np.concatenate(chunks) if chunks else np.zeros((0, self.config.embed_dim), np.float32)
        finally:
            self.train(was)


def save_model(model: RetrievalModel, path, train_config: TrainConfig | None = None) -> None:
    meta = {"model_config": json.loads(json.dumps(asdict(model.config)))}
    if train_config is not None:
        meta["train_config"] = train_config.to_json()
    save_tensors(path, model.state_dict(), meta)


def load_model(path) -> RetrievalModel:
    tensors, meta = load_tensors(path)
    model = RetrievalModel(ModelConfig(**meta["model_config"]))
    model.load_state_dict(tensors)
    model.eval()
    return model
