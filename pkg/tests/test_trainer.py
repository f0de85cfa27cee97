import json

import numpy as np
import pytest

from circret.model import ModelConfig, TrainConfig, load_config, load_model
from circret.objective import ALL_DIRECTIONS, CODE_DIRECTIONS
from circret.trainer import Dataset, NonFiniteLoss, Trainer, plan_phases


def small_config(**kw):
    base = dict(batch_size=16, epochs=(2, 1, 2), n_clusters=8, eval_every_epoch=False)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def data(small_corpus):
    return Dataset.from_manifest(small_corpus)


def test_plan_phases():
    p = plan_phases(TrainConfig())
    assert p[0].directions == CODE_DIRECTIONS and p[1].directions == ALL_DIRECTIONS
    ti = plan_phases(TrainConfig(model=ModelConfig(modalities=("text", "image"))))
    assert all(ph.trainable == ("*",) and set(ph.directions) == {("T", "I"), ("I", "T")} for ph in ti)


def test_phase_contract_and_log(data, tmp_path):
    snaps = {}

    def hook(trainer, phase):
        snaps[phase.phase] = {n: p.data.copy() for n, p in trainer.model.named_parameters()}

    res = Trainer(small_config(), data, tmp_path, on_phase_start=hook).run()
    start, after1 = snaps[1], snaps[2]
    for name in start:
        if name.startswith(("text.", "image.")):
            assert np.array_equal(start[name], after1[name]), name
    assert any(not np.array_equal(start[n], after1[n]) for n in start if n.startswith("code."))
    ev = {e["phase"]: e for e in res.optimizer_events}
    assert ev[2]["optimizer_step"] == 0 and ev[2]["moments_zero"]
    steps = [r for r in res.log if "step" in r]
    assert [r["step"] for r in steps] == list(range(1, len(steps) + 1))
    assert all(0 < r["logit_scale"] <= 100 for r in steps)
    alphas = [r["alpha"] for r in steps if r["phase"] == 3]
    assert alphas[0] == 0.05 and alphas[-1] == 0.3
    assert (tmp_path / "train_log.jsonl").is_file()
    model = load_model(tmp_path / "model.ckpt")
    for name, p in res.model.named_parameters():
        assert dict(model.named_parameters())[name].data.tobytes() == p.data.tobytes()


def test_deterministic(data, tmp_path):
    Trainer(small_config(), data, tmp_path / "a").run()
    Trainer(small_config(), data, tmp_path / "b").run()
    assert (tmp_path / "a" / "train_log.jsonl").read_bytes() == (tmp_path / "b" / "train_log.jsonl").read_bytes()
    assert (tmp_path / "a" / "model.ckpt").read_bytes() == (tmp_path / "b" / "model.ckpt").read_bytes()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_aborts(data, tmp_path):
    tr = Trainer(small_config(), data, tmp_path)
    tr.model.temperature.logit_scale.data[...] = np.inf
    with pytest.raises(NonFiniteLoss):
        tr.run()
    diag = json.loads((tmp_path / "diagnostic.json").read_text())
    assert diag["record"]["step"] == 1 and len(diag["batch"]) == 16


def test_load_config(tmp_path):
    (tmp_path / "c.toml").write_text('manifest = "m.jsonl"\nbatch_size = 32\nepochs = [1, 1, 2]\n'
                                     '[model]\nmodalities = ["text", "image"]\n')
    cfg, extra = load_config(tmp_path / "c.toml")
    assert cfg.batch_size == 32 and cfg.model.modalities == ("text", "image") and extra == {"manifest": "m.jsonl"}
    (tmp_path / "bad.json").write_text('{"batch": 3}')
    with pytest.raises(ValueError):
        load_config(tmp_path / "bad.json")
