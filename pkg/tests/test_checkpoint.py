import json

import numpy as np
import pytest

from shiftlab.services.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from shiftlab.services.gdan import GdanModel, GeneratorNet, LabelPrior, ThetaMatrix
from shiftlab.services.kernels import LabelKernel, fixed_kernel
from shiftlab.services.rng import Rng
from shiftlab.services.temp_utils import atomic_write_text


def _model() -> GdanModel:
    rng = Rng(11)
    gen = GeneratorNet.init(2, 2, 1, (3,), 2, "tanh", rng.split("init"))
    theta = ThetaMatrix.init(1, ("s1", "s2", "target"), rng.split("theta"), scale=1.0)
    return GdanModel(gen, theta, LabelPrior((0.0, 1.0), (0.25, 0.75)), fixed_kernel(),
                     LabelKernel("delta", (0.0, 1.0)), ("X1", "X2"), trace=(1.5, 1.25))


def test_round_trip_is_bit_exact(tmp_path):
    model = _model()
    sha = save_checkpoint(tmp_path / "ckpt" / "checkpoint.json", model, {"name": "demo"})
    loaded, meta, sha2 = load_checkpoint(tmp_path / "ckpt" / "checkpoint.json")
    assert sha == sha2 and meta == {"name": "demo"}
    assert loaded.kind == "gdan" and loaded.trace == (1.5, 1.25)
    for key, value in model.gen.params.items():
        assert np.array_equal(loaded.gen.params[key], value), key
    assert np.array_equal(loaded.theta.values, model.theta.values)
    a = model.sample("s2", 10, Rng(3))
    b = loaded.sample("s2", 10, Rng(3))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_tampered_checkpoint_is_rejected(tmp_path):
    path = tmp_path / "checkpoint.json"
    save_checkpoint(path, _model())
    doc = json.loads(path.read_text(encoding="utf-8"))
    doc["payload"]["theta"]["values"][0][0] += 1.0
    path.write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(CheckpointError, match="hash mismatch"):
        load_checkpoint(path)


@pytest.mark.parametrize("field, value, message", [
    ("format", "something-else", "not a shiftlab checkpoint"),
    ("version", 99, "unsupported checkpoint version"),
])
def test_foreign_documents_are_rejected(tmp_path, field, value, message):
    path = tmp_path / "checkpoint.json"
    save_checkpoint(path, _model())
    doc = json.loads(path.read_text(encoding="utf-8"))
    doc[field] = value
    path.write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(CheckpointError, match=message):
        load_checkpoint(path)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(CheckpointError, match="not valid JSON"):
        load_checkpoint(bad)


def test_atomic_write_leaves_no_scratch(tmp_path):
    target = tmp_path / "out" / "file.txt"
    target.parent.mkdir()
    atomic_write_text(target, "first")
    atomic_write_text(target, "second")
    assert target.read_text(encoding="utf-8") == "second"
    assert [p.name for p in target.parent.iterdir()] == ["file.txt"]


def test_failed_write_leaves_no_staged_file(tmp_path, monkeypatch):
    target = tmp_path / "file.txt"
    atomic_write_text(target, "kept")

    def refuse(src, dst):
        raise OSError("rename refused")

    monkeypatch.setattr("shiftlab.services.temp_utils.os.replace", refuse)
    with pytest.raises(OSError, match="rename refused"):
        atomic_write_text(target, "lost")
    assert target.read_text(encoding="utf-8") == "kept"
    assert [p.name for p in tmp_path.iterdir()] == ["file.txt"]
