import numpy as np
import pytest

from backend.errors import CheckpointError, CheckpointMagicError
from backend.models.adam_optimizer import AdamState, adam_step
from backend.models.checkpoint import (
    MAGIC,
    load_checkpoint,
    read_checkpoint,
    read_checkpoint_header,
    save_checkpoint,
)
from backend.models.saccn import SaccnModel
from backend.pipeline_helpers import PipelineHelper


@pytest.fixture
def model(tiny_config):
    return SaccnModel.build(tiny_config)


@pytest.fixture
def path(tmp_path, model):
    return save_checkpoint(tmp_path / "model.ckpt", model)


def test_round_trip_restores_every_tensor(model, path):
    restored = load_checkpoint(path)
    assert restored.config == model.config
    assert restored.params.names() == model.params.names()
    for name, tensor in model.params.items():
        np.testing.assert_array_equal(restored.params[name].data, tensor.data, err_msg=name)


def test_header_table_is_sorted(model, path):
    header = read_checkpoint_header(path)
    assert header.version == 1
    assert "base_width=2\n" in header.config_text
    names = [name for name, _ in header.tensors]
    assert names == sorted(model.params.names())
    assert dict(header.tensors)["conv1_1.weight"] == (2, 3, 3, 3)


def test_file_starts_with_magic(path):
    assert path.read_bytes()[: len(MAGIC)] == MAGIC


def test_bad_magic(tmp_path):
    bogus = tmp_path / "bogus.ckpt"
    bogus.write_bytes(b"NOTACHECKPOINT")
    with pytest.raises(CheckpointMagicError):
        load_checkpoint(bogus)


def test_truncated_file(tmp_path, path):
    cut = tmp_path / "cut.ckpt"
    cut.write_bytes(path.read_bytes()[:-7])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(cut)


def test_trailing_bytes(tmp_path, path):
    padded = tmp_path / "padded.ckpt"
    padded.write_bytes(path.read_bytes() + b"\0")
    with pytest.raises(CheckpointError, match="trailing"):
        read_checkpoint(padded)


def test_shape_mismatch_names_the_tensor(path, tiny_config):
    with pytest.raises(CheckpointError, match="conv1_1.weight"):
        load_checkpoint(path, tiny_config.updated(base_width=4))


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.ckpt")


def test_optimizer_state_round_trip(tmp_path, model):
    state = AdamState.from_config(model.config)
    grads = {name: np.full(t.shape, 0.5, dtype=t.dtype) for name, t in model.params.items()}
    adam_step(model.params, state, grads)
    path = save_checkpoint(tmp_path / "with_state.ckpt", model)
    header = read_checkpoint_header(path)
    assert header.extras == {"adam_t": "1"}
    assert any(name.startswith("adam.m/") for name, _ in header.tensors)

    restored = load_checkpoint(path)
    restored_state = restored.params.optimizer_state
    assert restored_state.t == 1
    for name in model.params.names():
        np.testing.assert_array_equal(restored_state.m[name], state.m[name])
        np.testing.assert_array_equal(restored_state.v[name], state.v[name])


def test_inspect_counts_parameters(path, model):
    info = PipelineHelper.inspect(path)
    assert info["version"] == 1
    assert info["param_count"] == model.param_count()
    assert info["model_param_count"] == model.param_count()


def test_save_load_save_is_byte_identical(tmp_path, path):
    again = save_checkpoint(tmp_path / "again.ckpt", load_checkpoint(path))
    assert again.read_bytes() == path.read_bytes()
