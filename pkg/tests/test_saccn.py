import numpy as np
import pytest

from backend.errors import ConfigError, ShapeError
from backend.models.net_config import FULL_BASE_WIDTH, NetConfig
from backend.models.layers import pool2d
from backend.models.saccn import SaccnModel, build
from backend.models.tensor import Tape, Tensor
from backend.utils.scene import DensityMap


@pytest.fixture
def model(tiny_config):
    return SaccnModel.build(tiny_config)


def _image(rng, size, channels=3):
    return Tensor(rng.random((1, channels, size, size)))


class TestShapes:
    @pytest.mark.parametrize("size", [32, 64, 96])
    def test_density_matches_input_extent(self, model, rng, size):
        out = model(_image(rng, size))
        assert out.shape == (1, 1, size, size)
        assert (out.data >= 0).all()

    def test_non_square_batch(self, model, rng):
        out = model(Tensor(rng.random((2, 3, 32, 48))))
        assert out.shape == (2, 1, 32, 48)

    def test_encoder_dense_inputs(self, model, rng):
        maps = model.encoder_forward(_image(rng, 64))
        assert maps.i3.shape == (1, 4, 16, 16)
        assert maps.i4.shape == (1, 8, 8, 8)
        assert maps.i5.shape == (1, 16, 4, 4)
        assert maps.conv5_3.shape == (1, 16, 4, 4)

    def test_extent_not_divisible(self, model, rng):
        with pytest.raises(ShapeError, match="divisible"):
            model(_image(rng, 40))

    def test_wrong_channel_count(self, model, rng):
        with pytest.raises(ShapeError, match="input channels"):
            model(_image(rng, 32, channels=1))

    def test_grayscale_model(self, rng):
        gray = SaccnModel.build(NetConfig(base_width=2, input_channels=1))
        assert gray(_image(rng, 32, channels=1)).shape == (1, 1, 32, 32)

    def test_predict_returns_density_map(self, model, rng):
        density = model.predict(rng.random((32, 32, 3)))
        assert isinstance(density, DensityMap)
        assert density.shape == (32, 32)


class TestParameters:
    def test_stage_widths(self):
        assert NetConfig(base_width=FULL_BASE_WIDTH).stage_widths == (64, 128, 256, 512, 512)

    def test_projections_only_where_widths_differ(self, model):
        names = set(model.params.names())
        for present in ("dense.proj2to4.weight", "dense.proj2to5.weight", "dense.proj3to5.weight",
                        "skip.proj3.weight", "skip.proj2.weight"):
            assert present in names
        assert "skip.proj4.weight" not in names

    def test_expected_components(self, model):
        names = set(model.params.names())
        for expected in ("conv1_1.weight", "conv5_3.bias", "dense.ram2.fc1.weight", "skip.ram5.spatial.weight",
                         "sam.query.weight", "sam.value.weight", "sam.fusion.weight", "amm4.b5.1x5.weight",
                         "decoder.fuse2.weight", "head.weight"):
            assert expected in names

    def test_param_count_is_sum_of_tensor_sizes(self, model):
        assert model.param_count() == sum(t.size for _, t in model.params.items())

    def test_same_seed_same_weights(self, tiny_config):
        a, b = SaccnModel.build(tiny_config), SaccnModel.build(tiny_config)
        for (name, ta), (_, tb) in zip(a.params.items(), b.params.items()):
            np.testing.assert_array_equal(ta.data, tb.data, err_msg=name)

    def test_different_seed_different_weights(self, tiny_config):
        a = SaccnModel.build(tiny_config)
        b = SaccnModel.build(tiny_config.updated(seed=tiny_config.seed + 1))
        assert not np.array_equal(a.params["conv1_1.weight"].data, b.params["conv1_1.weight"].data)

    def test_forward_is_deterministic(self, model, rng):
        x = _image(rng, 32)
        np.testing.assert_array_equal(model(x).data, model(x).data)

    def test_build_rejects_zero_width(self):
        with pytest.raises(ConfigError):
            build(NetConfig(base_width=0))


def test_every_parameter_receives_a_nonzero_gradient(tiny_config, rng):
    # one hidden unit per channel keeps a dead RAM gate from hiding a whole block
    reached: dict[str, bool] = {}
    for seed in (3, 4, 5):
        model = SaccnModel.build(tiny_config.updated(seed=seed, ram_reduction=1))
        weights = Tensor(rng.normal(size=(2, 1, 32, 32)))
        with Tape() as tape:
            loss = (model(Tensor(rng.normal(size=(2, 3, 32, 32)))) * weights).sum()
            tape.backward(loss, targets=[t for _, t in model.params.items()])
        for name, tensor in model.params.items():
            assert tensor.grad is not None, name
            assert tensor.grad.shape == tensor.shape, name
            assert np.isfinite(tensor.grad).all(), name
            reached[name] = reached.get(name, False) or bool(np.any(tensor.grad != 0))
    assert [name for name, hit in reached.items() if not hit] == []


class TestConnectionsAreLive:
    def test_zeroed_dense_projection_changes_the_output(self, model, rng):
        x = Tensor(rng.normal(size=(1, 3, 32, 32)))
        before = model(x).data.copy()
        for suffix in ("weight", "bias"):
            tensor = model.params[f"dense.proj2to4.{suffix}"]
            tensor.data = np.zeros_like(tensor.data)
        maps = model.encoder_forward(x)
        np.testing.assert_array_equal(maps.i4.data, pool2d("max", maps.conv3_3, 2, 2).data)
        assert np.abs(model(x).data - before).max() > 0

    def test_removing_skip_connections_changes_the_output(self, tiny_config, rng):
        full = SaccnModel.build(tiny_config)
        plain = SaccnModel.build(tiny_config.updated(skip=False))
        for name, tensor in plain.params.items():
            np.testing.assert_array_equal(tensor.data, full.params[name].data, err_msg=name)
        x = Tensor(rng.normal(size=(1, 3, 32, 32)))
        assert np.abs(full(x).data - plain(x).data).max() > 0


VARIANTS = [
    {"use_ram": False},
    {"ram_mode": "channel"},
    {"ram_mode": "spatial"},
    {"use_sam": False},
    {"sam_mode": "spatial"},
    {"sam_mode": "channel"},
    {"use_amm": False},
    {"amm_square": True},
    {"dense": False},
    {"skip": False},
    {"use_ram": False, "use_sam": False},
    {"use_amm": False, "dense": False, "skip": False},
    {"use_ram": False, "use_sam": False, "use_amm": False, "dense": False, "skip": False},
]


class TestVariants:
    @pytest.mark.parametrize("changes", VARIANTS, ids=lambda c: ",".join(f"{k}={v}" for k, v in c.items()))
    def test_variant_runs_end_to_end(self, tiny_config, rng, changes):
        full = SaccnModel.build(tiny_config)
        variant = SaccnModel.build(tiny_config.updated(**changes))
        assert variant.variant != "full"
        x = _image(rng, 32)
        out = variant(x)
        assert out.shape == (1, 1, 32, 32)
        assert (out.data >= 0).all()
        assert np.abs(out.data - full(x).data).max() > 0

    def test_default_is_full(self, model):
        assert model.variant == "full"

    def test_without_ram(self, tiny_config):
        names = SaccnModel.build(tiny_config.updated(use_ram=False)).params.names()
        assert not [name for name in names if ".ram" in name]
        assert "dense.proj2to4.weight" in names

    def test_ram_halves(self, tiny_config):
        channel = set(SaccnModel.build(tiny_config.updated(ram_mode="channel")).params.names())
        spatial = set(SaccnModel.build(tiny_config.updated(ram_mode="spatial")).params.names())
        assert "dense.ram2.fc1.weight" in channel and "dense.ram2.spatial.weight" not in channel
        assert "dense.ram2.spatial.weight" in spatial and "dense.ram2.fc1.weight" not in spatial

    def test_sam_variants(self, tiny_config):
        assert not [n for n in SaccnModel.build(tiny_config.updated(use_sam=False)).params.names()
                    if n.startswith("sam.")]
        channel = SaccnModel.build(tiny_config.updated(sam_mode="channel")).params.names()
        assert [n for n in channel if n.startswith("sam.")] == ["sam.fusion.weight", "sam.fusion.bias"]
        assert "sam.query.weight" in SaccnModel.build(tiny_config.updated(sam_mode="spatial")).params.names()

    def test_square_amm_costs_more(self, tiny_config):
        asym = SaccnModel.build(tiny_config)
        square = SaccnModel.build(tiny_config.updated(amm_square=True))
        assert "amm4.b5.5x5.weight" in square.params.names()
        assert "amm4.b5.1x5.weight" not in square.params.names()
        assert square.param_count() > asym.param_count()
        assert square.variant == "amm=square"

    def test_without_amm(self, tiny_config):
        model = SaccnModel.build(tiny_config.updated(use_amm=False))
        assert not [name for name in model.params.names() if name.startswith("amm")]
        assert "decoder.fuse4.weight" in model.params.names()

    def test_without_dense_connections(self, tiny_config, rng):
        model = SaccnModel.build(tiny_config.updated(dense=False))
        assert not [name for name in model.params.names() if name.startswith("dense.")]
        maps = model.encoder_forward(_image(rng, 32))
        np.testing.assert_array_equal(maps.i4.data, pool2d("max", maps.conv3_3, 2, 2).data)
        np.testing.assert_array_equal(maps.i5.data, pool2d("max", maps.conv4_3, 2, 2).data)

    def test_without_skip_connections_keeps_bottleneck_ram(self, tiny_config):
        names = SaccnModel.build(tiny_config.updated(skip=False)).params.names()
        assert "skip.ram5.fc1.weight" in names
        assert not [name for name in names if name.startswith(("skip.ram4", "skip.ram3", "skip.ram2"))]
        assert "skip.proj3.weight" in names

    def test_variant_label_lists_every_change(self, tiny_config):
        cfg = tiny_config.updated(use_ram=False, sam_mode="channel", use_amm=False, dense=False, skip=False)
        assert SaccnModel.build(cfg).variant == "-ram,sam=channel,-amm,-dense,-skip"
