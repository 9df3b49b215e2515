import numpy as np
import pytest

from nibkit.autodiff import ops
from nibkit.autodiff.tensor import Tensor, backward, no_grad
from nibkit.models import (
    LayerMeta,
    ModelConfig,
    StackLayer,
    build_model,
    build_stack,
    extents,
    receptive_field,
)
from nibkit.nib import NoiseSpec, variant


def rand(shape, seed=0):
    return Tensor(np.random.default_rng(seed).random(shape).astype(np.float32))


class TestReceptiveField:
    @pytest.mark.parametrize("arch, rf", [("resnet", 41), ("unet", 183), ("autoencoder", 29)])
    def test_analytic(self, arch, rf):
        assert receptive_field(build_model(ModelConfig(arch=arch))) == (rf, rf)

    def test_nib_kernel_adds_extent(self):
        m = build_model(ModelConfig(nib=NoiseSpec(), nib_kernel=3))
        assert receptive_field(m) == (43, 43)

    def test_extent_recurrence(self):
        layers = [LayerMeta("a", 3), LayerMeta("b", 3, 2), LayerMeta("c", 3), LayerMeta("u", upsample=True),
                  LayerMeta("d", 3)]
        assert [e[0] for e in extents(layers)] == [3, 5, 9, 9, 11]
        assert extents(layers)[-1][1] == 1.0

    def _changed_box(self, model, size, at):
        # float64 keeps far-field contributions from rounding away
        for p in model.params.values():
            p.data = p.data.astype(np.float64)
        x = Tensor(np.random.default_rng(1).random((1, 1, size, size)))
        x2 = Tensor(x.data.copy())
        x2.data[0, 0, at[0], at[1]] += 1.0
        with no_grad():
            diff = model(x).data != model(x2).data
        ys, xs = np.nonzero(diff[0, 0])
        return ys.min(), ys.max(), xs.min(), xs.max()

    def test_brute_force_resnet_48(self):
        m = build_model(ModelConfig())
        y0, y1, x0, x1 = self._changed_box(m, 48, (24, 24))
        r = receptive_field(m)[0]
        assert y1 - y0 + 1 <= r and x1 - x0 + 1 <= r
        assert max(abs(y0 - 24), abs(y1 - 24), abs(x0 - 24), abs(x1 - 24)) <= (r - 1) // 2
        # the bound is tight for a randomly initialised network
        assert y1 - y0 + 1 == r and x1 - x0 + 1 == r

    def test_brute_force_stack_with_stride_and_upsample(self):
        layers = [StackLayer("conv", 4, 3), StackLayer("relu"), StackLayer("conv", 4, 3, 2), StackLayer("tanh"),
                  StackLayer("up"), StackLayer("conv", 1, 5)]
        m = build_stack(layers)
        y0, y1, x0, x1 = self._changed_box(m, 40, (20, 21))
        r = receptive_field(m)[0]
        assert y1 - y0 + 1 <= r + 1 and x1 - x0 + 1 <= r + 1


class TestModels:
    @pytest.mark.parametrize("arch", ["resnet", "unet", "autoencoder"])
    def test_forward_shapes_and_range(self, arch):
        m = build_model(ModelConfig(arch=arch))
        with no_grad():
            y = m(rand((2, 1, 32, 32)))
        assert y.shape == (2, 1, 32, 32)
        if arch != "autoencoder":
            assert y.data.min() >= 0 and y.data.max() <= 1

    def test_parameter_counts(self):
        counts = {a: build_model(ModelConfig(arch=a)).parameter_count() for a in ("resnet", "unet", "autoencoder")}
        assert counts == {"resnet": 11705, "unet": 143401, "autoencoder": 12785}

    def test_nib_only_changes_head(self):
        std = build_model(ModelConfig())
        nib = build_model(ModelConfig(nib=NoiseSpec()))
        shared = set(std.params) & set(nib.params)
        assert {k for k in std.params if k not in shared} == {"head.weight", "head.bias"}
        assert {k for k in nib.params if k not in shared} == {f"head.{b}.{p}" for b in ("f1", "f2")
                                                              for p in ("weight", "bias")}
        for k in shared:
            assert std.params[k].data.tobytes() == nib.params[k].data.tobytes()

    def test_deterministic_init(self):
        a = build_model(ModelConfig(init_seed=3)).snapshot()
        b = build_model(ModelConfig(init_seed=3)).snapshot()
        c = build_model(ModelConfig(init_seed=4)).snapshot()
        assert all(a[k].tobytes() == b[k].tobytes() for k in a)
        assert any(a[k].tobytes() != c[k].tobytes() for k in a if "weight" in k)

    def test_divisibility(self):
        m = build_model(ModelConfig(arch="unet"))
        with pytest.raises(ValueError, match="divisible by 8"):
            m(rand((1, 1, 36, 36)))
        build_model(ModelConfig())(rand((1, 1, 13, 11)))

    def test_channel_mismatch(self):
        with pytest.raises(ValueError, match="1 input channels"):
            build_model(ModelConfig())(rand((1, 3, 8, 8)))

    @pytest.mark.parametrize("kwargs", [dict(arch="vgg"), dict(base_width=4), dict(output_activation="relu"),
                                        dict(nib_kernel=2), dict(num_blocks=0)])
    def test_invalid_config(self, kwargs):
        with pytest.raises(ValueError):
            ModelConfig(**kwargs)

    def test_config_roundtrip(self):
        cfg = ModelConfig(arch="unet", base_width=16, nib=variant("D-B-0.5", seed=3), init_seed=9)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg

    def test_gradients_reach_every_parameter(self):
        m = build_model(ModelConfig(arch="unet", nib=NoiseSpec()))
        x = rand((1, 1, 16, 16))
        backward(ops.mse_loss(m(x), x))
        assert all(p.grad is not None and np.isfinite(p.grad).all() for p in m.params.values())
        assert np.abs(m.params["head.f1.weight"].grad).sum() > 0

    def test_record_names_match_layers(self):
        m = build_model(ModelConfig(arch="unet"))
        rec = []
        with no_grad():
            m(rand((1, 1, 16, 16)), record=rec)
        assert [n for n, _ in rec] == [layer.name for layer in m.layers]

    def test_snapshot_load(self):
        a, b = build_model(ModelConfig(init_seed=1)), build_model(ModelConfig(init_seed=2))
        b.load(a.snapshot())
        x = rand((1, 1, 12, 12))
        with no_grad():
            assert a(x).data.tobytes() == b(x).data.tobytes()
