import numpy as np
import pytest

from gradcheck import fd_grad
from projscan.errors import ConfigError, InputLayoutError, IsoIncompatibleError
from projscan.model import ModelConfig, build_model, model_from_checkpoint, paper_configs, set_iso
from projscan.nn import load_checkpoint, save_checkpoint

DIMS = {"coronal": (256, 208), "axial": (256, 256), "sagittal": (256, 208)}


def expected_stack_params(in_channels, layers=13, first=4, final=256):
    """Independent count: 3x3 convs with bias, BN (gamma, beta) on even layers."""
    total, prev = 0, in_channels
    for i in range(1, layers + 1):
        f = min(first * 2 ** ((i - 1) // 2), final)
        total += prev * 9 * f + f
        if i % 2 == 0:
            total += 2 * f
        prev = f
    return total


def expected_head_params(n_stacks, width=308, features=256):
    return (n_stacks * features + 1) * width + width + 1


def test_filter_schedule():
    cfg = ModelConfig()
    assert cfg.filter_schedule() == [4, 4, 8, 8, 16, 16, 32, 32, 64, 64, 128, 128, 256]
    assert [i for i, s in enumerate(cfg.strides(), 1) if s == 2] == [2, 4, 6, 8, 10, 12]


def test_paper_param_counts():
    counts = {k: build_model(c, DIMS).param_count() for k, c in paper_configs().items()}
    stack2, stack1 = expected_stack_params(2), expected_stack_params(1)
    head = expected_head_params(3)
    assert counts["6-channel"] == 3 * stack2 + head
    assert counts["3-mean"] == counts["3-std"] == 3 * stack1 + head
    assert counts["6-channel-iso"] == stack2 + head
    assert counts["6-channel"] - counts["3-mean"] == 108
    for name, n in counts.items():
        assert 800_000 < n < 2_100_000, (name, n)
    assert counts["6-channel"] - counts["6-channel-iso"] == 2 * stack2


def test_delta_holds_for_other_designs():
    for layers, width in [(5, 16), (9, 64)]:
        a = build_model(ModelConfig(conv_layers_per_stack=layers, head_width=width)).param_count()
        b = build_model(ModelConfig(channels="mean", conv_layers_per_stack=layers,
                                    head_width=width)).param_count()
        assert a - b == 108


def test_set_iso_count():
    model = build_model(ModelConfig(), DIMS)
    per_stack = sum(p.size for k, p in model.parameters().items() if k.startswith("axial."))
    head = sum(p.size for k, p in model.parameters().items() if k.startswith("head."))
    set_iso(model)
    assert model.param_count() == per_stack + head
    assert model.stacks["coronal"] is model.stacks["sagittal"]


def test_input_too_small():
    build_model(ModelConfig(), {"coronal": (64, 52), "axial": (64, 64), "sagittal": (64, 52)})
    with pytest.raises(ConfigError, match="axial"):
        build_model(ModelConfig(), {"coronal": (64, 52), "axial": (32, 64), "sagittal": (64, 52)})


def test_iso_incompatible():
    with pytest.raises(IsoIncompatibleError):
        build_model(ModelConfig(channels="axial-mean,axial-std,coronal-mean", iso=True))
    model = build_model(ModelConfig(channels="axial-mean,axial-std,coronal-mean"))
    with pytest.raises(IsoIncompatibleError):
        set_iso(model)


def small_cfg(**kw):
    base = dict(conv_layers_per_stack=4, final_filters=16, head_width=8)
    base.update(kw)
    return ModelConfig(**base)


def random_batch(rng, n, dims=None, channels=2):
    dims = dims or {"coronal": (12, 10), "axial": (12, 12), "sagittal": (12, 10)}
    return {p: rng.uniform(size=(n, channels, *hw)).astype(np.float32) for p, hw in dims.items()}


def test_forward_shapes_and_finiteness():
    model = build_model(small_cfg())
    rng = np.random.default_rng(0)
    assert model.forward(random_batch(rng, 2)).shape == (2, 1)
    zeros = {p: np.zeros_like(a) for p, a in random_batch(rng, 3).items()}
    assert np.all(np.isfinite(model.forward(zeros)))


def test_layout_errors_name_plane():
    model = build_model(small_cfg())
    batch = random_batch(np.random.default_rng(1), 2)
    batch["sagittal"] = batch["sagittal"][:, :1]
    with pytest.raises(InputLayoutError, match="sagittal"):
        model.forward(batch)
    del batch["sagittal"]
    with pytest.raises(InputLayoutError, match="sagittal"):
        model.forward(batch)


def test_iso_identical_planes_identical_features():
    model = build_model(small_cfg(iso=True))
    img = np.random.default_rng(2).uniform(size=(3, 2, 12, 12)).astype(np.float32)
    feats, _ = model.stack_features({p: img for p in ("coronal", "axial", "sagittal")})
    np.testing.assert_array_equal(feats["coronal"], feats["axial"])
    np.testing.assert_array_equal(feats["axial"], feats["sagittal"])


def test_batch_composition_invariance():
    model = build_model(small_cfg())
    rng = np.random.default_rng(3)
    # give the running stats non-trivial values first
    model.forward(random_batch(rng, 4), train=True, rng=rng)
    batch = random_batch(rng, 5)
    together = model.forward(batch)
    for i in range(5):
        alone = model.forward({p: a[i:i + 1] for p, a in batch.items()})
        np.testing.assert_allclose(alone, together[i:i + 1], rtol=1e-6, atol=1e-6)


def test_empty_channel_set_is_constant():
    model = build_model(ModelConfig(channels=[]))
    assert model.param_count() == 1
    out = model.forward({"batch_size": 4})
    assert out.shape == (4, 1)
    assert np.all(out == out[0])


def _loss_and_grads(model, batch, r):
    model.zero_grad()
    y, cache = model.forward(batch, train=True, return_cache=True)
    model.backward(r, cache)
    return float(np.sum(r * y)), {k: v.copy() for k, v in model.gradients().items()}


def test_iso_gradient_is_sum_of_stack_gradients():
    rng = np.random.default_rng(4)
    cfg = dict(conv_dropout=0.0, dtype="float64", seed=7)
    iso = build_model(small_cfg(iso=True, **cfg))
    untied = build_model(small_cfg(**cfg))
    shared = {k[len("shared."):]: v for k, v in iso.parameters().items() if k.startswith("shared.")}
    for key, value in untied.parameters().items():
        prefix, rest = key.split(".", 1)
        value[...] = shared[rest] if prefix != "head" else iso.parameters()[key]
    batch = {p: a.astype(np.float64) for p, a in random_batch(rng, 3).items()}
    r = rng.standard_normal((3, 1))
    loss_iso, g_iso = _loss_and_grads(iso, batch, r)
    loss_untied, g_untied = _loss_and_grads(untied, batch, r)
    assert loss_iso == pytest.approx(loss_untied, rel=1e-12)
    for name in shared:
        total = sum(g_untied[f"{p}.{name}"] for p in ("coronal", "axial", "sagittal"))
        np.testing.assert_allclose(g_iso[f"shared.{name}"], total, rtol=1e-5, atol=1e-10)

    # finite differences on the shared first-layer weight
    w = iso.parameters()["shared.0.conv2d.weight"]
    fd = fd_grad(lambda: float(np.sum(r * iso.forward(batch, train=True))), w, h=1e-5)
    np.testing.assert_allclose(g_iso["shared.0.conv2d.weight"], fd, rtol=1e-4, atol=1e-7)


def test_non_iso_stacks_independent():
    model = build_model(small_cfg())
    names = {k.split(".")[0] for k in model.parameters()}
    assert names == {"coronal", "axial", "sagittal", "head"}
    assert model.stacks["axial"] is not model.stacks["coronal"]


def test_checkpoint_rebuilds_architecture(tmp_path):
    rng = np.random.default_rng(5)
    model = build_model(small_cfg(channels="axial-std,sagittal-mean,sagittal-std"),
                        {"axial": (12, 12), "sagittal": (12, 10)})
    model.forward({"axial": rng.uniform(size=(4, 1, 12, 12)).astype(np.float32),
                   "sagittal": rng.uniform(size=(4, 2, 12, 10)).astype(np.float32)},
                  train=True, rng=rng)
    save_checkpoint(tmp_path / "m.psck", model.state_tensors(), model.header())
    header, tensors = load_checkpoint(tmp_path / "m.psck")
    back = model_from_checkpoint(header, tensors)
    batch = {"axial": rng.uniform(size=(2, 1, 12, 12)).astype(np.float32),
             "sagittal": rng.uniform(size=(2, 2, 12, 10)).astype(np.float32)}
    assert back.forward(batch).tobytes() == model.forward(batch).tobytes()
