"""Three-stack projection regressor and its iso (shared-weight) variant.

Each plane with at least one input channel gets its own convolutional stack:
``conv_layers_per_stack`` 3x3 convolutions, stride 2 on every even layer,
batch norm on every even layer, ReLU after every conv, and global average
pooling.  Stack features are concatenated (coronal, axial, sagittal order)
and fed to a dense head that ends in one linear unit.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, InputLayoutError, IsoIncompatibleError
from .nn.layers import BatchNorm2D, Conv2D, Dense, Dropout, GlobalAvgPool, ReLU, Sequential
from .rng import stream
from .projection.projection_set import PAPER_CHANNELS, PLANES, parse_channels

PLACEMENTS = ("between_conv", "between_dense")


@dataclass
class ModelConfig:
    channels: list = field(default_factory=lambda: [f"{p}-{s}" for p, s in PAPER_CHANNELS])
    conv_layers_per_stack: int = 13
    first_filters: int = 4
    final_filters: int = 256
    kernel: int = 3
    head_width: int = 308
    iso: bool = False
    dropout_placement: str = "between_conv"
    conv_dropout: float = 0.2
    dense_dropout: float = 0.3
    bn_momentum: float = 0.1
    input_dims: dict = field(default_factory=dict)
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        pairs = parse_channels(self.channels) if self.channels else []
        self.channels = [f"{p}-{s}" for p, s in pairs]
        if self.dropout_placement not in PLACEMENTS:
            raise ConfigError(f"dropout_placement must be one of {PLACEMENTS}")
        if self.conv_layers_per_stack < 1:
            raise ConfigError("need at least one conv layer per stack")
        self.input_dims = {p: tuple(int(n) for n in hw) for p, hw in self.input_dims.items()}

    @property
    def channel_pairs(self) -> list[tuple[str, str]]:
        return [tuple(c.split("-", 1)) for c in self.channels]

    @property
    def channels_per_plane(self) -> dict[str, int]:
        counts = {p: 0 for p in PLANES}
        for plane, _ in self.channel_pairs:
            counts[plane] += 1
        return counts

    @property
    def active_planes(self) -> list[str]:
        return [p for p, n in self.channels_per_plane.items() if n > 0]

    def filter_schedule(self) -> list[int]:
        return [min(self.first_filters * 2 ** ((i - 1) // 2), self.final_filters)
                for i in range(1, self.conv_layers_per_stack + 1)]

    def strides(self) -> list[int]:
        return [2 if i % 2 == 0 else 1 for i in range(1, self.conv_layers_per_stack + 1)]

    @property
    def features_per_stack(self) -> int:
        return self.filter_schedule()[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_dims"] = {p: list(hw) for p, hw in self.input_dims.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def check_input_dims(cfg: ModelConfig, plane: str, hw) -> None:
    """Every stride-2 layer must receive at least 2 pixels along each side."""
    for side in hw:
        n = int(side)
        for layer, stride in enumerate(cfg.strides(), start=1):
            if stride == 2:
                if n < 2:
                    raise ConfigError(
                        f"{plane} input {tuple(hw)} too small: layer {layer} would downsample "
                        f"a {n}-pixel side; {cfg.strides().count(2)} stride-2 stages need more"
                    )
                n = (n + 1) // 2


def build_stack(cfg: ModelConfig, in_channels: int, rng) -> Sequential:
    dtype = np.dtype(cfg.dtype)
    layers = []
    prev = in_channels
    for i, (filters, stride) in enumerate(zip(cfg.filter_schedule(), cfg.strides()), start=1):
        layers.append(Conv2D(prev, filters, cfg.kernel, stride, rng=rng, dtype=dtype))
        every_second = i % 2 == 0
        if every_second:
            layers.append(BatchNorm2D(filters, momentum=cfg.bn_momentum, dtype=dtype))
        layers.append(ReLU())
        if every_second and cfg.dropout_placement == "between_conv" and cfg.conv_dropout > 0:
            layers.append(Dropout(cfg.conv_dropout))
        prev = filters
    layers.append(GlobalAvgPool())
    return Sequential(layers)


def build_head(cfg: ModelConfig, in_features: int, rng) -> Sequential:
    dtype = np.dtype(cfg.dtype)
    if in_features == 0:
        # no input channels: a learnable constant
        return Sequential([Dense(0, 1, rng=rng, dtype=dtype)])
    drop = cfg.dropout_placement == "between_dense" and cfg.dense_dropout > 0
    layers = []
    if drop:
        layers.append(Dropout(cfg.dense_dropout))
    layers += [Dense(in_features, cfg.head_width, rng=rng, dtype=dtype), ReLU()]
    if drop:
        layers.append(Dropout(cfg.dense_dropout))
    layers.append(Dense(cfg.head_width, 1, rng=rng, dtype=dtype))
    return Sequential(layers)


class Model:
    def __init__(self, cfg: ModelConfig, stacks: dict, head: Sequential):
        self.cfg = cfg
        self.stacks = stacks
        self.head = head

    # parameter bookkeeping -------------------------------------------------

    def _modules(self):
        """Unique (prefix, Sequential) pairs; a shared stack is listed once."""
        if self.cfg.iso and self.stacks:
            yield "shared", next(iter(self.stacks.values()))
        else:
            for plane, stack in self.stacks.items():
                yield plane, stack
        yield "head", self.head

    def _collect(self, attr):
        out = {}
        for prefix, seq in self._modules():
            for name, arr in getattr(seq, attr)().items():
                out[f"{prefix}.{name}"] = arr
        return out

    def parameters(self) -> dict:
        return self._collect("named_parameters")

    def gradients(self) -> dict:
        return self._collect("named_gradients")

    def buffers(self) -> dict:
        return self._collect("named_buffers")

    def state_tensors(self) -> dict:
        return {**self.parameters(), **self.buffers()}

    def param_count(self) -> int:
        return int(sum(p.size for p in self.parameters().values()))

    def zero_grad(self):
        for _, seq in self._modules():
            seq.zero_grad()

    def load_state(self, tensors: dict) -> None:
        modules = dict(self._modules())
        expected = set(self.state_tensors())
        missing = expected - set(tensors)
        if missing:
            raise ConfigError(f"checkpoint lacks tensors: {sorted(missing)[:5]}")
        for key, value in tensors.items():
            prefix, rest = key.split(".", 1)
            modules[prefix].load_tensor(rest, value)

    # computation -----------------------------------------------------------

    def _check_batch(self, batch: dict) -> int:
        sizes = set()
        for plane in PLANES:
            want = self.cfg.channels_per_plane[plane]
            x = batch.get(plane)
            have = 0 if x is None else x.shape[1]
            if want and x is None:
                raise InputLayoutError(f"batch is missing the {plane} plane")
            if x is not None and want and have != want:
                raise InputLayoutError(f"{plane}: model expects {want} channels, batch has {have}")
            if x is not None and want:
                if x.ndim != 4:
                    raise InputLayoutError(f"{plane}: expected (batch, channel, h, w), got {x.shape}")
                sizes.add(x.shape[0])
        if "batch_size" in batch:
            sizes.add(int(batch["batch_size"]))
        if len(sizes) != 1:
            raise InputLayoutError(f"inconsistent batch sizes across planes: {sorted(sizes)}")
        return sizes.pop()

    def stack_features(self, batch: dict, *, train=False, rng=None):
        """Per-plane feature vectors ``{plane: (B, F)}`` plus stack caches."""
        feats, caches = {}, {}
        dtype = np.dtype(self.cfg.dtype)
        for plane, stack in self.stacks.items():
            x = np.ascontiguousarray(np.asarray(batch[plane], dtype=dtype).transpose(1, 0, 2, 3))
            feats[plane], caches[plane] = stack.forward(x, train=train, rng=rng)
        return feats, caches

    def forward(self, batch: dict, *, train=False, rng=None, return_cache=False):
        """Predictions of shape ``(B, 1)``.

        ``batch`` maps plane name to a ``(B, C, h, w)`` array.  A model with
        no active planes needs ``batch["batch_size"]``.
        """
        n = self._check_batch(batch)
        feats, caches = self.stack_features(batch, train=train, rng=rng)
        if feats:
            z = np.concatenate([feats[p] for p in self.stacks], axis=1)
        else:
            z = np.zeros((n, 0), dtype=np.dtype(self.cfg.dtype))
        y, head_cache = self.head.forward(z, train=train, rng=rng)
        if return_cache:
            return y, {"stacks": caches, "head": head_cache}
        return y

    def backward(self, dy, cache) -> None:
        dz = self.head.backward(dy, cache["head"])
        start = 0
        for plane, stack in self.stacks.items():
            width = self.cfg.features_per_stack
            stack.backward(np.ascontiguousarray(dz[:, start:start + width]),
                           cache["stacks"][plane], need_input_grad=False)
            start += width

    # serialization ---------------------------------------------------------

    def header(self) -> dict:
        return {
            "model_config": self.cfg.to_dict(),
            "layers": {prefix: seq.specs() for prefix, seq in self._modules()},
        }


def build_model(cfg: ModelConfig, input_dims: dict | None = None) -> Model:
    """Instantiate the network; ``input_dims`` maps plane to ``(h, w)``."""
    if input_dims:
        cfg.input_dims = {p: tuple(int(n) for n in hw) for p, hw in input_dims.items()}
    active = cfg.active_planes
    for plane in active:
        if plane in cfg.input_dims:
            check_input_dims(cfg, plane, cfg.input_dims[plane])
    counts = cfg.channels_per_plane
    if cfg.iso and len({counts[p] for p in active}) > 1:
        raise IsoIncompatibleError(
            f"iso needs equal channels per plane, got { {p: counts[p] for p in active} }"
        )
    rng = stream(cfg.seed, "init")
    stacks = {}
    if cfg.iso and active:
        shared = build_stack(cfg, counts[active[0]], rng)
        stacks = {p: shared for p in active}
    else:
        for plane in active:
            stacks[plane] = build_stack(cfg, counts[plane], rng)
    head = build_head(cfg, len(active) * cfg.features_per_stack, rng)
    return Model(cfg, stacks, head)


def set_iso(model: Model) -> Model:
    """Rebuild ``model`` with one shared stack (the first active plane's weights)."""
    cfg = model.cfg
    active = cfg.active_planes
    counts = cfg.channels_per_plane
    if len({counts[p] for p in active}) > 1:
        raise IsoIncompatibleError(
            f"iso needs equal channels per plane, got { {p: counts[p] for p in active} }"
        )
    cfg.iso = True
    if active:
        shared = model.stacks[active[0]]
        model.stacks = {p: shared for p in active}
    return model


def model_from_checkpoint(header: dict, tensors: dict) -> Model:
    cfg = ModelConfig.from_dict(header["model_config"])
    model = build_model(cfg)
    model.load_state(tensors)
    return model


def paper_configs() -> dict[str, ModelConfig]:
    """The four Table-1 style configurations (3 mean, 3 std, 6, 6 iso)."""
    return {
        "3-mean": ModelConfig(channels=[f"{p}-mean" for p in PLANES]),
        "3-std": ModelConfig(channels=[f"{p}-std" for p in PLANES]),
        "6-channel": ModelConfig(),
        "6-channel-iso": ModelConfig(iso=True),
    }
