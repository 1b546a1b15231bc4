"""MBConv feature extractor, classification head and parameter bookkeeping.

A :class:`NetworkSpec` describes stem, MBConv stages and head;
:func:`build_network` turns it into a :class:`Network` whose tensors live
in a :class:`ParameterStore`.  Convolutions that feed a batch norm carry no
bias, so every conv/BN pair contributes ``kernel + 4 * channels`` values.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Iterator, Optional

import numpy as np

from . import functional as F
from .errors import ShapeError, SpecError
from .tensor import Tensor, get_default_dtype


@dataclass(frozen=True)
class MBConvSpec:
    expansion_factor: int
    out_channels: int
    repeat: int
    stride: int
    dw_kernel: int = 3
    se_ratio: float = 0.25


@dataclass(frozen=True)
class NetworkSpec:
    input_size: tuple = (300, 300, 3)
    stem_filters: int = 40
    stem_kernel: int = 3
    stem_stride: int = 2
    stages: tuple = ()
    head_channels: int = 1536
    num_classes: int = 5
    extractor_frozen: bool = True
    bn_momentum: float = 0.99
    bn_eps: float = 1e-3

    def validate(self) -> "NetworkSpec":
        if len(self.input_size) != 3 or any(int(d) < 1 for d in self.input_size):
            raise SpecError(f"input_size must be three positive extents, got {self.input_size}")
        if not self.stages:
            raise SpecError("at least one MBConv stage is required")
        for pos, st in enumerate(self.stages, 1):
            if st.expansion_factor < 1 or st.out_channels < 1 or st.repeat < 1:
                raise SpecError(f"stage {pos}: expansion, channels and repeat must be positive")
            if st.stride not in (1, 2):
                raise SpecError(f"stage {pos}: stride must be 1 or 2, got {st.stride}")
            if st.dw_kernel < 1 or st.dw_kernel % 2 == 0:
                raise SpecError(f"stage {pos}: depthwise kernel must be odd, got {st.dw_kernel}")
            if not 0 < st.se_ratio <= 1:
                raise SpecError(f"stage {pos}: se_ratio must lie in (0, 1], got {st.se_ratio}")
        for name in ("stem_filters", "stem_kernel", "stem_stride", "head_channels", "num_classes"):
            if getattr(self, name) < 1:
                raise SpecError(f"{name} must be positive")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        d["stages"] = [asdict(s) for s in self.stages]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown network keys: {sorted(unknown)}")
        stage_keys = set(MBConvSpec.__dataclass_fields__)
        stages = []
        for st in d.pop("stages", ()):
            if set(st) - stage_keys:
                raise SpecError(f"unknown stage keys: {sorted(set(st) - stage_keys)}")
            stages.append(MBConvSpec(**st))
        if "input_size" in d:
            d["input_size"] = tuple(d["input_size"])
        try:
            return cls(stages=tuple(stages), **d).validate()
        except TypeError as exc:
            raise SpecError(str(exc)) from None


def _stages(expansions, channels, repeats, strides, kernels=None):
    kernels = kernels or [3] * len(channels)
    return tuple(MBConvSpec(e, c, r, s, k) for e, c, r, s, k in zip(expansions, channels, repeats, strides, kernels))


FIDELITY_CHANNELS = [24, 32, 48, 96, 136, 232, 384]
FIDELITY_REPEATS = [3, 3, 3, 5, 5, 5, 3]
FIDELITY_STRIDES = [1, 2, 2, 2, 1, 2, 1]
FIDELITY_EXPANSIONS = [1, 6, 6, 6, 6, 6, 6]
CANONICAL_B3_KERNELS = [3, 3, 5, 3, 5, 5, 3]

PRESETS = {
    "fidelity-b3": NetworkSpec(
        input_size=(300, 300, 3), stem_filters=40,
        stages=_stages(FIDELITY_EXPANSIONS, FIDELITY_CHANNELS, FIDELITY_REPEATS, FIDELITY_STRIDES),
        head_channels=1536, num_classes=5, extractor_frozen=True),
    "desk": NetworkSpec(
        input_size=(64, 64, 3), stem_filters=8,
        stages=_stages([1, 6], [8, 16], [1, 1], [1, 2]),
        head_channels=32, num_classes=5, extractor_frozen=False, bn_momentum=0.9),
    # Canonical B3 repeats/kernels; its counts coincide with the published B3 extractor.
    "b3-canonical": NetworkSpec(
        input_size=(300, 300, 3), stem_filters=40,
        stages=_stages(FIDELITY_EXPANSIONS, FIDELITY_CHANNELS, [2, 3, 3, 5, 5, 6, 2], FIDELITY_STRIDES,
                       CANONICAL_B3_KERNELS),
        head_channels=1536, num_classes=5, extractor_frozen=True),
    # Informational: smaller family members.
    "b1-like": NetworkSpec(
        input_size=(240, 240, 3), stem_filters=32,
        stages=_stages(FIDELITY_EXPANSIONS, [16, 24, 40, 80, 112, 192, 320], [2, 3, 3, 4, 4, 5, 2],
                       FIDELITY_STRIDES, CANONICAL_B3_KERNELS),
        head_channels=1280, num_classes=5, extractor_frozen=True),
    "b2-like": NetworkSpec(
        input_size=(260, 260, 3), stem_filters=32,
        stages=_stages(FIDELITY_EXPANSIONS, [16, 24, 48, 88, 120, 208, 352], [2, 3, 3, 4, 4, 5, 2],
                       FIDELITY_STRIDES, CANONICAL_B3_KERNELS),
        head_channels=1408, num_classes=5, extractor_frozen=True),
}


def preset(name: str, **overrides) -> NetworkSpec:
    try:
        spec = PRESETS[name]
    except KeyError:
        raise SpecError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(spec, **overrides).validate() if overrides else spec


# --- parameter store ---------------------------------------------------------

@dataclass
class Entry:
    tensor: Tensor
    trainable: bool
    buffer: bool = False  # running statistics: counted, never optimized


class ParameterStore:
    """Named tensors in creation order, each flagged trainable or frozen."""

    def __init__(self):
        self._entries: dict[str, Entry] = {}

    def add(self, name: str, tensor: Tensor, trainable: bool, buffer: bool = False) -> Tensor:
        if name in self._entries:
            raise SpecError(f"duplicate parameter name {name!r}")
        tensor.name = name
        tensor.requires_grad = trainable and not buffer
        self._entries[name] = Entry(tensor, trainable, buffer)
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name].tensor

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def entries(self) -> Iterator[tuple[str, Entry]]:
        return iter(self._entries.items())

    def optimizable(self) -> list[Tensor]:
        """Tensors an optimizer may update: trainable and not running statistics."""
        return [e.tensor for e in self._entries.values() if e.trainable and not e.buffer]

    def frozen(self) -> list[Tensor]:
        return [e.tensor for e in self._entries.values() if not e.trainable]

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: e.tensor.data.copy() for name, e in self._entries.items()}


def count_params(store: ParameterStore) -> tuple[int, int, int]:
    """Return ``(total, trainable, frozen)`` element counts."""
    trainable = frozen = 0
    for _, e in store.entries():
        if e.trainable:
            trainable += e.tensor.size
        else:
            frozen += e.tensor.size
    return trainable + frozen, trainable, frozen


# --- layers ------------------------------------------------------------------

class _Init:
    """Seeded fan-in-scaled uniform initializer bound to a store."""

    def __init__(self, store: ParameterStore, seed: int):
        self.store = store
        self.rng = np.random.default_rng(seed)
        self.dtype = get_default_dtype()

    def uniform(self, name, shape, fan_in, trainable):
        limit = np.sqrt(6.0 / fan_in)
        arr = self.rng.uniform(-limit, limit, size=shape).astype(self.dtype)
        return self.store.add(name, Tensor.wrap(arr), trainable)

    def const(self, name, shape, value, trainable, buffer=False):
        return self.store.add(name, Tensor.wrap(np.full(shape, value, dtype=self.dtype)), trainable, buffer)


class BatchNorm:
    def __init__(self, init: _Init, name: str, channels: int, trainable: bool, momentum: float, eps: float):
        self.gamma = init.const(f"{name}/gamma", (channels,), 1.0, trainable)
        self.beta = init.const(f"{name}/beta", (channels,), 0.0, trainable)
        self.running_mean = init.const(f"{name}/running_mean", (channels,), 0.0, trainable, buffer=True)
        self.running_var = init.const(f"{name}/running_var", (channels,), 1.0, trainable, buffer=True)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return F.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            training=training, momentum=self.momentum, eps=self.eps)


class ConvBN:
    """Bias-free convolution followed by batch norm and optional relu6."""

    def __init__(self, init, name, cin, cout, kernel, stride, trainable, spec, depthwise=False, act=True):
        if depthwise:
            self.kernel = init.uniform(f"{name}/kernel", (kernel, kernel, cin), kernel * kernel, trainable)
        else:
            self.kernel = init.uniform(f"{name}/kernel", (kernel, kernel, cin, cout), kernel * kernel * cin,
                                       trainable)
        self.bn = BatchNorm(init, f"{name}_bn", cout, trainable, spec.bn_momentum, spec.bn_eps)
        self.stride = stride
        self.depthwise = depthwise
        self.act = act

    def __call__(self, x, training):
        if self.depthwise:
            y = F.depthwise_conv2d(x, self.kernel, stride=self.stride, padding="same")
        else:
            y = F.conv2d(x, self.kernel, stride=self.stride, padding="same")
        y = self.bn(y, training)
        return F.relu6(y) if self.act else y


def se_width(channels: int, ratio: float) -> int:
    return max(1, int(round(channels * ratio)))


class SqueezeExcite:
    """Channel gate: pool -> dense -> relu -> dense -> sigmoid -> rescale."""

    def __init__(self, init, name, channels, reduced, trainable):
        self.w1 = init.uniform(f"{name}/reduce/kernel", (channels, reduced), channels, trainable)
        self.b1 = init.const(f"{name}/reduce/bias", (reduced,), 0.0, trainable)
        self.w2 = init.uniform(f"{name}/expand/kernel", (reduced, channels), reduced, trainable)
        self.b2 = init.const(f"{name}/expand/bias", (channels,), 0.0, trainable)

    def gate(self, x: Tensor) -> Tensor:
        s = F.global_avg_pool(x)
        s = F.relu(F.dense(s, self.w1, self.b1))
        return F.sigmoid(F.dense(s, self.w2, self.b2))

    def __call__(self, x: Tensor) -> Tensor:
        return F.scale_channels(x, self.gate(x))


def se_forward(x: Tensor, w_reduce: Tensor, b_reduce: Tensor, w_expand: Tensor, b_expand: Tensor) -> Tensor:
    """Functional squeeze-and-excitation with explicit weights."""
    s = F.relu(F.dense(F.global_avg_pool(x), w_reduce, b_reduce))
    return F.scale_channels(x, F.sigmoid(F.dense(s, w_expand, b_expand)))


class MBConv:
    """Inverted bottleneck: [expand 1x1] -> depthwise -> SE -> project 1x1 [+ skip]."""

    def __init__(self, init, name, cin, cout, expansion, stride, dw_kernel, se_ratio, trainable, spec):
        self.cin, self.cout, self.stride = cin, cout, stride
        self.expanded = cin * expansion
        self.expand = (ConvBN(init, f"{name}/expand", cin, self.expanded, 1, 1, trainable, spec)
                       if expansion != 1 else None)
        self.dw = ConvBN(init, f"{name}/dwconv", self.expanded, self.expanded, dw_kernel, stride, trainable,
                         spec, depthwise=True)
        self.se = SqueezeExcite(init, f"{name}/se", self.expanded, se_width(cin, se_ratio), trainable)
        self.project = ConvBN(init, f"{name}/project", self.expanded, cout, 1, 1, trainable, spec, act=False)
        self.residual = stride == 1 and cin == cout

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if x.shape[-1] != self.cin:
            raise ShapeError(f"MBConv expects {self.cin} input channels, got shape {x.shape}")
        h = self.expand(x, training) if self.expand is not None else x
        h = self.dw(h, training)
        h = self.se(h)
        h = self.project(h, training)
        return F.add(h, x) if self.residual else h

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        return -(-h // self.stride), -(-w // self.stride)


def mbconv_forward(block: MBConv, x: Tensor, training: bool = False) -> Tensor:
    return block(x, training)


@dataclass
class LayerRow:
    name: str
    output_shape: tuple
    params: int


class Network:
    """Stem -> MBConv stages -> 1x1 head conv -> average pool -> dense -> softmax."""

    def __init__(self, spec: NetworkSpec, store: ParameterStore, init_seed: int):
        self.spec = spec
        self.store = store
        self.init_seed = init_seed
        init = _Init(store, init_seed)
        frozen = spec.extractor_frozen
        extractor_trainable = not frozen
        cin = spec.input_size[2]
        self.stem = ConvBN(init, "stem", cin, spec.stem_filters, spec.stem_kernel, spec.stem_stride,
                           extractor_trainable, spec)
        self.blocks: list[tuple[str, MBConv]] = []
        cin = spec.stem_filters
        for si, st in enumerate(spec.stages, 1):
            for r in range(st.repeat):
                name = f"stage{si}/block{r + 1}"
                block = MBConv(init, name, cin, st.out_channels, st.expansion_factor,
                               st.stride if r == 0 else 1, st.dw_kernel, st.se_ratio, extractor_trainable, spec)
                self.blocks.append((name, block))
                cin = st.out_channels
        self.head_conv = ConvBN(init, "head_conv", cin, spec.head_channels, 1, 1, extractor_trainable, spec)
        self.dense_w = init.uniform("dense/kernel", (spec.head_channels, spec.num_classes), spec.head_channels,
                                    True)
        self.dense_b = init.const("dense/bias", (spec.num_classes,), 0.0, True)

    def _check_input(self, x: Tensor) -> None:
        expected = tuple(self.spec.input_size)
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise ShapeError(f"network expects input (N, {', '.join(map(str, expected))}), got {x.shape}")

    def feature_maps(self, x: Tensor, training: bool = False, trace: Optional[list] = None) -> Tensor:
        """Pre-pool head activations, shape (N, h, w, head_channels)."""
        self._check_input(x)
        bn_training = training and not self.spec.extractor_frozen
        h = self.stem(x, bn_training)
        if trace is not None:
            trace.append(("stem", h.shape))
        for name, block in self.blocks:
            h = block(h, bn_training)
            if trace is not None:
                trace.append((name, h.shape))
        h = self.head_conv(h, bn_training)
        if trace is not None:
            trace.append(("head_conv", h.shape))
        return h

    def forward_features(self, x: Tensor, training: bool = False) -> Tensor:
        return F.global_avg_pool(self.feature_maps(x, training))

    def head(self, features: Tensor) -> Tensor:
        return F.softmax(F.dense(features, self.dense_w, self.dense_b))

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        return self.head(self.forward_features(x, training))

    __call__ = forward

    def stage_channels(self) -> list[int]:
        return [st.out_channels for st in self.spec.stages]

    def layer_table(self) -> list[LayerRow]:
        """Output shape (batch as None) and parameter count of each top-level layer."""
        counts: dict[str, int] = {}
        for name, e in self.store.entries():
            key = name.split("/")[0]
            if key.startswith("stage"):
                key = "/".join(name.split("/")[:2])
            key = key.removesuffix("_bn")
            counts[key] = counts.get(key, 0) + e.tensor.size
        h, w, _ = self.spec.input_size
        s = self.spec.stem_stride
        h, w = -(-h // s), -(-w // s)
        rows = [LayerRow("stem", (None, h, w, self.spec.stem_filters), counts["stem"])]
        for name, block in self.blocks:
            h, w = block.output_hw(h, w)
            rows.append(LayerRow(name, (None, h, w, block.cout), counts[name]))
        rows.append(LayerRow("head_conv", (None, h, w, self.spec.head_channels), counts["head_conv"]))
        rows.append(LayerRow("avg_pool", (None, self.spec.head_channels), 0))
        rows.append(LayerRow("dense", (None, self.spec.num_classes), counts["dense"]))
        return rows


def build_network(spec: NetworkSpec, init_seed: int = 0) -> tuple[Network, ParameterStore]:
    spec.validate()
    store = ParameterStore()
    return Network(spec, store, init_seed), store


def forward_features(network: Network, batch: Tensor, training: bool = False) -> Tensor:
    return network.forward_features(batch, training)


def forward(network: Network, batch: Tensor, training: bool = False) -> Tensor:
    return network.forward(batch, training)


def predict_classes(probs: Tensor) -> np.ndarray:
    """Argmax per row; ties resolve to the lowest class index."""
    return np.argmax(probs.data, axis=1)
