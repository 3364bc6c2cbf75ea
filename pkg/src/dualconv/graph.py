"""Layer-graph model descriptions, shape inference and the line-oriented text format.

A model is an ordered list of layers. Each layer consumes the output of the
previous layer unless it names a source with ``from=``; the pseudo-layer
``input`` refers to the model input.

Text format (one item per line, ``#`` starts a comment)::

    model <name> input <B> <C> <H> <W>
    conv <name> kind=<std|dsc|group|het|dual> M=<int> N=<int> K=<int> s=<int> p=<int>
         [G=<int>|P=<int>] [eligible] [bn] [bias] [act=<relu|relu6|none>] [from=<layer>]
    pool <name> <max|avg|gavg> k=<int> s=<int> [p=<int>] [from=<layer>]
    fc <name> in=<int> out=<int> [bias] [act=<relu|none>] [from=<layer>]
    skip <name> from=<layer> [act=<relu|relu6|none>]
    route <name> from=<layer>[,<layer>...]
    upsample <name> factor=<int>
    begin <name> [eligible]
    end <name>

``skip`` adds the output of ``from`` to the previous layer's output. ``route``
concatenates its sources along channels. ``begin``/``end`` delimit a block that
a block-level replacement policy may substitute with a single convolution.
Batch-norm (``bn``) and ``bias`` flags only affect parameter counting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

from .errors import ConfigError, DualConvError
from .kernels import ConvKind, ConvSpec
from .tensor import Shape4, check_shape

ACTIVATIONS = ("none", "relu", "relu6")
POOL_KINDS = ("max", "avg", "gavg")


@dataclass(frozen=True)
class Conv:
    name: str
    spec: ConvSpec
    eligible: bool = False
    bn: bool = False
    bias: bool = False
    act: str = "relu"
    src: str | None = None


@dataclass(frozen=True)
class Pool:
    name: str
    kind: str
    k: int = 1
    s: int = 1
    p: int = 0
    src: str | None = None


@dataclass(frozen=True)
class FC:
    name: str
    in_features: int
    out_features: int
    bias: bool = False
    act: str = "none"
    src: str | None = None


@dataclass(frozen=True)
class Skip:
    name: str
    src: str
    act: str = "none"


@dataclass(frozen=True)
class Route:
    name: str
    sources: tuple[str, ...]


@dataclass(frozen=True)
class Upsample:
    name: str
    factor: int = 2


@dataclass(frozen=True)
class Begin:
    name: str
    eligible: bool = False


@dataclass(frozen=True)
class End:
    name: str


Layer = Union[Conv, Pool, FC, Skip, Route, Upsample, Begin, End]


@dataclass(frozen=True)
class ModelConfig:
    name: str
    input_shape: Shape4
    layers: tuple[Layer, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", check_shape(self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        seen = set()
        for layer in self.layers:
            # an end marker reuses its block's name
            if isinstance(layer, End):
                continue
            if layer.name in seen or layer.name == "input":
                raise ConfigError(f"duplicate or reserved layer name {layer.name!r}")
            seen.add(layer.name)

    def conv_layers(self) -> list[Conv]:
        return [l for l in self.layers if isinstance(l, Conv)]

    def layer(self, name: str) -> Layer:
        for l in self.layers:
            if l.name == name and not isinstance(l, End):
                return l
        raise KeyError(name)


# -- shape inference ------------------------------------------------------------

def _sources(layer: Layer, prev: str) -> list[str]:
    if isinstance(layer, Route):
        return list(layer.sources)
    if isinstance(layer, Skip):
        return [prev, layer.src]
    src = getattr(layer, "src", None)
    return [src if src is not None else prev]


def layer_inputs(config: ModelConfig) -> list[list[str]]:
    """Source names (``"input"`` for the model input) consumed by each layer."""
    out = []
    prev = "input"
    for layer in config.layers:
        out.append(_sources(layer, prev))
        if not isinstance(layer, (Begin, End)):
            prev = layer.name
    return out


def _key(layer: Layer) -> str:
    return f"{layer.name}/end" if isinstance(layer, End) else layer.name


def infer_shapes(config: ModelConfig) -> list[tuple[tuple[int, int, int], tuple[int, int, int]]]:
    """Per layer ``(input CHW, output CHW)``; raises ConfigError naming the bad layer.

    For multi-input layers the reported input shape is that of the first source.
    """
    _, c, h, w = config.input_shape
    shapes: dict[str, tuple[int, int, int]] = {"input": (c, h, w)}
    result = []
    for layer, srcs in zip(config.layers, layer_inputs(config)):
        for s in srcs:
            if s not in shapes:
                raise ConfigError(f"layer {layer.name!r}: unknown or later source {s!r}")
        ins = [shapes[s] for s in srcs]
        try:
            out = _layer_shape(layer, ins)
        except DualConvError as exc:
            raise ConfigError(f"layer {layer.name!r}: {exc}") from exc
        result.append((ins[0], out))
        if not isinstance(layer, (Begin, End)):
            shapes[layer.name] = out
        else:
            shapes[_key(layer)] = out
    return result


def _layer_shape(layer: Layer, ins: list[tuple[int, int, int]]) -> tuple[int, int, int]:
    c, h, w = ins[0]
    if isinstance(layer, Conv):
        if c != layer.spec.in_channels:
            raise ConfigError(f"expects {layer.spec.in_channels} input channels, got {c}")
        return (layer.spec.out_channels, *layer.spec.output_hw(h, w))
    if isinstance(layer, Pool):
        if layer.kind == "gavg":
            return (c, 1, 1)
        if layer.k < 1 or layer.s < 1 or layer.p < 0:
            raise ConfigError("invalid pooling geometry")
        span_h, span_w = h + 2 * layer.p - layer.k, w + 2 * layer.p - layer.k
        if span_h < 0 or span_w < 0:
            raise ConfigError(f"pool window {layer.k} exceeds input {h}x{w}")
        return (c, span_h // layer.s + 1, span_w // layer.s + 1)
    if isinstance(layer, FC):
        if c * h * w != layer.in_features:
            raise ConfigError(f"expects {layer.in_features} features, got {c}*{h}*{w}={c * h * w}")
        return (layer.out_features, 1, 1)
    if isinstance(layer, Skip):
        if ins[0] != ins[1]:
            raise ConfigError(f"skip operands differ: {ins[0]} vs {ins[1]}")
        return ins[0]
    if isinstance(layer, Route):
        if any(s[1:] != ins[0][1:] for s in ins):
            raise ConfigError(f"route sources differ spatially: {ins}")
        return (sum(s[0] for s in ins), h, w)
    if isinstance(layer, Upsample):
        if layer.factor < 1:
            raise ConfigError("upsample factor must be >= 1")
        return (c, h * layer.factor, w * layer.factor)
    return ins[0]


def check_geometry(config: ModelConfig) -> tuple[int, int, int]:
    """Validate the whole graph and return the output CHW."""
    shapes = infer_shapes(config)
    if not shapes:
        return tuple(config.input_shape[1:])
    return shapes[-1][1]


# -- text format ----------------------------------------------------------------

_KIND_TEXT = {ConvKind.STANDARD: "std", ConvKind.DEPTHWISE_SEPARABLE: "dsc", ConvKind.GROUP: "group",
              ConvKind.HET: "het", ConvKind.DUAL: "dual"}
_TEXT_KIND = {v: k for k, v in _KIND_TEXT.items()}


def emit_config(config: ModelConfig) -> str:
    b, c, h, w = config.input_shape
    lines = [f"model {config.name} input {b} {c} {h} {w}"]
    for l in config.layers:
        lines.append(_emit_layer(l))
    return "\n".join(lines) + "\n"


def _emit_layer(l: Layer) -> str:
    if isinstance(l, Conv):
        s = l.spec
        parts = ["conv", l.name, f"kind={_KIND_TEXT[s.kind]}", f"M={s.in_channels}", f"N={s.out_channels}",
                 f"K={s.kernel_size}", f"s={s.stride}", f"p={s.padding}"]
        if s.groups is not None:
            parts.append(f"G={s.groups}")
        if s.parts is not None:
            parts.append(f"P={s.parts}")
        parts += [flag for flag, on in (("eligible", l.eligible), ("bn", l.bn), ("bias", l.bias)) if on]
        if l.act != "relu":
            parts.append(f"act={l.act}")
        if l.src is not None:
            parts.append(f"from={l.src}")
        return " ".join(parts)
    if isinstance(l, Pool):
        parts = ["pool", l.name, l.kind, f"k={l.k}", f"s={l.s}"]
        if l.p:
            parts.append(f"p={l.p}")
        if l.src is not None:
            parts.append(f"from={l.src}")
        return " ".join(parts)
    if isinstance(l, FC):
        parts = ["fc", l.name, f"in={l.in_features}", f"out={l.out_features}"]
        if l.bias:
            parts.append("bias")
        if l.act != "none":
            parts.append(f"act={l.act}")
        if l.src is not None:
            parts.append(f"from={l.src}")
        return " ".join(parts)
    if isinstance(l, Skip):
        return f"skip {l.name} from={l.src}" + (f" act={l.act}" if l.act != "none" else "")
    if isinstance(l, Route):
        return f"route {l.name} from={','.join(l.sources)}"
    if isinstance(l, Upsample):
        return f"upsample {l.name} factor={l.factor}"
    if isinstance(l, Begin):
        return f"begin {l.name}" + (" eligible" if l.eligible else "")
    return f"end {l.name}"


class _Fields:
    """key=value tokens and bare flags of one line, consumed with diagnostics."""

    def __init__(self, tokens: list[str], line: int):
        self.line = line
        self.values: dict[str, str] = {}
        self.flags: set[str] = set()
        self.positional: list[str] = []
        for tok in tokens:
            if "=" in tok:
                key, _, val = tok.partition("=")
                if not key or not val:
                    raise ConfigError(f"malformed token {tok!r}", line=line)
                if key in self.values:
                    raise ConfigError("repeated field", line=line, field=key)
                self.values[key] = val
            else:
                self.positional.append(tok)

    def int(self, key: str, default=None, required=True) -> int | None:
        if key not in self.values:
            if required and default is None:
                raise ConfigError("missing required field", line=self.line, field=key)
            return default
        raw = self.values.pop(key)
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"expected an integer, got {raw!r}", line=self.line, field=key) from None

    def str(self, key: str, default=None, choices=None) -> str | None:
        if key not in self.values:
            if default is None:
                raise ConfigError("missing required field", line=self.line, field=key)
            return default
        val = self.values.pop(key)
        if choices is not None and val not in choices:
            raise ConfigError(f"expected one of {list(choices)}, got {val!r}", line=self.line, field=key)
        return val

    def flag(self, name: str) -> bool:
        if name in self.positional:
            self.positional.remove(name)
            return True
        return False

    def finish(self) -> None:
        if self.values:
            key = next(iter(self.values))
            raise ConfigError("unknown field", line=self.line, field=key)
        if self.positional:
            raise ConfigError(f"unexpected token {self.positional[0]!r}", line=self.line)


def parse_config(text: str) -> ModelConfig:
    header = None
    layers: list[Layer] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if header is None:
            if tokens[0] != "model":
                raise ConfigError("first statement must be a 'model' header", line=lineno)
            if len(tokens) != 7 or tokens[2] != "input":
                raise ConfigError("header must read 'model <name> input <B> <C> <H> <W>'", line=lineno)
            try:
                dims = [int(t) for t in tokens[3:]]
            except ValueError:
                raise ConfigError("input extents must be integers", line=lineno, field="input") from None
            try:
                header = (tokens[1], check_shape(dims))
            except DualConvError as exc:
                raise ConfigError(str(exc), line=lineno, field="input") from None
            continue
        if len(tokens) < 2:
            raise ConfigError("layer line needs a type and a name", line=lineno)
        try:
            layers.append(_parse_layer(tokens[0], tokens[1], _Fields(tokens[2:], lineno), lineno))
        except ConfigError:
            raise
        except DualConvError as exc:
            raise ConfigError(str(exc), line=lineno) from None
    if header is None:
        raise ConfigError("missing 'model' header")
    return ModelConfig(header[0], header[1], tuple(layers))


def _parse_layer(kind: str, name: str, f: _Fields, line: int) -> Layer:
    if kind == "conv":
        ck = f.str("kind", choices=_TEXT_KIND)
        spec = ConvSpec(_TEXT_KIND[ck], f.int("M"), f.int("N"), f.int("K"), f.int("s"), f.int("p"),
                        f.int("G", required=False), f.int("P", required=False))
        layer = Conv(name, spec, eligible=f.flag("eligible"), bn=f.flag("bn"), bias=f.flag("bias"),
                     act=f.str("act", "relu", ACTIVATIONS), src=f.values.pop("from", None))
    elif kind == "pool":
        if not f.positional or f.positional[0] not in POOL_KINDS:
            raise ConfigError(f"pool type must be one of {list(POOL_KINDS)}", line=line, field="type")
        pk = f.positional.pop(0)
        layer = Pool(name, pk, f.int("k"), f.int("s"), f.int("p", 0), f.values.pop("from", None))
    elif kind == "fc":
        layer = FC(name, f.int("in"), f.int("out"), bias=f.flag("bias"),
                   act=f.str("act", "none", ACTIVATIONS), src=f.values.pop("from", None))
    elif kind == "skip":
        layer = Skip(name, f.str("from"), act=f.str("act", "none", ACTIVATIONS))
    elif kind == "route":
        layer = Route(name, tuple(f.str("from").split(",")))
    elif kind == "upsample":
        layer = Upsample(name, f.int("factor"))
    elif kind == "begin":
        layer = Begin(name, eligible=f.flag("eligible"))
    elif kind == "end":
        layer = End(name)
    else:
        raise ConfigError(f"unknown layer type {kind!r}", line=line)
    f.finish()
    return layer
