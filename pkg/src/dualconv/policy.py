"""Replacement policies that rewrite host-network convolutions to efficient operator kinds."""

from __future__ import annotations

from dataclasses import dataclass, replace
from math import gcd

from .errors import DualConvError, PolicyError
from .graph import Begin, Conv, End, ModelConfig, infer_shapes
from .kernels import ConvKind, ConvSpec

RULES = ("last12", "stride1", "stride12", "dsc", "block_s1")


@dataclass(frozen=True)
class ReplacementPolicy:
    """Which eligible layers to rewrite and into what.

    Layer mode selects eligible convs whose kernel size is in ``kernels``,
    stride in ``strides`` and current kind in ``source_kinds`` (or already the
    target kind, which keeps application idempotent); ``last_n`` keeps only
    the last ``n`` convs of matching kernel size. Block mode replaces each
    eligible begin/end block whose stride matches with one K x K layer.

    ``adapt_groups`` lowers the count to ``gcd(G, M, N)`` per layer instead of
    rejecting indivisible layers; ``narrow_cap=(width, g)`` further caps it at
    ``g`` for layers with ``max(M, N) <= width``.
    """
    kind: ConvKind
    g_or_p: int | None = None
    rule: str = "custom"
    kernels: tuple[int, ...] = (3,)
    strides: tuple[int, ...] = (1,)
    source_kinds: tuple[ConvKind, ...] = (ConvKind.STANDARD,)
    last_n: int | None = None
    blocks: bool = False
    block_kernel: int = 3
    adapt_groups: bool = False
    narrow_cap: tuple[int, int] | None = None

    def __post_init__(self):
        needs = self.kind in (ConvKind.GROUP, ConvKind.DUAL, ConvKind.HET)
        if needs and (self.g_or_p is None or self.g_or_p < 1):
            raise PolicyError(f"{self.kind.value} policy needs G/P >= 1")
        if not needs and self.g_or_p is not None:
            raise PolicyError(f"{self.kind.value} policy takes no G/P")

    @classmethod
    def named(cls, rule: str, kind: ConvKind, g_or_p: int | None = None, **overrides) -> "ReplacementPolicy":
        """Preset rule sets:

        ``last12``   the last 12 3x3 convs (VGG-16: all but the first)
        ``stride1``  eligible 3x3 convs with stride 1
        ``stride12`` eligible 3x3 convs with stride 1 or 2
        ``dsc``      every eligible depthwise-separable layer
        ``block_s1`` every eligible stride-1 block, group count adapted per layer
        """
        presets = {
            "last12": dict(last_n=12),
            "stride1": dict(),
            "stride12": dict(strides=(1, 2)),
            "dsc": dict(strides=(1, 2), source_kinds=(ConvKind.DEPTHWISE_SEPARABLE,)),
            "block_s1": dict(blocks=True, adapt_groups=True),
        }
        if rule not in presets:
            raise PolicyError(f"unknown rule {rule!r}; choose from {', '.join(RULES)}")
        return cls(kind, g_or_p, rule, **{**presets[rule], **overrides})

    def group_count(self, m: int, n: int) -> int | None:
        g = self.g_or_p
        if g is None or not self.adapt_groups or self.kind is ConvKind.HET:
            return g
        g = gcd(g, gcd(m, n))
        if self.narrow_cap is not None and max(m, n) <= self.narrow_cap[0]:
            g = min(g, self.narrow_cap[1])
        return g


def default_policy(model: str, variant: str, kind: ConvKind, g_or_p: int | None) -> ReplacementPolicy:
    """The rule each built-in architecture uses for its replacement rows."""
    model = model.lower()
    if model.startswith("vgg"):
        return ReplacementPolicy.named("last12", kind, g_or_p)
    if model.startswith("resnet"):
        return ReplacementPolicy.named("stride12" if variant == "imagenet" else "stride1", kind, g_or_p)
    if model in ("mobilenet_v1", "mobilenetv1"):
        return ReplacementPolicy.named("dsc", kind, g_or_p)
    if model in ("mobilenet_v2", "mobilenetv2"):
        cap = None if variant == "imagenet" else (32, 8)
        return ReplacementPolicy.named("block_s1", kind, g_or_p, narrow_cap=cap)
    return ReplacementPolicy.named("stride1", kind, g_or_p)


def _convert(layer: Conv, policy: ReplacementPolicy) -> Conv:
    s = layer.spec
    g = policy.group_count(s.in_channels, s.out_channels)
    try:
        spec = s.converted(policy.kind, g)
    except DualConvError as exc:
        raise PolicyError(f"layer {layer.name!r} (M={s.in_channels}, N={s.out_channels}): {exc}") from None
    return replace(layer, spec=spec)


def selected_layers(config: ModelConfig, policy: ReplacementPolicy) -> list[str]:
    """Names of conv layers (or blocks) the policy would rewrite."""
    if policy.blocks:
        return [name for name, *_ in _blocks(config, policy)]
    convs = [l for l in config.layers if isinstance(l, Conv) and l.spec.kernel_size in policy.kernels]
    if policy.last_n is not None:
        convs = convs[-policy.last_n:] if policy.last_n > 0 else []
    kinds = set(policy.source_kinds) | {policy.kind}
    return [l.name for l in convs
            if l.eligible and l.spec.stride in policy.strides and l.spec.kind in kinds]


def _blocks(config: ModelConfig, policy: ReplacementPolicy):
    """(name, begin index, end index, M, N, stride) of each matching eligible block."""
    shapes = infer_shapes(config)
    found = []
    open_blocks: dict[str, int] = {}
    for i, layer in enumerate(config.layers):
        if isinstance(layer, Begin):
            open_blocks[layer.name] = i
        elif isinstance(layer, End):
            if layer.name not in open_blocks:
                raise PolicyError(f"block end {layer.name!r} without a begin")
            j = open_blocks.pop(layer.name)
            if not config.layers[j].eligible:
                continue
            (m, h_in, _), (n, h_out, _) = shapes[j][0], shapes[i][1]
            stride = -(-h_in // h_out)
            if stride in policy.strides:
                found.append((layer.name, j, i, m, n, stride))
    if open_blocks:
        raise PolicyError(f"unterminated block {next(iter(open_blocks))!r}")
    return found


def apply_policy(config: ModelConfig, policy: ReplacementPolicy) -> ModelConfig:
    """Rewrite the selected layers; everything else is left untouched."""
    if policy.blocks:
        return _apply_blocks(config, policy)
    chosen = set(selected_layers(config, policy))
    if not chosen:
        return config
    layers = tuple(_convert(l, policy) if l.name in chosen and isinstance(l, Conv) else l
                   for l in config.layers)
    return replace(config, layers=layers)


def _apply_blocks(config: ModelConfig, policy: ReplacementPolicy) -> ModelConfig:
    blocks = _blocks(config, policy)
    if not blocks:
        return config
    layers = list(config.layers)
    for name, j, i, m, n, stride in reversed(blocks):
        inner = [l for l in layers[j + 1:i] if not isinstance(l, (Begin, End))]
        convs = [l for l in inner if isinstance(l, Conv)]
        if not convs:
            raise PolicyError(f"block {name!r} holds no convolution")
        last = convs[-1]
        k = policy.block_kernel
        base = Conv(inner[-1].name, ConvSpec(ConvKind.STANDARD, m, n, k, stride, (k - 1) // 2),
                    eligible=True, bn=last.bn, bias=last.bias, act="relu6")
        layers[j:i + 1] = [_convert(base, policy)]
    return replace(config, layers=tuple(layers))
