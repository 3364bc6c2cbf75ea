"""Built-in host architectures as layer graphs.

Geometry assumptions (all square inputs, batch 1):

vgg16
    13 3x3 convs (pad 1) in the usual 64-64 | 128-128 | 256x3 | 512x3 | 512x3
    layout with 2x2 max pooling. CIFAR-10 uses one FC 512->10, CIFAR-100 uses
    512->4096->4096->100, ImageNet uses 25088->4096->4096->1000. CIFAR convs
    carry batch-norm and bias; ImageNet convs carry bias only. The option
    ``head_hidden`` inserts hidden FC widths before the CIFAR-10 classifier.
resnet50
    Bottleneck stages (3, 4, 6, 3) with stride on the 3x3 conv and 1x1
    projection shortcuts. CIFAR uses a 3x3 stride-1 stem without max pooling;
    ImageNet uses the 7x7 stride-2 stem plus 3x3 stride-2 max pooling.
mobilenet_v1
    3x3 stem (stride 1 on CIFAR, 2 on ImageNet) then 13 depthwise-separable
    layers, global average pooling and one FC.
mobilenet_v2
    Inverted residual blocks (t, c, n, s) wrapped in begin/end markers. The
    CIFAR layout uses a 1x1 padded stem, an expansion conv in every block,
    strides (1,2,2,2,1,1,1), conv bias plus batch-norm and a 100-way
    classifier for both CIFAR sets. The ImageNet layout follows the usual
    torchvision geometry.
yolov3_backbone
    Darknet-53 ladder at 416x416 plus the three-scale detection neck with its
    1x1 predictors (3 * (5 + classes) outputs, 20 classes on VOC).

Only 3x3 convolutions after the stem are flagged ``eligible`` for replacement.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import SpecError
from .graph import FC, Begin, Conv, End, ModelConfig, Pool, Route, Skip, Upsample, check_geometry
from .kernels import ConvKind, ConvSpec

MODELS = ("vgg16", "resnet50", "mobilenet_v1", "mobilenet_v2", "yolov3_backbone")
VARIANTS = ("cifar10", "cifar100", "imagenet", "voc")
_ALIASES = {"cifar": "cifar10", "voc-416": "voc", "voc416": "voc", "yolov3": "yolov3_backbone",
            "mobilenetv1": "mobilenet_v1", "mobilenetv2": "mobilenet_v2", "vgg": "vgg16",
            "resnet": "resnet50"}


@dataclass
class _Builder:
    name: str
    channels: int
    size: int

    def __post_init__(self):
        self.layers: list = []
        self.shapes: dict[str, tuple[int, int]] = {"input": (self.channels, self.size)}
        self.last = "input"
        self.counter = 0

    def _fresh(self, prefix: str) -> str:
        self.counter += 1
        return f"{prefix}{self.counter}"

    def _push(self, layer, channels: int, size: int) -> str:
        self.layers.append(layer)
        self.shapes[layer.name] = (channels, size)
        self.last = layer.name
        self.channels, self.size = channels, size
        return layer.name

    def conv(self, n: int, k: int, s: int = 1, p: int | None = None, *, kind=ConvKind.STANDARD,
             groups=None, parts=None, eligible=None, bn=False, bias=False, act="relu", src=None, name=None) -> str:
        m, d = self.shapes[src] if src is not None else (self.channels, self.size)
        p = (k - 1) // 2 if p is None else p
        spec = ConvSpec(kind, m, n, k, s, p, groups, parts)
        if eligible is None:
            eligible = k == 3 and kind is ConvKind.STANDARD
        name = name or self._fresh("conv")
        d_out = (d + 2 * p - k) // s + 1
        return self._push(Conv(name, spec, eligible, bn, bias, act, src), n, d_out)

    def pool(self, kind: str, k: int = 2, s: int = 2, p: int = 0) -> str:
        d = 1 if kind == "gavg" else (self.size + 2 * p - k) // s + 1
        return self._push(Pool(self._fresh("pool"), kind, k, s, p), self.channels, d)

    def fc(self, out: int, bias=True, act="none") -> str:
        return self._push(FC(self._fresh("fc"), self.channels * self.size * self.size, out, bias, act), out, 1)

    def skip(self, src: str, act="none") -> str:
        return self._push(Skip(self._fresh("add"), src, act), self.channels, self.size)

    def route(self, *sources: str) -> str:
        c = sum(self.shapes[s][0] for s in sources)
        return self._push(Route(self._fresh("route"), tuple(sources)), c, self.shapes[sources[0]][1])

    def upsample(self, factor: int = 2) -> str:
        return self._push(Upsample(self._fresh("up"), factor), self.channels, self.size * factor)

    def begin(self, eligible=True) -> str:
        name = self._fresh("block")
        self.layers.append(Begin(name, eligible))
        return name

    def end(self, name: str) -> None:
        self.layers.append(End(name))

    def config(self, input_channels: int, input_size: int) -> ModelConfig:
        cfg = ModelConfig(self.name, (1, input_channels, input_size, input_size), tuple(self.layers))
        check_geometry(cfg)
        return cfg


def canonical(name: str, variant: str) -> tuple[str, str]:
    name = _ALIASES.get(name.lower(), name.lower())
    variant = _ALIASES.get(variant.lower(), variant.lower())
    if name not in MODELS:
        raise SpecError(f"unknown model {name!r}; choose from {', '.join(MODELS)}")
    if variant not in VARIANTS:
        raise SpecError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
    allowed = ("voc",) if name == "yolov3_backbone" else ("cifar10", "cifar100", "imagenet")
    if variant not in allowed:
        raise SpecError(f"model {name} has no {variant} variant; choose from {', '.join(allowed)}")
    return name, variant


def build(name: str, variant: str = "cifar10", **options) -> ModelConfig:
    """Return the standard-convolution configuration of a built-in architecture."""
    name, variant = canonical(name, variant)
    builder = _BUILDERS[name]
    return builder(variant, **options)


def _classes(variant: str) -> int:
    return {"cifar10": 10, "cifar100": 100, "imagenet": 1000, "voc": 20}[variant]


_VGG_CFG = (64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512, 512, "M")


def _vgg16(variant: str, head_hidden: tuple[int, ...] | None = None) -> ModelConfig:
    imagenet = variant == "imagenet"
    size = 224 if imagenet else 32
    b = _Builder(f"vgg16-{variant}", 3, size)
    first = True
    for v in _VGG_CFG:
        if v == "M":
            b.pool("max", 2, 2)
        else:
            b.conv(v, 3, 1, 1, eligible=not first, bn=not imagenet, bias=True)
            first = False
    if head_hidden is None:
        head_hidden = () if variant == "cifar10" else (4096, 4096)
    for width in head_hidden:
        b.fc(width, act="relu")
    b.fc(_classes(variant))
    return b.config(3, size)


def _resnet50(variant: str) -> ModelConfig:
    imagenet = variant == "imagenet"
    size = 224 if imagenet else 32
    b = _Builder(f"resnet50-{variant}", 3, size)
    if imagenet:
        b.conv(64, 7, 2, 3, bn=True, eligible=False)
        b.pool("max", 3, 2, 1)
    else:
        b.conv(64, 3, 1, 1, bn=True, eligible=False)
    for planes, blocks, stride in ((64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2)):
        for i in range(blocks):
            s = stride if i == 0 else 1
            block_in = b.last
            in_ch = b.channels
            b.conv(planes, 1, bn=True)
            b.conv(planes, 3, s, 1, bn=True)
            main = b.conv(planes * 4, 1, bn=True, act="none")
            if s != 1 or in_ch != planes * 4:
                b.conv(planes * 4, 1, s, 0, bn=True, act="none", src=block_in)
                b.skip(main, act="relu")
            else:
                b.skip(block_in, act="relu")
    b.pool("gavg")
    b.fc(_classes(variant))
    return b.config(3, size)


_MBV1_CFG = ((64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2),
             (512, 1), (512, 1), (512, 1), (512, 1), (512, 1), (1024, 2), (1024, 1))


def _mobilenet_v1(variant: str) -> ModelConfig:
    imagenet = variant == "imagenet"
    size = 224 if imagenet else 32
    b = _Builder(f"mobilenet_v1-{variant}", 3, size)
    b.conv(32, 3, 2 if imagenet else 1, 1, bn=True, eligible=False)
    for n, s in _MBV1_CFG:
        b.conv(n, 3, s, 1, kind=ConvKind.DEPTHWISE_SEPARABLE, eligible=True, bn=True)
    b.pool("gavg")
    b.fc(_classes(variant))
    return b.config(3, size)


_MBV2_STAGES = ((1, 16, 1), (6, 24, 2), (6, 32, 3), (6, 64, 4), (6, 96, 3), (6, 160, 3), (6, 320, 1))


def _mobilenet_v2(variant: str) -> ModelConfig:
    imagenet = variant == "imagenet"
    size = 224 if imagenet else 32
    strides = (1, 2, 2, 2, 1, 2, 1) if imagenet else (1, 2, 2, 2, 1, 1, 1)
    bias = not imagenet
    b = _Builder(f"mobilenet_v2-{variant}", 3, size)
    if imagenet:
        b.conv(32, 3, 2, 1, bn=True, act="relu6", eligible=False)
    else:
        b.conv(32, 1, 1, 1, bn=True, bias=True, act="relu6", eligible=False)
    for (t, c, n), stride in zip(_MBV2_STAGES, strides):
        for i in range(n):
            s = stride if i == 0 else 1
            block_in, m = b.last, b.channels
            blk = b.begin()
            hidden = m * t
            if t != 1 or not imagenet:
                b.conv(hidden, 1, bn=True, bias=bias, act="relu6", eligible=False)
            b.conv(hidden, 3, s, 1, kind=ConvKind.GROUP, groups=hidden, bn=True, bias=bias,
                   act="relu6", eligible=False)
            b.conv(c, 1, bn=True, bias=bias, act="none", eligible=False)
            if s == 1 and m == c:
                b.skip(block_in)
            b.end(blk)
    b.conv(1280, 1, bn=True, bias=bias, act="relu6", eligible=False)
    b.pool("gavg")
    b.fc(1000 if imagenet else 100)
    return b.config(3, size)


def _yolov3(variant: str, classes: int | None = None) -> ModelConfig:
    size = 416
    out = 3 * (5 + (classes or _classes(variant)))
    b = _Builder(f"yolov3_backbone-{variant}", 3, size)

    def dconv(n, k, s=1, **kw):
        return b.conv(n, k, s, bn=True, **kw)

    dconv(32, 3, eligible=False)
    taps = {}
    for repeats, width in ((1, 64), (2, 128), (8, 256), (8, 512), (4, 1024)):
        dconv(width, 3, 2)
        for _ in range(repeats):
            block_in = b.last
            dconv(width // 2, 1)
            dconv(width, 3)
            b.skip(block_in)
        taps[width] = b.last

    def detection_set(width: int) -> str:
        for _ in range(2):
            dconv(width, 1)
            dconv(width * 2, 3)
        branch = dconv(width, 1)
        dconv(width * 2, 3)
        b.conv(out, 1, bias=True, act="none", eligible=False)
        return branch

    branch = detection_set(512)
    for width, tap in ((256, taps[512]), (128, taps[256])):
        dconv(width, 1, src=branch)
        up = b.upsample(2)
        b.route(up, tap)
        branch = detection_set(width)
    return b.config(3, size)


_BUILDERS = {"vgg16": _vgg16, "resnet50": _resnet50, "mobilenet_v1": _mobilenet_v1,
             "mobilenet_v2": _mobilenet_v2, "yolov3_backbone": _yolov3}


def variants_of(name: str) -> tuple[str, ...]:
    name = _ALIASES.get(name.lower(), name.lower())
    return ("voc",) if name == "yolov3_backbone" else ("cifar10", "cifar100", "imagenet")


# -- toy networks used by training, gradient checks and the CLI ------------------

def tiny(name: str, channels: int = 4, size: int = 8, classes: int = 2) -> ModelConfig:
    """Small executable networks: ``tiny-dual``, ``tiny-group``, ``tiny-mixed``, ``tiny-all``,
    ``single-pointwise``."""
    b = _Builder(name, channels, size)
    if name == "tiny-dual":
        b.conv(8, 3, 1, 1, kind=ConvKind.DUAL, groups=2)
        b.conv(16, 3, 2, 1, kind=ConvKind.DUAL, groups=4)
        b.conv(16, 3, 2, 1, kind=ConvKind.DUAL, groups=4)
    elif name == "tiny-group":
        b.conv(8, 3, 1, 1, kind=ConvKind.GROUP, groups=2)
        b.conv(16, 3, 2, 1, kind=ConvKind.GROUP, groups=4)
        b.conv(16, 3, 2, 1, kind=ConvKind.GROUP, groups=4)
    elif name == "tiny-mixed":
        b.conv(8, 3, 1, 1, kind=ConvKind.DUAL, groups=2)
        b.conv(8, 3, 2, 1, kind=ConvKind.GROUP, groups=2)
        b.conv(16, 3, 1, 1, kind=ConvKind.DEPTHWISE_SEPARABLE)
    elif name == "tiny-all":
        b.conv(8, 3, 1, 1)
        b.conv(8, 3, 1, 1, kind=ConvKind.DUAL, groups=2)
        b.conv(8, 3, 2, 1, kind=ConvKind.GROUP, groups=4)
        b.conv(8, 3, 1, 1, kind=ConvKind.HET, parts=4)
        b.conv(16, 3, 2, 1, kind=ConvKind.DEPTHWISE_SEPARABLE)
    elif name == "single-pointwise":
        b.conv(classes, 1, 1, 0, act="none")
        b.pool("gavg")
        return b.config(channels, size)
    else:
        raise SpecError(f"unknown toy model {name!r}; choose from {', '.join(TINY_MODELS)}")
    b.fc(classes, bias=False)
    return b.config(channels, size)


TINY_MODELS = ("tiny-dual", "tiny-group", "tiny-mixed", "tiny-all", "single-pointwise")
