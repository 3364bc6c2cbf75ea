"""Published FLOP/parameter figures for the built-in (model, dataset, operator) rows.

Each row names its source as (dataset, model, operator, G/P) and carries the
figures as printed (two-decimal K/M/G strings). ``params=None`` means no
figure was printed. Non-gating rows are reported but never fail a check;
each has a ``note`` explaining why.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .cost import model_cost, parse_human
from .kernels import ConvKind
from .policy import apply_policy, default_policy
from .zoo import build

D, G_, H = ConvKind.DUAL, ConvKind.GROUP, ConvKind.HET


@dataclass(frozen=True)
class PublishedRow:
    model: str
    variant: str
    kind: ConvKind
    g_or_p: int | None
    flops: str
    params: str | None
    tolerance: float = 0.02
    gating: bool = True
    options: dict = field(default_factory=dict, hash=False, compare=False)
    note: str = ""

    @property
    def label(self) -> str:
        if self.kind is ConvKind.STANDARD:
            return f"{self.model}/{self.variant}"
        tag = "P" if self.kind is ConvKind.HET else "G"
        return f"{self.model}/{self.variant}/{self.kind.value}-{tag}{self.g_or_p}"

    def config(self):
        cfg = build(self.model, self.variant, **self.options)
        if self.kind is not ConvKind.STANDARD:
            cfg = apply_policy(cfg, default_policy(self.model, self.variant, self.kind, self.g_or_p))
        return cfg


def _series(model, variant, kind, values, tolerance=0.02, **extra):
    return [PublishedRow(model, variant, kind, g, f, p, tolerance, **extra)
            for g, (f, p) in zip((2, 4, 8, 16, 32), values)]


_S = ConvKind.STANDARD
_HC_HEAD = {"head_hidden": (512,)}

ROWS: list[PublishedRow] = [
    # CIFAR-10, VGG-16 and ResNet-50
    PublishedRow("vgg16", "cifar10", _S, None, "313.21M", "14.73M"),
    *_series("vgg16", "cifar10", G_, [("157.49M", "7.37M"), ("79.64M", "3.69M"), ("40.71M", "1.85M"),
                                      ("21.24M", "0.93M"), ("11.51M", "0.48M")]),
    *_series("vgg16", "cifar10", H, [("175.23M", "8.45M"), ("105.98M", "5.17M"), ("71.35M", "3.54M"),
                                     ("54.04M", "2.72M"), ("45.38M", "2.31M")], options=_HC_HEAD),
    *_series("vgg16", "cifar10", D, [("192.10M", "9.00M"), ("114.24M", "5.33M"), ("75.31M", "3.49M"),
                                     ("55.85M", "2.57M"), ("46.11M", "2.11M")]),
    PublishedRow("resnet50", "cifar10", _S, None, "1.30G", "23.52M"),
    *_series("resnet50", "cifar10", D, [("1.11G", "20.32M"), ("984.33M", "18.27M"), ("922.99M", "17.24M"),
                                        ("892.32M", "16.73M"), ("876.98M", "16.47M")]),
    # CIFAR-10, MobileNets
    PublishedRow("mobilenet_v1", "cifar10", _S, None, "46.37M", "3.22M"),
    PublishedRow("mobilenet_v1", "cifar10", H, 32, "56.91M", None,
                 note="externally reported figure; only FLOPs printed"),
    *_series("mobilenet_v1", "cifar10", D, [("243.12M", "17.29M"), ("144.03M", "10.23M"), ("94.49M", "6.69M"),
                                            ("69.71M", "4.93M"), ("57.3M", "4.04M")]),
    PublishedRow("mobilenet_v2", "cifar10", _S, None, "64.96M", "2.37M"),
    *_series("mobilenet_v2", "cifar10", D, [("41.84M", "1.45M"), ("31.07M", "1.09M"), ("25.68M", "916.92K"),
                                            ("23.50M", "829.94K"), ("22.42M", "786.45K")]),
    # CIFAR-100
    PublishedRow("vgg16", "cifar100", _S, None, "332.48M", "34.01M"),
    *_series("vgg16", "cifar100", D, [("211.37M", "28.29M"), ("133.52M", "24.61M"), ("94.59M", "22.78M"),
                                      ("75.12M", "21.86M"), ("65.39M", "21.40M")]),
    PublishedRow("resnet50", "cifar100", _S, None, "1.30G", "23.70M"),
    *_series("resnet50", "cifar100", D, [("1.11G", "20.50M"), ("984.51M", "18.45M"), ("923.17M", "17.43M"),
                                         ("892.50M", "16.91M"), ("877.17M", "16.65M")]),
    PublishedRow("mobilenet_v1", "cifar100", _S, None, "46.46M", "3.32M"),
    *_series("mobilenet_v1", "cifar100", D, [("243.21M", "17.38M"), ("144.12M", "10.32M"), ("94.58M", "6.79M"),
                                             ("69.81M", "5.02M"), ("57.42M", "4.14M")]),
    PublishedRow("mobilenet_v2", "cifar100", _S, None, "64.96M", "2.37M"),
    *_series("mobilenet_v2", "cifar100", D, [("41.84M", "1.45M"), ("31.07M", "1.09M"), ("25.68M", "916.92K"),
                                             ("23.50M", "829.94K"), ("22.42M", "786.45K")]),
    # ImageNet
    PublishedRow("vgg16", "imagenet", _S, None, "15.47G", "138.36M"),
    PublishedRow("vgg16", "imagenet", H, 4, "5.29G", None,
                 note="externally reported figure; only FLOPs printed"),
    *_series("vgg16", "imagenet", D, [("9.54G", "132.64M"), ("5.72G", "128.96M"), ("3.81G", "127.13M"),
                                      ("2.86G", "126.21M"), ("2.38G", "125.75M")]),
    PublishedRow("resnet50", "imagenet", _S, None, "4.09G", "25.56M"),
    PublishedRow("resnet50", "imagenet", G_, 2, "3.16G", "19.90M"),
    PublishedRow("resnet50", "imagenet", H, 4, "2.86G", "18.02M"),
    *_series("resnet50", "imagenet", D, [("3.37G", "21.16M"), ("2.91G", "18.33M"), ("2.68G", "16.91M"),
                                         ("2.56G", "16.20M"), ("2.50G", "15.85M")]),
    PublishedRow("mobilenet_v1", "imagenet", _S, None, "568M", "4.23M"),
    PublishedRow("mobilenet_v1", "imagenet", G_, 2, "2.44G", "15.17M"),
    PublishedRow("mobilenet_v1", "imagenet", H, 4, "1.63G", "10.46M"),
    *_series("mobilenet_v1", "imagenet", D, [("2.98G", "18.31M"), ("1.77G", "11.24M"), ("1.16G", "7.71M"),
                                             ("854.82M", "5.94M"), ("703.09M", "5.06M")]),
    PublishedRow("mobilenet_v2", "imagenet", _S, None, "300.79M", "3.50M"),
    *_series("mobilenet_v2", "imagenet", D, [("221.46M", "2.67M"), ("171.79M", "2.35M"), ("146.95M", "2.19M"),
                                             ("135.55M", "2.11M")]),
    PublishedRow("mobilenet_v2", "imagenet", D, 32, "135.26M", "2.07M", gating=False,
                 note="printed FLOPs barely drop from G=16 although every adapted layer allows G=32; "
                      "the reconstruction gives 2.7% fewer FLOPs with matching params"),
    # VOC, YOLO-V3 at 416x416
    PublishedRow("yolov3_backbone", "voc", _S, None, "32.71G", "61.63M", 0.03),
    *_series("yolov3_backbone", "voc", D, [("22.79G", "42.41M"), ("16.41G", "30.05M"), ("13.22G", "23.88M"),
                                           ("11.63G", "20.79M"), ("10.83G", "19.24M")], tolerance=0.03),
]


@dataclass(frozen=True)
class RowCheck:
    row: PublishedRow
    flops: int
    params: int
    flops_error: float
    params_error: float | None

    @property
    def passed(self) -> bool:
        ok = self.flops_error <= self.row.tolerance
        if self.params_error is not None:
            ok = ok and self.params_error <= self.row.tolerance
        return ok

    @property
    def status(self) -> str:
        if self.passed:
            return "PASS"
        return "FAIL" if self.row.gating else "MISMATCH (non-gating)"


def relative_error(ours: int, published: str) -> float:
    ref = parse_human(published)
    return abs(ours - ref) / ref


def check_row(row: PublishedRow) -> RowCheck:
    cost = model_cost(row.config())
    p_err = None if row.params is None else relative_error(cost.params, row.params)
    return RowCheck(row, cost.flops, cost.params, relative_error(cost.flops, row.flops), p_err)


def check_all(rows=None) -> list[RowCheck]:
    return [check_row(r) for r in (ROWS if rows is None else rows)]


def standard_flops(model: str, variant: str, **options) -> int:
    return model_cost(build(model, variant, **options)).flops
