"""Executable networks built from a ModelConfig.

Batch-norm is not executed (identity) and FC/conv bias flags are ignored at
run time; those only matter for parameter counting. Activations: ``relu``,
``relu6`` (clip to [0, 6]) or ``none``. Max pooling pads with -inf, average
pooling counts padded zeros.
"""

from __future__ import annotations

import math
import time

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError
from .graph import FC, Begin, Conv, End, ModelConfig, Pool, Route, Skip, Upsample, infer_shapes, layer_inputs
from .kernels import FilterBank
from .tensor import as_dtype, col2im, gemm, im2col


def _activate(z: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        return np.maximum(z, 0)
    if act == "relu6":
        return np.clip(z, 0, 6)
    return z


def _activate_grad(z: np.ndarray, g: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        return g * (z > 0)
    if act == "relu6":
        return g * ((z > 0) & (z < 6))
    return g


class Network:
    """Weights plus forward/backward over a layer graph.

    ``weights`` maps layer name to a dict of named blocks: conv layers hold
    ``spatial`` (and ``pointwise`` when the kind has one), FC layers hold
    ``weight`` of shape (out, in).
    """

    def __init__(self, config: ModelConfig, weights: dict[str, dict[str, np.ndarray]], precision=32):
        self.config = config
        self.dtype = as_dtype(precision)
        self.shapes = infer_shapes(config)
        self.sources = layer_inputs(config)
        self.weights = weights
        self._cache = None

    # -- helpers ----------------------------------------------------------------
    def bank(self, name: str) -> FilterBank:
        w = self.weights[name]
        return FilterBank(w["spatial"], w.get("pointwise"))

    def blocks(self) -> list[tuple[str, str]]:
        """(layer, block) keys of every weight block in layer order."""
        return [(layer, blk) for layer, ws in self.weights.items() for blk in ws]

    def param_count(self) -> int:
        return sum(a.size for ws in self.weights.values() for a in ws.values())

    def copy(self) -> "Network":
        w = {k: {b: a.copy() for b, a in v.items()} for k, v in self.weights.items()}
        return Network(self.config, w, self.dtype)

    # -- forward ----------------------------------------------------------------
    def forward(self, x: np.ndarray, keep: bool = False, layer_ns: dict[str, int] | None = None) -> np.ndarray:
        """Run the graph; ``layer_ns`` (if given) receives per-layer wall time in nanoseconds."""
        expected = tuple(self.config.input_shape[1:])
        if x.ndim != 4 or x.shape[1:] != expected:
            raise ShapeError(f"input shape {x.shape} does not match model input (B, {expected})")
        x = x.astype(self.dtype, copy=False)
        values = {"input": x}
        pre: dict[str, np.ndarray] = {}
        aux: dict[str, object] = {}
        out = x
        for layer, srcs in zip(self.config.layers, self.sources):
            if isinstance(layer, (Begin, End)):
                continue
            ins = [values[s] for s in srcs]
            if layer_ns is None:
                out = self._forward_layer(layer, ins, pre, aux)
            else:
                t0 = time.perf_counter_ns()
                out = self._forward_layer(layer, ins, pre, aux)
                layer_ns[layer.name] = time.perf_counter_ns() - t0
            values[layer.name] = out
        self._cache = (values, pre, aux) if keep else None
        return out

    def _forward_layer(self, layer, ins, pre, aux):
        x = ins[0]
        if isinstance(layer, Conv):
            z = kernels.forward(x, self.bank(layer.name), layer.spec)
            pre[layer.name] = z
            return _activate(z, layer.act)
        if isinstance(layer, FC):
            w = self.weights[layer.name]["weight"]
            flat = x.reshape(x.shape[0], -1)
            z = gemm(w, np.ascontiguousarray(flat.T)).T.reshape(x.shape[0], -1, 1, 1)
            pre[layer.name] = z
            return _activate(z, layer.act)
        if isinstance(layer, Pool):
            return self._pool(layer, x, aux)
        if isinstance(layer, Skip):
            z = ins[0] + ins[1]
            pre[layer.name] = z
            return _activate(z, layer.act)
        if isinstance(layer, Route):
            return np.concatenate(ins, axis=1)
        if isinstance(layer, Upsample):
            f = layer.factor
            return np.repeat(np.repeat(x, f, axis=2), f, axis=3)
        raise ConfigError(f"layer {layer.name!r}: unsupported op")

    def _pool(self, layer: Pool, x, aux):
        b, c, h, w = x.shape
        if layer.kind == "gavg":
            return x.mean(axis=(2, 3), keepdims=True)
        k, s, p = layer.k, layer.s, layer.p
        flat = x.reshape(b * c, 1, h, w)
        if layer.kind == "max":
            if p:
                flat = np.pad(flat, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=-np.inf)
            cols = im2col(flat, k, s, 0)
            idx = np.argmax(cols, axis=0)
            out = cols[idx, np.arange(cols.shape[1])]
            aux[layer.name] = (idx, flat.shape)
        else:
            cols = im2col(flat, k, s, p)
            out = cols.mean(axis=0)
        ho = (h + 2 * p - k) // s + 1
        wo = (w + 2 * p - k) // s + 1
        return out.reshape(b, c, ho, wo)

    # -- backward ---------------------------------------------------------------
    def backward(self, d_out: np.ndarray) -> tuple[dict[str, dict[str, np.ndarray]], np.ndarray]:
        """Gradients of every weight block and of the input, given d(loss)/d(output).

        Requires a preceding ``forward(..., keep=True)``.
        """
        if self._cache is None:
            raise RuntimeError("backward needs forward(x, keep=True) first")
        values, pre, aux = self._cache
        layers = [(l, s) for l, s in zip(self.config.layers, self.sources) if not isinstance(l, (Begin, End))]
        if not layers:
            return {}, d_out
        last = layers[-1][0].name
        if d_out.shape != values[last].shape:
            raise ShapeError(f"d_out shape {d_out.shape} != output shape {values[last].shape}")
        grads_v: dict[str, np.ndarray] = {last: d_out.astype(self.dtype, copy=False)}
        grads_w: dict[str, dict[str, np.ndarray]] = {}

        def accumulate(name, g):
            if name in grads_v:
                grads_v[name] = grads_v[name] + g
            else:
                grads_v[name] = g

        for layer, srcs in reversed(layers):
            g = grads_v.pop(layer.name, None)
            if g is None:
                continue
            ins = [values[s] for s in srcs]
            for src, gi in zip(srcs, self._backward_layer(layer, ins, g, pre, aux, grads_w)):
                accumulate(src, gi)
        for layer_name in self.weights:
            if layer_name not in grads_w:
                grads_w[layer_name] = {b: np.zeros_like(a) for b, a in self.weights[layer_name].items()}
        d_input = grads_v.get("input", np.zeros_like(values["input"]))
        return grads_w, d_input

    def _backward_layer(self, layer, ins, g, pre, aux, grads_w):
        x = ins[0]
        if isinstance(layer, Conv):
            g = _activate_grad(pre[layer.name], g, layer.act)
            cg = kernels.backward(x, self.bank(layer.name), layer.spec, g)
            blocks = {"spatial": cg.d_spatial}
            if cg.d_pointwise is not None:
                blocks["pointwise"] = cg.d_pointwise
            grads_w[layer.name] = blocks
            return [cg.d_input]
        if isinstance(layer, FC):
            g = _activate_grad(pre[layer.name], g, layer.act).reshape(x.shape[0], -1)
            w = self.weights[layer.name]["weight"]
            flat = x.reshape(x.shape[0], -1)
            grads_w[layer.name] = {"weight": gemm(np.ascontiguousarray(g.T), flat)}
            return [gemm(g, w).reshape(x.shape)]
        if isinstance(layer, Pool):
            return [self._pool_backward(layer, x, g, aux)]
        if isinstance(layer, Skip):
            g = _activate_grad(pre[layer.name], g, layer.act)
            return [g, g]
        if isinstance(layer, Route):
            splits = np.cumsum([t.shape[1] for t in ins])[:-1]
            return [np.ascontiguousarray(part) for part in np.split(g, splits, axis=1)]
        if isinstance(layer, Upsample):
            f = layer.factor
            b, c, h, w = g.shape
            return [g.reshape(b, c, h // f, f, w // f, f).sum(axis=(3, 5))]
        raise ConfigError(f"layer {layer.name!r}: unsupported op")

    def _pool_backward(self, layer: Pool, x, g, aux):
        b, c, h, w = x.shape
        if layer.kind == "gavg":
            return np.broadcast_to(g / (h * w), x.shape).astype(x.dtype)
        k, s, p = layer.k, layer.s, layer.p
        g_flat = g.reshape(-1)
        if layer.kind == "max":
            idx, padded_shape = aux[layer.name]
            cols = np.zeros((k * k, g_flat.size), dtype=x.dtype)
            cols[idx, np.arange(g_flat.size)] = g_flat
            dx = col2im(cols, padded_shape, k, s, 0)
            if p:
                dx = dx[:, :, p:p + h, p:p + w]
        else:
            cols = np.broadcast_to(g_flat / (k * k), (k * k, g_flat.size)).astype(x.dtype)
            dx = col2im(np.ascontiguousarray(cols), (b * c, 1, h, w), k, s, p)
        return np.ascontiguousarray(dx).reshape(x.shape)


def instantiate(config: ModelConfig, seed: int = 0, precision=32) -> Network:
    """Deterministic weights: layer ``i`` draws from ``default_rng([seed, i])``."""
    infer_shapes(config)
    dtype = as_dtype(precision)
    weights: dict[str, dict[str, np.ndarray]] = {}
    for i, layer in enumerate(config.layers):
        rng = np.random.default_rng([seed, i])
        if isinstance(layer, Conv):
            bank = kernels.init_filters(layer.spec, rng, precision)
            weights[layer.name] = {"spatial": bank.spatial}
            if bank.pointwise is not None:
                weights[layer.name]["pointwise"] = bank.pointwise
        elif isinstance(layer, FC):
            bound = math.sqrt(1.0 / layer.in_features)
            w = rng.uniform(-bound, bound, size=(layer.out_features, layer.in_features))
            weights[layer.name] = {"weight": w.astype(dtype)}
    return Network(config, weights, precision)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over the batch and its gradient w.r.t. ``logits`` (B, C)."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    n = logits.shape[0]
    loss = -float(log_p[np.arange(n), labels].mean())
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1
    return loss, (grad / n).astype(logits.dtype)
