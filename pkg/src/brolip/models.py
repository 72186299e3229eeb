"""Miniature norm-controlled networks built from the orthogonal layer zoo.

Every layer kind here carries Lipschitz constant exactly one: orthogonal
convolutions and dense reflectors preserve norms, channel-pairwise
max/min sorting permutes entries, patchwise l2 pooling contracts, and
truncated reflectors are semi-orthogonal. Layer math is written against
the twin op backends, so one implementation serves eager inference and
taped training.

Inputs are batch-first; dense-style layers flatten image-shaped inputs
implicitly. There are no bias terms anywhere: they would not change any
Lipschitz constant but would complicate the margin bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .certify import LipschitzModel
from .errors import ContractError
from .ortho import ConvGeometry, conv_apply, identity_kernel
from .tape import EagerOps, Tape, TapeOps, Var
from .tensor import as_real_array


@dataclass
class LayerSpec:
    """Declarative layer description; `args` is JSON-serializable."""

    kind: str
    args: dict = field(default_factory=dict)


def _flatten(ops, x):
    shape = ops.value(x).shape
    if len(shape) == 2:
        return x
    return ops.reshape(x, (shape[0], int(np.prod(shape[1:]))))


def _reflector(ops, veff, m):
    """W = I - 2 V (V^T V)^{-1} V^T as backend ops (m x m)."""
    vt = ops.transpose(veff, (1, 0))
    gram = ops.matmul(vt, veff)
    sol = ops.solve_h(gram, vt)
    return ops.sub(ops.constant(np.eye(m)), ops.scale(ops.matmul(veff, sol), 2.0))


class BroConvLayer:
    kind = "bro_conv"
    lipschitz = 1.0

    def __init__(self, v, alpha, geom: ConvGeometry, residual: bool, depth_norm: float):
        self.v = as_real_array(v)
        self.alpha = np.asarray(float(alpha))
        self.geom = geom
        self.residual = residual
        self.depth_norm = float(depth_norm)

    def params(self):
        out = {"v": self.v}
        if self.residual:
            out["alpha"] = self.alpha
        return out

    def forward(self, ops, p, x):
        v = p["v"]
        if self.residual:
            ik = identity_kernel(*self.v.shape[:2], self.v.shape[2])
            scaled = ops.scale(ops.scale_by(v, p["alpha"]), 1.0 / self.depth_norm)
            v = ops.add(ops.constant(ik), scaled)
        return conv_apply(ops, v, x, self.geom)

    def out_shape(self, shape):
        c, s, _ = shape
        if (c, s) != (self.geom.channels_in, self.geom.spatial):
            raise ContractError(f"conv layer expects {self.geom}, got input {shape}")
        size = self.geom.padded_size if self.geom.keep_padding else s
        return (c, size, size)


class BroDenseLayer:
    kind = "bro_dense"
    lipschitz = 1.0

    def __init__(self, v, alpha, residual: bool, depth_norm: float):
        self.v = as_real_array(v)
        self.alpha = np.asarray(float(alpha))
        self.residual = residual
        self.depth_norm = float(depth_norm)

    def params(self):
        out = {"v": self.v}
        if self.residual:
            out["alpha"] = self.alpha
        return out

    def forward(self, ops, p, x):
        m, n = self.v.shape
        v = p["v"]
        if self.residual:
            scaled = ops.scale(ops.scale_by(v, p["alpha"]), 1.0 / self.depth_norm)
            v = ops.add(ops.constant(np.eye(m, n)), scaled)
        w = _reflector(ops, v, m)
        return ops.matmul(_flatten(ops, x), ops.transpose(w, (1, 0)))

    def out_shape(self, shape):
        if int(np.prod(shape)) != self.v.shape[0]:
            raise ContractError(f"dense layer of width {self.v.shape[0]} fed {shape}")
        return (self.v.shape[0],)


class SemiOrthoLayer:
    kind = "semi_ortho"
    lipschitz = 1.0

    def __init__(self, v, d_out: int, d_in: int):
        self.v = as_real_array(v)
        self.d_out = d_out
        self.d_in = d_in
        if self.v.shape[0] != max(d_out, d_in):
            raise ContractError("parameter rows must equal max(d_out, d_in)")

    def params(self):
        return {"v": self.v}

    def forward(self, ops, p, x):
        c = self.v.shape[0]
        w = _reflector(ops, p["v"], c)
        w = ops.slice2d(w, self.d_out, self.d_in)
        return ops.matmul(_flatten(ops, x), ops.transpose(w, (1, 0)))

    def out_shape(self, shape):
        if int(np.prod(shape)) != self.d_in:
            raise ContractError(f"semi-orthogonal layer expects {self.d_in} inputs, "
                                f"got {shape}")
        return (self.d_out,)


class MaxMinLayer:
    kind = "maxmin"
    lipschitz = 1.0

    def params(self):
        return {}

    def forward(self, ops, p, x):
        return ops.maxmin(x, axis=1)

    def out_shape(self, shape):
        if shape[0] % 2:
            raise ContractError("maxmin needs an even channel count")
        return shape


class L2PoolLayer:
    kind = "l2_pool"
    lipschitz = 1.0

    def __init__(self, patch: int):
        self.patch = patch

    def params(self):
        return {}

    def forward(self, ops, p, x):
        return ops.l2_pool(x, self.patch)

    def out_shape(self, shape):
        c, s, _ = shape
        if s % self.patch:
            raise ContractError(f"patch {self.patch} does not divide spatial size {s}")
        return (c, s // self.patch, s // self.patch)


class LLNHead:
    """Classification head whose weight rows are unit-normalized on use."""

    kind = "lln_head"
    lipschitz = 1.0

    def __init__(self, w):
        self.w = as_real_array(w)

    def params(self):
        return {"w": self.w}

    def forward(self, ops, p, x):
        wn = ops.row_normalize(p["w"])
        return ops.matmul(_flatten(ops, x), ops.transpose(wn, (1, 0)))

    def out_shape(self, shape):
        if int(np.prod(shape)) != self.w.shape[1]:
            raise ContractError(f"head expects {self.w.shape[1]} features, got {shape}")
        return (self.w.shape[0],)


class Network:
    """An ordered layer stack with its specs, seed, and shape bookkeeping."""

    def __init__(self, specs, layers, input_shape, seed):
        self.specs = list(specs)
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.seed = seed

    # -- parameter plumbing -------------------------------------------------
    def parameters(self):
        """(layer_index, name, array) triples in declaration order."""
        out = []
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params().items():
                out.append((i, name, arr))
        return out

    def lipschitz_model(self) -> LipschitzModel:
        return LipschitzModel([(l.kind, l.lipschitz) for l in self.layers])

    def backbone_bound(self) -> float:
        bound = 1.0
        for layer in self.layers:
            if layer.kind == "lln_head":
                break
            bound *= layer.lipschitz
        return bound

    def head_rows(self):
        """Unit-normalized head rows as applied, or None without a head."""
        last = self.layers[-1] if self.layers else None
        if last is None or last.kind != "lln_head":
            return None
        return EagerOps.row_normalize(last.w)

    def classes(self) -> int:
        last = self.layers[-1]
        if last.kind == "lln_head":
            return last.w.shape[0]
        raise ContractError("network has no classification head")

    # -- forward passes -----------------------------------------------------
    def _coerce_batch(self, x):
        arr = as_real_array(x)
        if arr.ndim == len(self.input_shape):
            arr = arr[None]
        if arr.shape[1:] != self.input_shape:
            if arr.ndim == 2 and int(np.prod(self.input_shape)) == arr.shape[1]:
                arr = arr.reshape((arr.shape[0],) + self.input_shape)
            else:
                raise ContractError(
                    f"input shape {arr.shape[1:]} does not match {self.input_shape}")
        return arr

    def forward(self, x) -> np.ndarray:
        """Eager batch forward to logits."""
        cur = self._coerce_batch(x)
        for layer in self.layers:
            cur = layer.forward(EagerOps, layer.params(), cur)
        return cur

    def forward_tape(self, tape: Tape, x, train_params: bool = True):
        """Recorded forward; returns (logits, input var, {(i, name): var})."""
        ops = TapeOps(tape)
        x_var = tape.leaf(self._coerce_batch(x), requires_grad=not train_params)
        param_vars: dict[tuple[int, str], Var] = {}
        cur = x_var
        for i, layer in enumerate(self.layers):
            bound = {}
            for name, arr in layer.params().items():
                var = tape.leaf(arr, requires_grad=train_params)
                param_vars[(i, name)] = var
                bound[name] = var
            cur = layer.forward(ops, bound, cur)
        return cur, x_var, param_vars


def _make_layer(spec: LayerSpec, in_shape, rng) -> tuple[object, tuple]:
    kind, a = spec.kind, spec.args
    if kind == "bro_conv":
        c, n, k = a["c"], a["n"], a["k"]
        keep = bool(a.get("keep_padding", False))
        residual = bool(a.get("residual", False))
        depth_norm = float(a.get("depth_norm", 1.0))
        if len(in_shape) != 3:
            raise ContractError("bro_conv needs an image-shaped input")
        if "s" in a and a["s"] != in_shape[1]:
            raise ContractError(
                f"declared spatial size {a['s']} does not match input {in_shape}")
        geom = ConvGeometry(c, c, in_shape[1], k, keep_padding=keep)
        v = rng.standard_normal((c, n, k, k)) / np.sqrt(c)
        layer = BroConvLayer(v, a.get("alpha", 1.0), geom, residual, depth_norm)
    elif kind == "bro_dense":
        m, n = a["m"], a["n"]
        residual = bool(a.get("residual", False))
        depth_norm = float(a.get("depth_norm", 1.0))
        v = rng.standard_normal((m, n)) / np.sqrt(m)
        layer = BroDenseLayer(v, a.get("alpha", 1.0), residual, depth_norm)
    elif kind == "semi_ortho":
        d_in, d_out = a["d_in"], a["d_out"]
        c = max(d_in, d_out)
        n = a.get("n", max(1, c // 4))
        if n >= c:
            raise ContractError("semi-orthogonal rank must stay below max dim")
        v = rng.standard_normal((c, n)) / np.sqrt(c)
        layer = SemiOrthoLayer(v, d_out, d_in)
    elif kind == "maxmin":
        layer = MaxMinLayer()
    elif kind == "l2_pool":
        layer = L2PoolLayer(int(a["p"]))
    elif kind == "lln_head":
        classes, d_in = a["classes"], a["d_in"]
        w = rng.standard_normal((classes, d_in)) / np.sqrt(d_in)
        layer = LLNHead(w)
    else:
        raise ContractError(f"unknown layer kind {kind!r}")
    return layer, layer.out_shape(in_shape)


def build_model(specs, seed: int, input_shape=None) -> Network:
    """Instantiate and initialize a network from layer specs.

    Reflector parameters draw i.i.d. Gaussians at scale 1/sqrt(width); no
    iteration has to converge, so no special initialization is needed.
    Geometry is validated by walking shapes through the stack.
    """
    specs = list(specs)
    if not specs:
        raise ContractError("need at least one layer")
    if input_shape is None:
        first = specs[0]
        if first.kind == "bro_conv":
            input_shape = (first.args["c"], first.args["s"], first.args["s"])
        elif first.kind == "bro_dense":
            input_shape = (first.args["m"],)
        elif first.kind == "lln_head":
            input_shape = (first.args["d_in"],)
        else:
            raise ContractError("cannot infer input shape; pass input_shape")
    rng = np.random.default_rng(seed)
    layers = []
    shape = tuple(input_shape)
    for spec in specs:
        layer, shape = _make_layer(spec, shape, rng)
        layers.append(layer)
    return Network(specs, layers, input_shape, seed)


def lipconvnet_mini(channels=2, spatial=4, classes=2, rank=1, kernel=3,
                    hidden=None) -> list[LayerSpec]:
    """Two orthogonal convolutions with pairwise sorting, then a truncated
    reflector into a normalized head."""
    flat = channels * spatial * spatial
    hidden = hidden or max(classes, flat // 2)
    return [
        LayerSpec("bro_conv", {"c": channels, "n": rank, "k": kernel, "s": spatial}),
        LayerSpec("maxmin", {}),
        LayerSpec("bro_conv", {"c": channels, "n": rank, "k": kernel, "s": spatial}),
        LayerSpec("maxmin", {}),
        LayerSpec("semi_ortho", {"d_in": flat, "d_out": hidden}),
        LayerSpec("lln_head", {"classes": classes, "d_in": hidden}),
    ]


def bronet_mini(channels=2, spatial=4, classes=2, rank=1, kernel=3,
                backbone=2, dense=2, pool=2) -> list[LayerSpec]:
    """Residual-reparameterized conv backbone, l2-pool neck, dense stack."""
    specs = []
    for _ in range(backbone):
        specs.append(LayerSpec("bro_conv", {
            "c": channels, "n": rank, "k": kernel, "s": spatial,
            "residual": True, "depth_norm": float(np.sqrt(backbone))}))
        specs.append(LayerSpec("maxmin", {}))
    specs.append(LayerSpec("l2_pool", {"p": pool}))
    width = channels * (spatial // pool) ** 2
    for _ in range(dense):
        specs.append(LayerSpec("bro_dense", {
            "m": width, "n": max(1, width // 4),
            "residual": True, "depth_norm": float(np.sqrt(dense))}))
        specs.append(LayerSpec("maxmin", {}))
    specs.append(LayerSpec("lln_head", {"classes": classes, "d_in": width}))
    return specs
