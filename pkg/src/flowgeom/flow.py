"""Invertible coupling flow with residual-network conditioners.

Each layer passes one half of the coordinates through untouched and applies
an affine map to the other half, with scale and shift produced by two
separate residual networks of the pass-through coordinates.  Scales are
squashed through ``s_max * tanh(. / s_max)`` before exponentiation so the
layer stays numerically invertible.  The log-determinant of the Jacobian is
the sum of the squashed scale outputs.

All conditioner evaluations run on the autodiff tape, including the ones
behind the plain numeric API, so forward, inverse, Jacobian, and training
all see bitwise-identical conditioner outputs.  Jacobian-vector products are
built from first-order primitives (ReLU derivatives enter as stop-gradient
masks), which keeps any scalar function of a JVP differentiable in the
parameters.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .engine import Graph, Parameter, Var, concat
from .errors import (
    DimensionMismatchError,
    FileFormatError,
    FlowOverflowError,
    SchemaError,
)

MODEL_SCHEMA = "pullback-flow/1"


def _clamped_scale(raw: Var, s_max: float) -> tuple[Var, Var]:
    """Return (s, tanh_term) with s = s_max * tanh(raw / s_max).

    tanh is composed from exp so the whole thing lives on the tape:
    tanh(u) = (e^{2u} - 1) / (e^{2u} + 1).
    """
    w = raw.scale(2.0 / s_max).exp()
    th = (w - 1.0) / (w + 1.0)
    return th.scale(s_max), th


class ResidualConditioner:
    """MLP with a linear stem, residual blocks, and a zero-initialized head.

    The zero head makes the owning layer (and therefore the whole flow) the
    identity map at initialization.
    """

    def __init__(self, in_dim, out_dim, hidden, blocks, rng, name):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.hidden = hidden
        self.n_blocks = blocks

        def he(fan_in, fan_out, label):
            w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            return Parameter(w, f"{name}.{label}")

        self.w_in = he(in_dim, hidden, "w_in")
        self.b_in = Parameter(np.zeros(hidden), f"{name}.b_in")
        self.blocks = []
        for k in range(blocks):
            self.blocks.append(
                {
                    "w1": he(hidden, hidden, f"blocks.{k}.w1"),
                    "b1": Parameter(np.zeros(hidden), f"{name}.blocks.{k}.b1"),
                    "w2": he(hidden, hidden, f"blocks.{k}.w2"),
                    "b2": Parameter(np.zeros(hidden), f"{name}.blocks.{k}.b2"),
                }
            )
        self.w_out = Parameter(np.zeros((hidden, out_dim)), f"{name}.w_out")
        self.b_out = Parameter(np.zeros(out_dim), f"{name}.b_out")

    def parameters(self) -> list[Parameter]:
        out = [self.w_in, self.b_in]
        for blk in self.blocks:
            out.extend([blk["w1"], blk["b1"], blk["w2"], blk["b2"]])
        out.extend([self.w_out, self.b_out])
        return out

    def apply(self, g: Graph, x: Var):
        """Evaluate on the tape; the cache carries what the JVP pass needs."""
        weights = {
            "w_in": g.param(self.w_in),
            "w1": [g.param(b["w1"]) for b in self.blocks],
            "w2": [g.param(b["w2"]) for b in self.blocks],
            "w_out": g.param(self.w_out),
        }
        pre = x @ weights["w_in"] + g.param(self.b_in)
        pres = [pre]
        h = pre.relu()
        for k, blk in enumerate(self.blocks):
            pre_k = h @ weights["w1"][k] + g.param(blk["b1"])
            pres.append(pre_k)
            h = h + (pre_k.relu() @ weights["w2"][k] + g.param(blk["b2"]))
        out = h @ weights["w_out"] + g.param(self.b_out)
        cache = {"weights": weights, "masks": [p.relu_mask() for p in pres]}
        return out, cache

    def jvp(self, cache, v: Var) -> Var:
        """Tangent pass sharing the primal's weights and activation masks."""
        weights = cache["weights"]
        masks = cache["masks"]
        t = masks[0] * (v @ weights["w_in"])
        for k in range(self.n_blocks):
            t = t + (masks[k + 1] * (t @ weights["w1"][k])) @ weights["w2"][k]
        return t @ weights["w_out"]


class CouplingLayer:
    def __init__(self, mask, hidden, blocks, s_max, rng, name):
        mask = np.asarray(mask, dtype=bool)
        d = mask.size
        if d >= 2 and (mask.all() or not mask.any()):
            raise ValueError("coupling mask must pass and transform >= 1 coordinate")
        self.mask = mask
        self.pass_idx = np.flatnonzero(mask)
        self.trans_idx = np.flatnonzero(~mask)
        grouped = np.concatenate([self.pass_idx, self.trans_idx])
        self.inv_perm = np.argsort(grouped)
        self.s_max = float(s_max)
        self.scale_net = ResidualConditioner(
            self.pass_idx.size, self.trans_idx.size, hidden, blocks, rng, f"{name}.scale"
        )
        self.shift_net = ResidualConditioner(
            self.pass_idx.size, self.trans_idx.size, hidden, blocks, rng, f"{name}.shift"
        )

    def parameters(self):
        return self.scale_net.parameters() + self.shift_net.parameters()

    def build_forward(self, g: Graph, x: Var):
        xp = x.take(self.pass_idx)
        xt = x.take(self.trans_idx)
        raw, scale_cache = self.scale_net.apply(g, xp)
        shift, shift_cache = self.shift_net.apply(g, xp)
        s, th = _clamped_scale(raw, self.s_max)
        es = s.exp()
        scaled = xt * es
        yt = scaled + shift
        y = concat([xp, yt]).take(self.inv_perm)
        cache = {
            "scale": scale_cache,
            "shift": shift_cache,
            "th": th,
            "es": es,
            "scaled": scaled,
        }
        return y, s, cache

    def build_jvp(self, cache, v: Var) -> Var:
        vp = v.take(self.pass_idx)
        vt = v.take(self.trans_idx)
        draw = self.scale_net.jvp(cache["scale"], vp)
        dshift = self.shift_net.jvp(cache["shift"], vp)
        ds = (1.0 - cache["th"].square()) * draw
        dyt = vt * cache["es"] + cache["scaled"] * ds + dshift
        return concat([vp, dyt]).take(self.inv_perm)

    def _conditioner_values(self, yp: np.ndarray):
        g = Graph()
        xp = g.constant(yp)
        raw, _ = self.scale_net.apply(g, xp)
        shift, _ = self.shift_net.apply(g, xp)
        s, _ = _clamped_scale(raw, self.s_max)
        return s.value, shift.value

    def invert(self, y: np.ndarray) -> np.ndarray:
        yp = y[:, self.pass_idx]
        s, shift = self._conditioner_values(yp)
        xt = (y[:, self.trans_idx] - shift) * np.exp(-s)
        x = np.empty_like(y)
        x[:, self.pass_idx] = yp
        x[:, self.trans_idx] = xt
        return x


def alternating_masks(dim: int, n_layers: int) -> list[np.ndarray]:
    """Even coordinates pass on even layers, odd coordinates on odd layers."""
    even = np.zeros(dim, dtype=bool)
    even[::2] = True
    return [even if k % 2 == 0 else ~even for k in range(n_layers)]


class CouplingFlow:
    """Stack of coupling layers acting on R^d, identity at initialization."""

    def __init__(
        self,
        dim: int,
        n_layers: int,
        hidden: int = 64,
        blocks: int = 2,
        s_max: float = 5.0,
        seed: int = 0,
        masks=None,
    ):
        if dim < 2:
            raise ValueError("coupling flows need dim >= 2")
        self.dim = int(dim)
        self.hidden = int(hidden)
        self.blocks = int(blocks)
        self.s_max = float(s_max)
        if masks is None:
            masks = alternating_masks(dim, n_layers)
        if len(masks) != n_layers:
            raise ValueError("number of masks must equal number of layers")
        rng = np.random.default_rng(seed)
        self.layers = [
            CouplingLayer(m, hidden, blocks, s_max, rng, f"layers.{k}")
            for k, m in enumerate(masks)
        ]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def parameters(self) -> list[Parameter]:
        out = []
        for layer in self.layers:
            out.extend(layer.parameters())
        return out

    # -- tape-building API (training and JVPs) ------------------------------

    def build_forward(self, g: Graph, x: Var):
        """Returns (y, per-sample logdet, caches); raises on overflow."""
        logdet = None
        caches = []
        y = x
        for k, layer in enumerate(self.layers):
            y, s, cache = layer.build_forward(g, y)
            if not np.all(np.isfinite(y.value)):
                raise FlowOverflowError(k, "forward")
            part = s.sum(axis=-1)
            logdet = part if logdet is None else logdet + part
            caches.append(cache)
        return y, logdet, caches

    def build_jvp(self, caches, v: Var) -> Var:
        for layer, cache in zip(self.layers, caches):
            v = layer.build_jvp(cache, v)
        return v

    def tile_caches(self, caches, reps: int):
        """Repeat the cached primal activations ``reps`` times along the
        batch axis so one tangent pass can carry ``reps`` stacked tangents
        per sample (the JVP is linear in the tangent, so stacking is exact).
        """

        def tile(var):
            return concat([var] * reps, axis=0)

        def tile_net(cache):
            return {"weights": cache["weights"],
                    "masks": [tile(m) for m in cache["masks"]]}

        return [
            {
                "scale": tile_net(c["scale"]),
                "shift": tile_net(c["shift"]),
                "th": tile(c["th"]),
                "es": tile(c["es"]),
                "scaled": tile(c["scaled"]),
            }
            for c in caches
        ]

    # -- numeric API ---------------------------------------------------------

    def _as_batch(self, x, name="x"):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise DimensionMismatchError(
                f"{name} has shape {x.shape}, model dimension is {self.dim}"
            )
        return x, single

    def forward(self, x):
        """Map points to flow coordinates; returns (y, logdet)."""
        xb, single = self._as_batch(x)
        g = Graph()
        y, logdet, _ = self.build_forward(g, g.constant(xb))
        yv, lv = y.value, logdet.value
        return (yv[0], lv[0]) if single else (yv, lv)

    def inverse(self, y):
        """Exact layer-by-layer algebraic inversion."""
        yb, single = self._as_batch(y, "y")
        x = yb
        for k in range(len(self.layers) - 1, -1, -1):
            x = self.layers[k].invert(x)
            if not np.all(np.isfinite(x)):
                raise FlowOverflowError(k, "inverse")
        return x[0] if single else x

    def jvp(self, x, v):
        """Apply the Jacobian at x to tangent v (numeric convenience)."""
        xb, single = self._as_batch(x)
        vb, _ = self._as_batch(v, "v")
        g = Graph()
        _, _, caches = self.build_forward(g, g.constant(xb))
        out = self.build_jvp(caches, g.constant(vb)).value
        return out[0] if single else out

    def jacobian(self, x):
        """Dense Jacobian from one shared primal pass and d tangent passes."""
        xb, single = self._as_batch(x)
        n = xb.shape[0]
        g = Graph()
        _, _, caches = self.build_forward(g, g.constant(xb))
        jac = np.empty((n, self.dim, self.dim))
        for i in range(self.dim):
            basis = np.zeros((n, self.dim))
            basis[:, i] = 1.0
            jac[:, :, i] = self.build_jvp(caches, g.constant(basis)).value
        return jac[0] if single else jac


# -- model file ("pullback-flow/1") ------------------------------------------


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError("model contains a non-finite value")
    s = format(float(x), ".17g")
    if not any(c in s for c in ".eE"):
        s += ".0"
    return s


def _emit(obj, out: list[str]) -> None:
    if isinstance(obj, dict):
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            if i:
                out.append(",")
            out.append(json.dumps(k))
            out.append(":")
            _emit(v, out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(",")
            _emit(v, out)
        out.append("]")
    elif isinstance(obj, bool):
        out.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_fmt_float(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    else:
        raise TypeError(f"cannot serialize {type(obj)!r}")


def _flat(a: np.ndarray) -> list[float]:
    return [float(v) for v in np.asarray(a, dtype=np.float64).reshape(-1)]


def _net_dict(net: ResidualConditioner) -> dict:
    return {
        "w_in": _flat(net.w_in.value),
        "b_in": _flat(net.b_in.value),
        "blocks": [
            {
                "w1": _flat(b["w1"].value),
                "b1": _flat(b["b1"].value),
                "w2": _flat(b["w2"].value),
                "b2": _flat(b["b2"].value),
            }
            for b in net.blocks
        ],
        "w_out": _flat(net.w_out.value),
        "b_out": _flat(net.b_out.value),
    }


def _load_net(net: ResidualConditioner, data: dict) -> None:
    def put(param, flat):
        arr = np.asarray(flat, dtype=np.float64).reshape(param.value.shape)
        param.value[...] = arr

    put(net.w_in, data["w_in"])
    put(net.b_in, data["b_in"])
    for blk, bd in zip(net.blocks, data["blocks"]):
        put(blk["w1"], bd["w1"])
        put(blk["b1"], bd["b1"])
        put(blk["w2"], bd["w2"])
        put(blk["b2"], bd["b2"])
    put(net.w_out, data["w_out"])
    put(net.b_out, data["b_out"])


def save_model(path, flow: CouplingFlow, potential) -> None:
    """Write flow weights and base variances as one UTF-8 JSON document.

    Floats carry 17 significant digits so a reloaded model reproduces
    forward outputs bitwise.
    """
    doc = {
        "schema": MODEL_SCHEMA,
        "dim": flow.dim,
        "n_layers": flow.n_layers,
        "hidden": flow.hidden,
        "blocks": flow.blocks,
        "s_max": flow.s_max,
        "masks": [[bool(b) for b in layer.mask] for layer in flow.layers],
        "layers": [
            {"scale": _net_dict(l.scale_net), "shift": _net_dict(l.shift_net)}
            for l in flow.layers
        ],
        "log_variances": _flat(potential.log_variances.value),
        "variances_trainable": bool(potential.trainable),
    }
    out: list[str] = []
    _emit(doc, out)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("".join(out))
        fh.write("\n")


def load_model(path, expect_dim=None):
    """Load (flow, potential) from a model file; never returns a partial flow.

    Raises FileFormatError for unreadable documents, SchemaError for wrong
    schema ids, and DimensionMismatchError when ``expect_dim`` disagrees
    with the stored dimension.
    """
    from .potentials import DiagonalQuadratic

    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise FileFormatError(f"cannot read model file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"model file {path} is not valid JSON: {exc}") from exc

    if not isinstance(doc, dict) or "schema" not in doc:
        raise SchemaError(f"model file {path} carries no schema id")
    if doc["schema"] != MODEL_SCHEMA:
        raise SchemaError(
            f"model file {path} has schema {doc['schema']!r}, expected {MODEL_SCHEMA!r}"
        )

    try:
        dim = int(doc["dim"])
        if expect_dim is not None and dim != int(expect_dim):
            raise DimensionMismatchError(
                f"model dimension {dim} does not match requested dimension {expect_dim}"
            )
        masks = [np.asarray(m, dtype=bool) for m in doc["masks"]]
        flow = CouplingFlow(
            dim,
            int(doc["n_layers"]),
            hidden=int(doc["hidden"]),
            blocks=int(doc["blocks"]),
            s_max=float(doc["s_max"]),
            masks=masks,
        )
        for layer, ld in zip(flow.layers, doc["layers"]):
            _load_net(layer.scale_net, ld["scale"])
            _load_net(layer.shift_net, ld["shift"])
        logs = np.asarray(doc["log_variances"], dtype=np.float64)
        if logs.shape != (dim,):
            raise FileFormatError(
                f"model file {path} has {logs.size} variances for dimension {dim}"
            )
        potential = DiagonalQuadratic(
            dim,
            variances=np.exp(logs),
            trainable=bool(doc.get("variances_trainable", True)),
        )
        potential.log_variances.value[...] = logs
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(f"model file {path} is malformed: {exc}") from exc
    return flow, potential
