"""Small fully connected networks with hand-written backpropagation.

Parameters are immutable values: every update returns a new ``MlpParams``.
Inputs may be a single vector or a 2-D batch (one row per sample); for a
batch, ``backward`` sums the parameter gradients over rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from pfac.errors import UsageError

CHECKPOINT_FORMAT = "pfac.mlp"
CHECKPOINT_VERSION = 1

HIDDEN_ACTIVATIONS = ("relu", "tanh")
OUTPUT_ACTIVATIONS = ("identity", "tanh")


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.layer_sizes)
        if len(sizes) < 2 or any(n <= 0 for n in sizes):
            raise UsageError(f"need at least two positive layer sizes, got {self.layer_sizes!r}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise UsageError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise UsageError(f"unknown output activation {self.output_activation!r}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ParamGrads:
    """Per-layer arrays shaped like a network's weights and biases."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def arrays(self):
        return (*self.weights, *self.biases)

    def scale(self, c: float) -> "ParamGrads":
        return ParamGrads(tuple(w * c for w in self.weights), tuple(b * c for b in self.biases))

    def __add__(self, other: "ParamGrads") -> "ParamGrads":
        return ParamGrads(
            tuple(a + b for a, b in zip(self.weights, other.weights)),
            tuple(a + b for a, b in zip(self.biases, other.biases)),
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass(frozen=True, eq=False)
class MlpParams(ParamGrads):
    spec: MlpSpec = None

    def __post_init__(self):
        if self.spec is None:
            raise UsageError("MlpParams needs a spec")
        sizes = self.spec.layer_sizes
        if len(self.weights) != self.spec.n_layers or len(self.biases) != self.spec.n_layers:
            raise UsageError("layer count does not match spec")
        ws, bs = [], []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            w, b = _frozen(w), _frozen(b)
            if w.shape != (sizes[i + 1], sizes[i]) or b.shape != (sizes[i + 1],):
                raise UsageError(f"layer {i} has shapes {w.shape}, {b.shape}")
            ws.append(w)
            bs.append(b)
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))

    def grads(self) -> ParamGrads:
        return ParamGrads(self.weights, self.biases)

    def equals(self, other: "MlpParams") -> bool:
        """Bitwise equality of spec and every parameter."""
        return self.spec == other.spec and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )


@dataclass(frozen=True, eq=False)
class GradientBundle:
    param_grads: ParamGrads
    input_grad: np.ndarray


def init_params(spec: MlpSpec, rng: np.random.Generator) -> MlpParams:
    """Uniform init in +-1/sqrt(fan_in) for weights and biases."""
    ws, bs = [], []
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        ws.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        bs.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(tuple(ws), tuple(bs), spec=spec)


def zeros_like(params: ParamGrads) -> ParamGrads:
    return ParamGrads(
        tuple(np.zeros_like(w) for w in params.weights),
        tuple(np.zeros_like(b) for b in params.biases),
    )


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _check_input(params: MlpParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != params.spec.input_size:
        raise UsageError(f"input shape {x.shape} does not match input size {params.spec.input_size}")
    return x


def _forward_trace(params: MlpParams, x: np.ndarray) -> list[np.ndarray]:
    acts = [x]
    last = params.spec.n_layers - 1
    h = x
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        h = _activate(z, params.spec.output_activation if i == last else params.spec.hidden_activation)
        acts.append(h)
    return acts


def forward(params: MlpParams, x) -> np.ndarray:
    x = _check_input(params, x)
    return _forward_trace(params, x)[-1]


def _backward_trace(params: MlpParams, acts, upstream) -> GradientBundle:
    spec = params.spec
    batched = acts[0].ndim == 2
    n = spec.n_layers
    dws, dbs = [None] * n, [None] * n
    g = upstream
    for i in range(n - 1, -1, -1):
        kind = spec.output_activation if i == n - 1 else spec.hidden_activation
        out = acts[i + 1]
        if kind == "relu":
            g = g * (out > 0.0)
        elif kind == "tanh":
            g = g * (1.0 - out * out)
        inp = acts[i]
        if batched:
            dws[i] = g.T @ inp
            dbs[i] = g.sum(axis=0)
        else:
            dws[i] = np.outer(g, inp)
            dbs[i] = g.copy()
        g = g @ params.weights[i]
    return GradientBundle(ParamGrads(tuple(dws), tuple(dbs)), g)


def backward(params: MlpParams, x, upstream) -> GradientBundle:
    """Gradients of ``upstream . forward(params, x)``.

    For a batch, ``upstream`` has one row per sample, parameter gradients are
    summed over rows and ``input_grad`` keeps one row per sample.
    """
    x = _check_input(params, x)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != x.shape[:-1] + (params.spec.output_size,):
        raise UsageError(f"upstream shape {upstream.shape} does not match output")
    return _backward_trace(params, _forward_trace(params, x), upstream)


def forward_backward(params: MlpParams, x, upstream_fn) -> tuple[np.ndarray, GradientBundle]:
    """One forward pass; ``upstream_fn(output)`` picks the output gradient."""
    x = _check_input(params, x)
    acts = _forward_trace(params, x)
    upstream = np.asarray(upstream_fn(acts[-1]), dtype=np.float64)
    if upstream.shape != acts[-1].shape:
        raise UsageError(f"upstream shape {upstream.shape} does not match output")
    return acts[-1], _backward_trace(params, acts, upstream)


def _check_same_shapes(params: ParamGrads, other: ParamGrads):
    if len(params.weights) != len(other.weights) or any(
        a.shape != b.shape for a, b in zip(params.arrays(), other.arrays())
    ):
        raise UsageError("parameter shapes do not match")


def apply_gradient_step(params: MlpParams, grads: ParamGrads, lr: float, direction: str = "descent") -> MlpParams:
    if direction not in ("ascent", "descent"):
        raise UsageError(f"direction must be ascent or descent, got {direction!r}")
    _check_same_shapes(params, grads)
    step = lr if direction == "ascent" else -lr
    return MlpParams(
        tuple(w + step * g for w, g in zip(params.weights, grads.weights)),
        tuple(b + step * g for b, g in zip(params.biases, grads.biases)),
        spec=params.spec,
    )


@dataclass(frozen=True, eq=False)
class AdamState:
    m: ParamGrads
    v: ParamGrads
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: ParamGrads) -> AdamState:
    return AdamState(zeros_like(params), zeros_like(params))


def adam_step(
    params: MlpParams, grads: ParamGrads, state: AdamState, lr: float, direction: str = "descent"
) -> tuple[MlpParams, AdamState]:
    if direction not in ("ascent", "descent"):
        raise UsageError(f"direction must be ascent or descent, got {direction!r}")
    _check_same_shapes(params, grads)
    b1, b2, t = state.beta1, state.beta2, state.t + 1
    m = [b1 * m + (1 - b1) * g for m, g in zip(state.m.arrays(), grads.arrays())]
    v = [b2 * v + (1 - b2) * g * g for v, g in zip(state.v.arrays(), grads.arrays())]
    lr_t = lr * np.sqrt(1 - b2**t) / (1 - b1**t)
    sign = 1.0 if direction == "ascent" else -1.0
    new = [p + sign * lr_t * mi / (np.sqrt(vi) + state.eps) for p, mi, vi in zip(params.arrays(), m, v)]
    k = len(params.weights)
    new_params = MlpParams(tuple(new[:k]), tuple(new[k:]), spec=params.spec)
    new_state = AdamState(
        ParamGrads(tuple(m[:k]), tuple(m[k:])),
        ParamGrads(tuple(v[:k]), tuple(v[k:])),
        t,
        b1,
        b2,
        state.eps,
    )
    return new_params, new_state


def soft_update(target: MlpParams, online: MlpParams, tau: float) -> MlpParams:
    """``tau * online + (1 - tau) * target``, elementwise."""
    if target.spec != online.spec:
        raise UsageError("soft_update needs networks with identical specs")
    if not 0.0 <= tau <= 1.0:
        raise UsageError(f"tau must lie in [0, 1], got {tau}")
    if tau == 1.0:
        return online
    return MlpParams(
        tuple(tau * o + (1.0 - tau) * t for t, o in zip(target.weights, online.weights)),
        tuple(tau * o + (1.0 - tau) * t for t, o in zip(target.biases, online.biases)),
        spec=target.spec,
    )


def params_to_dict(params: MlpParams) -> dict:
    # json writes floats with repr, which round-trips float64 exactly
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layer_sizes": list(params.spec.layer_sizes),
        "hidden_activation": params.spec.hidden_activation,
        "output_activation": params.spec.output_activation,
        "weights": [w.ravel().tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }


def params_from_dict(doc: dict) -> MlpParams:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise UsageError(f"not a network checkpoint: format={doc.get('format')!r}")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise UsageError(f"unsupported network checkpoint version {doc.get('version')!r}")
    spec = MlpSpec(tuple(doc["layer_sizes"]), doc["hidden_activation"], doc["output_activation"])
    sizes = spec.layer_sizes
    weights = [
        np.asarray(w, dtype=np.float64).reshape(sizes[i + 1], sizes[i]) for i, w in enumerate(doc["weights"])
    ]
    params = MlpParams(tuple(weights), tuple(np.asarray(b, dtype=np.float64) for b in doc["biases"]), spec=spec)
    if not params.is_finite():
        raise UsageError("checkpoint contains non-finite parameters")
    return params


def save_params(params: MlpParams, path) -> None:
    Path(path).write_text(json.dumps(params_to_dict(params)))


def load_params(path) -> MlpParams:
    return params_from_dict(json.loads(Path(path).read_text()))


def flatten(grads: ParamGrads) -> np.ndarray:
    """All parameters in row-major layer order: weights first, then biases."""
    return np.concatenate([a.ravel() for a in grads.arrays()])


def unflatten(spec: MlpSpec, flat: Sequence[float]) -> MlpParams:
    flat = np.asarray(flat, dtype=np.float64)
    sizes = spec.layer_sizes
    ws, bs, pos = [], [], 0
    for i in range(spec.n_layers):
        n = sizes[i + 1] * sizes[i]
        ws.append(flat[pos : pos + n].reshape(sizes[i + 1], sizes[i]))
        pos += n
    for i in range(spec.n_layers):
        bs.append(flat[pos : pos + sizes[i + 1]])
        pos += sizes[i + 1]
    if pos != flat.size:
        raise UsageError("flat parameter vector has the wrong length")
    return MlpParams(tuple(ws), tuple(bs), spec=spec)
