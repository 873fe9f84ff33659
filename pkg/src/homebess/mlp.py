"""Plain-numpy multilayer perceptrons with reverse-mode gradients and Adam.

Deliberately minimal: dense layers, rectifier hidden units, identity or
unit-interval (sigmoid) outputs, exact backpropagation for this fixed
topology, and a central finite-difference estimator used as the gradient
oracle in tests. Everything is float64 so the finite-difference comparisons
are meaningful.

Parameter containers are treated as values: adam_update and the soft target
blend mutate their arrays in place for speed but only ever under exclusive
ownership by one agent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, NumericError, ShapeError

OUTPUT_ACTIVATIONS = ("identity", "sigmoid")

CHECKPOINT_VERSION = 1


@dataclass
class MlpParams:
    weights: list[np.ndarray]   # each (fan_in, fan_out)
    biases: list[np.ndarray]    # each (fan_out,)
    output_activation: str = "identity"

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]


@dataclass
class ForwardCache:
    params: MlpParams
    inputs: list[np.ndarray]    # input to each layer, 2-D
    preacts: list[np.ndarray]   # pre-activation of each layer, 2-D
    output: np.ndarray
    squeeze: bool


@dataclass
class AdamState:
    m: list[tuple[np.ndarray, np.ndarray]]
    v: list[tuple[np.ndarray, np.ndarray]]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_mlp(layer_sizes, output_activation: str = "identity", seed=None) -> MlpParams:
    """Fan-in-scaled uniform weights, zero biases; deterministic for a seed."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise ConfigError(f"need >= 2 positive layer sizes, got {sizes}")
    if output_activation not in OUTPUT_ACTIVATIONS:
        raise ConfigError(f"output_activation must be one of {OUTPUT_ACTIVATIONS}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases, output_activation)


def clone_params(params: MlpParams) -> MlpParams:
    return MlpParams(
        [w.copy() for w in params.weights],
        [b.copy() for b in params.biases],
        params.output_activation,
    )


def _sigmoid(z):
    # tanh form avoids exp overflow for large negative inputs
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def forward(params: MlpParams, x) -> tuple[np.ndarray, ForwardCache]:
    """Evaluate the network on a vector or a (batch, features) matrix."""
    a = np.asarray(x, dtype=float)
    squeeze = a.ndim == 1
    if squeeze:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != params.weights[0].shape[0]:
        raise ShapeError(f"input shape {np.shape(x)} does not match first layer ({params.weights[0].shape[0]} inputs)")
    inputs, preacts = [], []
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(a)
        z = a @ w + b
        preacts.append(z)
        if i < n_layers - 1:
            a = np.maximum(z, 0.0)
        elif params.output_activation == "sigmoid":
            a = _sigmoid(z)
        else:
            a = z
    out = a[0] if squeeze else a
    return out, ForwardCache(params, inputs, preacts, a, squeeze)


def backward(params: MlpParams, cache: ForwardCache, output_grad):
    """Exact gradients of a scalar with gradient ``output_grad`` at the output.

    Returns (param_grads, input_grad) with param_grads a list of (dW, db)
    matching the parameter shapes. For batched caches, output_grad has the
    batch shape and gradients are summed over the batch.
    """
    if cache.params is not params:
        raise ContractError("cache was produced by a different parameter set")
    g = np.asarray(output_grad, dtype=float)
    if cache.squeeze:
        g = g[None, :]
    if g.shape != cache.output.shape:
        raise ShapeError(f"output_grad shape {g.shape} != output shape {cache.output.shape}")
    if params.output_activation == "sigmoid":
        y = cache.output
        g = g * y * (1.0 - y)
    grads = [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        if i < len(params.weights) - 1:
            g = g * (cache.preacts[i] > 0.0)
        dw = cache.inputs[i].T @ g
        db = g.sum(axis=0)
        grads[i] = (dw, db)
        g = g @ params.weights[i].T
    input_grad = g[0] if cache.squeeze else g
    return grads, input_grad


def finite_diff_grad(params: MlpParams, x, scalar_fn, step_scale: float = 1e-6):
    """Central-difference gradient of scalar_fn(forward(params, x)) per parameter.

    The step is scaled by each parameter's magnitude. Test oracle only; cost
    is two forward passes per parameter element.
    """
    grads = []
    for i in range(len(params.weights)):
        pair = []
        for arrays in (params.weights, params.biases):
            arr = arrays[i]
            g = np.zeros_like(arr)
            it = np.nditer(arr, flags=["multi_index"])
            for val in it:
                idx = it.multi_index
                h = step_scale * max(1.0, abs(float(val)))
                orig = arr[idx]
                arr[idx] = orig + h
                f_plus = float(scalar_fn(forward(params, x)[0]))
                arr[idx] = orig - h
                f_minus = float(scalar_fn(forward(params, x)[0]))
                arr[idx] = orig
                g[idx] = (f_plus - f_minus) / (2.0 * h)
            pair.append(g)
        grads.append((pair[0], pair[1]))
    return grads


def init_adam(params: MlpParams, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(params.weights, params.biases)]
    v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(params.weights, params.biases)]
    return AdamState(m=m, v=v, step=0, beta1=beta1, beta2=beta2, eps=eps)


def adam_update(params: MlpParams, grads, state: AdamState, lr: float):
    """One bias-corrected Adam step. Mutates params and state in place."""
    if lr <= 0:
        raise ConfigError(f"learning rate must be > 0, got {lr}")
    if len(grads) != len(params.weights):
        raise ShapeError("gradient structure does not match parameters")
    for gw, gb in grads:
        if not (np.isfinite(gw).all() and np.isfinite(gb).all()):
            raise NumericError("non-finite gradient")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for i, ((gw, gb), (mw, mb), (vw, vb)) in enumerate(zip(grads, state.m, state.v)):
        for arr, g, m, v in ((params.weights[i], gw, mw, vw), (params.biases[i], gb, mb, vb)):
            if g.shape != arr.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {arr.shape}")
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * np.square(g)
            arr -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def pack_params(params: MlpParams, prefix: str):
    """Flatten one network into (meta, arrays) for a checkpoint container."""
    meta = {
        "layer_sizes": params.layer_sizes,
        "output_activation": params.output_activation,
    }
    arrays = {}
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        arrays[f"{prefix}_w{i}"] = w
        arrays[f"{prefix}_b{i}"] = b
    return meta, arrays


def unpack_params(meta: dict, arrays, prefix: str) -> MlpParams:
    sizes = meta["layer_sizes"]
    weights = [np.asarray(arrays[f"{prefix}_w{i}"], dtype=float) for i in range(len(sizes) - 1)]
    biases = [np.asarray(arrays[f"{prefix}_b{i}"], dtype=float) for i in range(len(sizes) - 1)]
    params = MlpParams(weights, biases, meta["output_activation"])
    if params.layer_sizes != list(sizes):
        raise ShapeError(f"checkpoint arrays do not match recorded sizes {sizes}")
    return params


def pack_adam(state: AdamState, prefix: str):
    meta = {"step": state.step, "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps}
    arrays = {}
    for i, ((mw, mb), (vw, vb)) in enumerate(zip(state.m, state.v)):
        arrays[f"{prefix}_mw{i}"] = mw
        arrays[f"{prefix}_mb{i}"] = mb
        arrays[f"{prefix}_vw{i}"] = vw
        arrays[f"{prefix}_vb{i}"] = vb
    return meta, arrays


def unpack_adam(meta: dict, arrays, prefix: str, n_layers: int) -> AdamState:
    m = [(np.asarray(arrays[f"{prefix}_mw{i}"]), np.asarray(arrays[f"{prefix}_mb{i}"])) for i in range(n_layers)]
    v = [(np.asarray(arrays[f"{prefix}_vw{i}"]), np.asarray(arrays[f"{prefix}_vb{i}"])) for i in range(n_layers)]
    return AdamState(m=m, v=v, step=int(meta["step"]), beta1=float(meta["beta1"]),
                     beta2=float(meta["beta2"]), eps=float(meta["eps"]))
