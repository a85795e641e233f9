"""Small multilayer perceptron with hand-written derivatives.

Two kinds of derivative are needed to train the state/dynamics pair:

* forward mode with respect to the scalar input ``t``: every activation
  carries a tangent alongside its value, seeded with ``dt/dt = 1``;
* reverse mode with respect to the parameters, run over the *dual* forward
  pass so that losses built from ``d(net)/dt`` can be differentiated too.

Weights are stored so that a layer maps a row batch as ``a @ W + b``; the
weight matrix of layer ``i`` therefore has shape
``(layer_sizes[i], layer_sizes[i + 1])``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ArgumentError, TapeReuseError

ACTIVATIONS = ("tanh", "identity")
CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class MlpNetwork:
    layer_sizes: tuple[int, ...]
    activation: str
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ArgumentError(f"invalid layer sizes {self.layer_sizes!r}")
        if self.activation not in ACTIVATIONS:
            raise ArgumentError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ArgumentError("need one weight matrix and one bias per layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ArgumentError(
                    f"layer {i}: expected W{(sizes[i], sizes[i + 1])} and "
                    f"b({sizes[i + 1]},), got W{w.shape} and b{b.shape}"
                )
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def params(self) -> list[np.ndarray]:
        """Flat parameter list ``[W0, b0, W1, b1, ...]``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_params(self, params) -> "MlpNetwork":
        params = list(params)
        return MlpNetwork(self.layer_sizes, self.activation,
                          tuple(params[0::2]), tuple(params[1::2]))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())


@dataclass(frozen=True)
class ParamGradient:
    """Gradient of a scalar loss, shaped like the parameters of one network."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    @classmethod
    def zeros_like(cls, net: MlpNetwork) -> "ParamGradient":
        return cls(tuple(np.zeros_like(w) for w in net.weights),
                   tuple(np.zeros_like(b) for b in net.biases))

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def __add__(self, other: "ParamGradient") -> "ParamGradient":
        return ParamGradient(tuple(a + b for a, b in zip(self.weights, other.weights)),
                             tuple(a + b for a, b in zip(self.biases, other.biases)))

    def __mul__(self, scale: float) -> "ParamGradient":
        return ParamGradient(tuple(scale * w for w in self.weights),
                             tuple(scale * b for b in self.biases))

    __rmul__ = __mul__


@dataclass
class Tape:
    """Intermediates of one forward evaluation, consumed by one backward pass.

    ``values[i]`` is the input to layer ``i`` (``values[0]`` is the batch
    itself, ``values[-1]`` the output). When the pass was seeded with an input
    tangent, ``tangents`` mirrors ``values`` and ``pre_tangents[i]`` holds the
    tangent of layer ``i``'s pre-activation.
    """

    values: list[np.ndarray]
    tangents: list[np.ndarray] | None = None
    pre_tangents: list[np.ndarray] | None = None
    used: bool = field(default=False)

    @property
    def output(self) -> np.ndarray:
        return self.values[-1]

    @property
    def output_tangent(self) -> np.ndarray | None:
        return None if self.tangents is None else self.tangents[-1]


def init_params(layer_sizes, activation: str = "tanh", seed: int = 0) -> MlpNetwork:
    """Glorot-uniform weights and zero biases, reproducible from ``seed``."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ArgumentError(f"invalid layer sizes {layer_sizes!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpNetwork(sizes, activation, tuple(weights), tuple(biases))


def _check_inputs(net: MlpNetwork, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ArgumentError(
            f"expected inputs of shape (B, {net.in_dim}), got {x.shape}")
    return x


def record(net: MlpNetwork, inputs, input_tangent=None) -> Tape:
    """Run the network and keep everything the backward pass needs.

    ``input_tangent`` (same shape as ``inputs``) switches on forward-mode
    propagation; the output tangent is then ``tape.output_tangent``.
    """
    a = _check_inputs(net, inputs)
    values = [a]
    tangents = pre_tangents = None
    da = None
    if input_tangent is not None:
        da = np.ascontiguousarray(
            np.broadcast_to(np.asarray(input_tangent, dtype=np.float64), a.shape))
        tangents, pre_tangents = [da], []
    last = net.n_layers - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w
        dz = None if da is None else da @ w
        z += b
        if i < last and net.activation == "tanh":
            a = np.tanh(z, out=z)
            if dz is not None:
                da = _kernels.tanh_tangent(a, dz)
        else:
            a, da = z, dz
        values.append(a)
        if tangents is not None:
            pre_tangents.append(dz)
            tangents.append(da)
    return Tape(values, tangents, pre_tangents)


def forward(net: MlpNetwork, inputs) -> np.ndarray:
    return record(net, inputs).output


def input_time_derivative(net: MlpNetwork, times) -> np.ndarray:
    """Exact ``d net(t) / dt`` for a scalar-input network, by dual numbers."""
    if net.in_dim != 1:
        raise ArgumentError(f"time derivative needs a 1-input network, got {net.in_dim}")
    t = _check_inputs(net, times)
    return record(net, t, np.ones_like(t)).output_tangent


def backward(net: MlpNetwork, tape: Tape, loss_grad, tangent_grad=None,
             return_input_grad: bool = False):
    """Reverse-mode sweep over a recorded pass.

    ``loss_grad`` is dL/d(output); ``tangent_grad`` is dL/d(output tangent)
    and is only allowed when the tape was recorded with an input tangent.
    Returns a :class:`ParamGradient`, or ``(ParamGradient, dL/d(inputs))``
    when ``return_input_grad`` is set.
    """
    if tape.used:
        raise TapeReuseError("tape already consumed by a backward pass")
    g = np.asarray(loss_grad, dtype=np.float64)
    if g.shape != tape.output.shape:
        raise ArgumentError(f"loss_grad shape {g.shape} != output shape {tape.output.shape}")
    gd = None
    if tangent_grad is not None:
        if tape.tangents is None:
            raise ArgumentError("tangent_grad given but tape has no tangents")
        gd = np.asarray(tangent_grad, dtype=np.float64)
        if gd.shape != g.shape:
            raise ArgumentError(f"tangent_grad shape {gd.shape} != output shape {g.shape}")
    tape.used = True

    n = net.n_layers
    gw: list[np.ndarray] = [None] * n
    gb: list[np.ndarray] = [None] * n
    for i in range(n - 1, -1, -1):
        w = net.weights[i]
        if i < n - 1 and net.activation == "tanh":
            a = tape.values[i + 1]
            if gd is not None:
                # da = (1 - a^2) dz, so the tangent path also feeds back into z
                gz, gd, gb[i] = _kernels.tanh_backward_dual(g, gd, a, tape.pre_tangents[i])
            else:
                gz, gb[i] = _kernels.tanh_backward(g, a)
        else:
            gz = g
            gb[i] = gz.sum(axis=0)
        gw_i = tape.values[i].T @ gz
        if gd is not None:
            gw_i += tape.tangents[i].T @ gd
        gw[i] = gw_i
        if i > 0 or return_input_grad:
            g = gz @ w.T
            gd = None if gd is None else gd @ w.T
    grads = ParamGradient(tuple(gw), tuple(gb))
    if return_input_grad:
        return grads, g
    return grads


def equation_terms(state_net: MlpNetwork, dyn_net: MlpNetwork, feature_map, times,
                   with_grad: bool = True):
    """Per-state residual losses at ``times`` and, optionally, their gradients.

    The residual is ``d state_net/dt - dyn_net(features(state_net(t)))``; the
    loss for state ``i`` is the mean of its squared residual. Returns
    ``(losses, state_grad, dyn_grad)`` where the gradients are those of the
    summed loss (``None`` when ``with_grad`` is false).
    """
    if dyn_net.in_dim != feature_map.out_dim:
        raise ArgumentError(
            f"dynamics net takes {dyn_net.in_dim} inputs but features have {feature_map.out_dim}")
    if feature_map.in_dim != state_net.out_dim or dyn_net.out_dim != state_net.out_dim:
        raise ArgumentError("state net, feature map and dynamics net dimensions disagree")
    if state_net.in_dim != 1:
        raise ArgumentError("state net must take the scalar time as input")
    t = _check_inputs(state_net, times)
    s_tape = record(state_net, t, np.ones_like(t))
    states = s_tape.output
    feats = feature_map(states)
    f_tape = record(dyn_net, feats)
    resid = s_tape.output_tangent - f_tape.output
    losses = np.mean(resid * resid, axis=0)
    if not with_grad:
        return losses, None, None
    g_resid = (2.0 / t.shape[0]) * resid
    dyn_grad, g_feats = backward(dyn_net, f_tape, -g_resid, return_input_grad=True)
    g_states = feature_map.vjp(states, g_feats)
    state_grad = backward(state_net, s_tape, g_states, g_resid)
    return losses, state_grad, dyn_grad


def grad_through_composition(state_net: MlpNetwork, dyn_net: MlpNetwork, feature_map, times):
    """Gradients of the summed equation loss with respect to both networks."""
    _, state_grad, dyn_grad = equation_terms(state_net, dyn_net, feature_map, times)
    return state_grad, dyn_grad


# -- checkpoints --------------------------------------------------------------

def network_to_dict(net: MlpNetwork, seed=None, scaling=None) -> dict:
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "layer_sizes": list(net.layer_sizes),
        "activation": net.activation,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "seed": seed,
        "scaling": scaling,
    }


def network_from_dict(doc: dict) -> MlpNetwork:
    version = doc.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ArgumentError(f"unsupported checkpoint format_version {version!r}")
    return MlpNetwork(
        tuple(doc["layer_sizes"]),
        doc["activation"],
        tuple(np.array(w, dtype=np.float64).reshape(a, b) for w, a, b in
              zip(doc["weights"], doc["layer_sizes"][:-1], doc["layer_sizes"][1:])),
        tuple(np.array(b, dtype=np.float64) for b in doc["biases"]),
    )


def dumps_checkpoint(net: MlpNetwork, seed=None, scaling=None) -> str:
    return json.dumps(network_to_dict(net, seed, scaling), indent=1) + "\n"


def save_checkpoint(path, net: MlpNetwork, seed=None, scaling=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_checkpoint(net, seed, scaling))


def load_checkpoint(path):
    """Return ``(network, seed, scaling)`` from a checkpoint file."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return network_from_dict(doc), doc.get("seed"), doc.get("scaling")
