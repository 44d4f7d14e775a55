"""LIF-family spiking neurons with arctan surrogate gradients.

All neuron kinds share one discrete membrane update::

    u[t] = k * (u[t-1] * (1 - o[t-1]) + v_reset * o[t-1]) + I[t]
    o[t] = H(u[t] - v_th)

where the decay ``k`` is ``(tau - 1) / tau`` for LIF and LIAF, ``1`` for IF and
``sigmoid(a)`` for PLIF with a trainable logit ``a``. LIAF emits ``selu(u[t])``
instead of ``o[t]`` but still resets on the binary threshold crossing.

In *soft* mode the Heaviside ``H`` is replaced by its smooth approximation
``g`` everywhere in the forward pass, which makes the whole unrolled layer
differentiable and lets finite differences check the backward pass exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

KINDS = ("LIF", "IF", "PLIF", "LIAF")

SELU_ALPHA = 1.6732632423543772848170429916717
SELU_SCALE = 1.0507009873554804934193349852946


@dataclass(frozen=True)
class NeuronParams:
    v_th: float = 1.0
    v_reset: float = 0.0
    tau: float = 2.0
    alpha: float = 2.0
    kind: str = "LIF"
    soft: bool = False
    detach_reset: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown neuron kind {self.kind!r} (valid: {', '.join(KINDS)})")
        if self.kind in ("LIF", "LIAF") and not self.tau > 1:
            raise ValueError("tau must be > 1 for LIF/LIAF")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")


@dataclass
class NeuronState:
    u: np.ndarray
    o: np.ndarray  # previous step's reset signal (binary, or g(.) in soft mode)
    a: float = 0.0  # PLIF decay logit

    @classmethod
    def zeros(cls, shape, dtype=np.float64, a: float = 0.0) -> "NeuronState":
        return cls(np.zeros(shape, dtype), np.zeros(shape, dtype), a)


def heaviside_fwd(x, v_th: float = 0.0):
    """1 where ``x >= v_th`` else 0, in the dtype of ``x``."""
    x = np.asarray(x)
    return (x >= v_th).astype(x.dtype if x.dtype.kind == "f" else np.float64)


def surrogate_fn(x, alpha: float):
    """Smooth step ``g(x) = arctan(pi/2 * alpha * x) / pi + 1/2``."""
    return np.arctan((np.pi / 2) * alpha * x) / np.pi + 0.5


def surrogate_grad(x, alpha: float):
    """``g'(x) = alpha / (2 * (1 + (pi/2 * alpha * x)^2))``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return alpha / (2.0 * (1.0 + ((np.pi / 2) * alpha * x) ** 2))


def selu(x):
    return SELU_SCALE * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0)))


def selu_grad(x):
    return SELU_SCALE * np.where(x > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(x, 0)))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def decay_factor(params: NeuronParams, a: float = 0.0) -> float:
    if params.kind == "IF":
        return 1.0
    if params.kind == "PLIF":
        return float(sigmoid(a))
    return (params.tau - 1.0) / params.tau


def plif_logit(tau: float) -> float:
    """Logit ``a`` with ``sigmoid(a) == (tau - 1) / tau``."""
    k = (tau - 1.0) / tau
    return math.log(k / (1.0 - k))


def _fire(u, params: NeuronParams):
    if params.soft:
        return surrogate_fn(u - params.v_th, params.alpha)
    return heaviside_fwd(u, params.v_th)


def _update(state: NeuronState, current, params: NeuronParams, k: float):
    current = np.asarray(current)
    if current.shape != state.u.shape:
        raise ValueError(f"shape mismatch: state {state.u.shape} vs input {current.shape}")
    if params.v_reset == 0.0:
        carried = state.u * (1 - state.o)
    else:
        carried = state.u * (1 - state.o) + params.v_reset * state.o
    u = k * carried + current
    return u, _fire(u, params)


def lif_step(state: NeuronState, current, params: NeuronParams):
    u, o = _update(state, current, params, (params.tau - 1.0) / params.tau)
    return o, NeuronState(u, o, state.a)


def if_step(state: NeuronState, current, params: NeuronParams):
    u, o = _update(state, current, params, 1.0)
    return o, NeuronState(u, o, state.a)


def plif_step(state: NeuronState, current, params: NeuronParams):
    u, o = _update(state, current, params, float(sigmoid(state.a)))
    return o, NeuronState(u, o, state.a)


def liaf_step(state: NeuronState, current, params: NeuronParams):
    u, o = _update(state, current, params, (params.tau - 1.0) / params.tau)
    return selu(u), NeuronState(u, o, state.a)


STEP = {"LIF": lif_step, "IF": if_step, "PLIF": plif_step, "LIAF": liaf_step}


@dataclass
class Trace:
    """Per-step membrane values kept for the backward pass."""

    u: np.ndarray  # T x ...
    o: np.ndarray  # T x ... reset signal
    k: float
    params: NeuronParams


def unroll(currents: np.ndarray, params: NeuronParams, a: float = 0.0, decay: float | None = None) -> tuple[np.ndarray, Trace]:
    """Run a layer of neurons over the leading time axis from a zero state.

    ``decay`` overrides the kind's decay factor (``0`` cuts the temporal
    carry entirely).
    """
    k = decay_factor(params, a) if decay is None else decay
    T = currents.shape[0]
    us = np.empty_like(currents)
    os_ = np.empty_like(currents)
    u = np.zeros_like(currents[0])
    o = np.zeros_like(currents[0])
    for t in range(T):
        if params.v_reset == 0.0:
            u = k * (u * (1 - o)) + currents[t]
        else:
            u = k * (u * (1 - o) + params.v_reset * o) + currents[t]
        o = _fire(u, params)
        us[t] = u
        os_[t] = o
    out = selu(us) if params.kind == "LIAF" else os_
    return out, Trace(us, os_, k, params)


def unroll_backward(grad_out: np.ndarray, trace: Trace) -> tuple[np.ndarray, float]:
    """Backpropagate through time; returns (grad wrt currents, grad wrt decay k).

    Spatial path: dL/du[t] gets dL/do[t] * g'(u[t] - v_th).
    Temporal path: dL/du[t] also receives dL/du[t+1] * k * (1 - o[t]), and,
    unless ``detach_reset``, the reset-mask path through o[t].
    """
    p = trace.params
    us, os_, k = trace.u, trace.o, trace.k
    T = us.shape[0]
    grad_in = np.empty_like(us)
    grad_k = 0.0
    carry = np.zeros_like(us[0])  # dL/du[t+1]
    for t in range(T - 1, -1, -1):
        u, o = us[t], os_[t]
        sg = surrogate_grad(u - p.v_th, p.alpha)
        if p.kind == "LIAF":
            g = grad_out[t] * selu_grad(u)
        else:
            g = grad_out[t] * sg
        if t < T - 1:
            g = g + carry * (k * (1 - o))
            if not p.detach_reset:
                g = g + carry * (k * (p.v_reset - u)) * sg
        grad_in[t] = g
        if t > 0:
            prev = us[t - 1] * (1 - os_[t - 1]) + p.v_reset * os_[t - 1]
            grad_k += float(np.sum(g * prev))
        carry = g
    return grad_in, grad_k
