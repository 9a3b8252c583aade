"""Recurrent building blocks, attention, gating, dropout and Adam.

Conventions
-----------
* LSTM gate blocks are laid out in the order input, forget, candidate, output
  along the last axis of the ``4 * hidden`` pre-activation.
* The layer-normalised LSTM normalises the input-to-hidden and the
  hidden-to-hidden pre-activations separately (each with its own gain and
  bias), and normalises the new cell before the output non-linearity.
* A context gate ``z`` weights the source-side stream by ``z`` and the
  target-side stream by ``1 - z``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, ParameterError
from .tensor import Parameter


def glorot(rng, shape):
    """Uniform in +-sqrt(6 / (fan_in + fan_out))."""
    limit = math.sqrt(6.0 / (shape[0] + shape[-1]))
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


class Module:
    """Owns a flat, ordered collection of named parameters."""

    def __init__(self, prefix):
        self.prefix = prefix
        self.params = {}

    def _add(self, name, data):
        p = Parameter(f"{self.prefix}.{name}", data)
        self.params[p.name] = p
        return p

    def _adopt(self, module):
        self.params.update(module.params)
        return module

    def parameters(self):
        return list(self.params.values())


class LstmCell(Module):
    def __init__(self, prefix, input_dim, hidden_dim, rng, layernorm=False):
        super().__init__(prefix)
        if input_dim < 1 or hidden_dim < 1:
            raise ParameterError("LSTM dimensions must be positive")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.layernorm = layernorm
        h4 = 4 * hidden_dim
        self.W = self._add("W", glorot(rng, (input_dim, h4)))
        self.U = self._add("U", glorot(rng, (hidden_dim, h4)))
        b = np.zeros(h4, dtype=np.float32)
        b[hidden_dim:2 * hidden_dim] = 1.0
        self.b = self._add("b", b)
        if layernorm:
            self.ln_x_gain = self._add("ln_x_gain", np.ones(h4, dtype=np.float32))
            self.ln_x_bias = self._add("ln_x_bias", np.zeros(h4, dtype=np.float32))
            self.ln_h_gain = self._add("ln_h_gain", np.ones(h4, dtype=np.float32))
            self.ln_h_bias = self._add("ln_h_bias", np.zeros(h4, dtype=np.float32))
            self.ln_c_gain = self._add("ln_c_gain", np.ones(hidden_dim, dtype=np.float32))
            self.ln_c_bias = self._add("ln_c_bias", np.zeros(hidden_dim, dtype=np.float32))

    @property
    def variant(self):
        return "layernorm" if self.layernorm else "plain"

    def project_inputs(self, x):
        """Input-to-hidden stream for ``x`` (..., input_dim); position-independent."""
        if x.shape[-1] != self.input_dim:
            raise DimensionError(f"{self.prefix}: input {x.shape} vs input_dim {self.input_dim}")
        xw = T.matmul(x, self.W)
        if self.layernorm:
            xw = T.layer_norm(xw, self.ln_x_gain, self.ln_x_bias)
        return xw

    def step_projected(self, xw, h, c, mask=None):
        """One recurrence step given the already projected input stream."""
        n = self.hidden_dim
        if h.shape[-1] != n or c.shape[-1] != n:
            raise DimensionError(f"{self.prefix}: state {h.shape}/{c.shape} vs hidden {n}")
        if mask is not None:
            h = mask.apply(h)
        hu = T.matmul(h, self.U)
        if self.layernorm:
            hu = T.layer_norm(hu, self.ln_h_gain, self.ln_h_bias)
        z = T.bias_add(T.add(xw, hu), self.b)
        i = T.sigmoid(T.narrow(z, 0, n))
        f = T.sigmoid(T.narrow(z, n, 2 * n))
        g = T.tanh(T.narrow(z, 2 * n, 3 * n))
        o = T.sigmoid(T.narrow(z, 3 * n, 4 * n))
        c_new = T.add(T.mul(f, c), T.mul(i, g))
        c_out = c_new
        if self.layernorm:
            c_out = T.layer_norm(c_new, self.ln_c_gain, self.ln_c_bias)
        h_new = T.mul(o, T.tanh(c_out))
        return h_new, c_new


def lstm_step(cell, x, h, c, mask=None):
    """Advance ``cell`` by one step; returns ``(h', c')``.

    ``mask``, when given, is a :class:`DropoutMask` applied to ``h`` before
    the recurrent matrix product.
    """
    return cell.step_projected(cell.project_inputs(T.as_tensor(x)), h, c, mask)


class EmbeddingTable(Module):
    def __init__(self, prefix, vocab_size, dim, rng):
        super().__init__(prefix)
        self.vocab_size = vocab_size
        self.dim = dim
        self.E = self._add("E", rng.normal(0.0, 0.1, size=(vocab_size, dim)).astype(np.float32))

    def lookup(self, ids):
        return T.take(self.E, ids)


class Linear(Module):
    def __init__(self, prefix, in_dim, out_dim, rng, bias=True):
        super().__init__(prefix)
        self.W = self._add("W", glorot(rng, (in_dim, out_dim)))
        self.b = self._add("b", np.zeros(out_dim, dtype=np.float32)) if bias else None

    def __call__(self, x):
        y = T.matmul(x, self.W)
        return T.bias_add(y, self.b) if self.b is not None else y


class AttentionModule(Module):
    """Additive attention: ``score_j = v . tanh(W a_j + U s + b)``."""

    def __init__(self, prefix, annotation_dim, state_dim, attention_dim, rng):
        super().__init__(prefix)
        self.attention_dim = attention_dim
        self.W = self._add("W", glorot(rng, (annotation_dim, attention_dim)))
        self.U = self._add("U", glorot(rng, (state_dim, attention_dim)))
        self.b = self._add("b", np.zeros(attention_dim, dtype=np.float32))
        self.v = self._add("v", glorot(rng, (attention_dim, 1)))

    def precompute(self, annotations):
        """Project annotations (B, S, A) once per source sentence."""
        return T.matmul(annotations, self.W)

    def __call__(self, state, annotations, projected=None, mask=None):
        if annotations.shape[1] < 1:
            raise ContractError("attention over an empty source")
        if projected is None:
            projected = self.precompute(annotations)
        q = T.bias_add(T.matmul(state, self.U), self.b)
        e = T.matmul(T.tanh(T.expand_add(projected, q)), self.v)
        scores = T.reshape(e, e.shape[:2])
        weights = T.softmax(scores, axis=-1, mask=mask)
        return T.weighted_sum(weights, annotations), weights


def attend(att, s, annotations, mask=None):
    """Attend from decoder state ``s`` over ``annotations``.

    Accepts a single state (H,) with annotations (S, A), or batched
    (B, H) with (B, S, A). Returns ``(context, weights)``.
    """
    s, annotations = T.as_tensor(s), T.as_tensor(annotations)
    if annotations.ndim == 2:
        if annotations.shape[0] < 1:
            raise ContractError("attention over an empty source")
        ctx, w = att(
            T.reshape(s, (1, s.shape[-1])),
            T.reshape(annotations, (1,) + annotations.shape),
            mask=None if mask is None else np.asarray(mask)[None],
        )
        return T.reshape(ctx, ctx.shape[1:]), T.reshape(w, w.shape[1:])
    return att(s, annotations, mask=mask)


class ContextGate(Module):
    """``z = sigmoid(E e + S s + C c + b)`` over (embedding, state, context)."""

    def __init__(self, prefix, embed_dim, state_dim, context_dim, out_dim, rng):
        super().__init__(prefix)
        self.E = self._add("E", glorot(rng, (embed_dim, out_dim)))
        self.S = self._add("S", glorot(rng, (state_dim, out_dim)))
        self.C = self._add("C", glorot(rng, (context_dim, out_dim)))
        self.b = self._add("b", np.zeros(out_dim, dtype=np.float32))

    def __call__(self, state, prev_embedding, context):
        pre = T.add(
            T.add(T.matmul(prev_embedding, self.E), T.matmul(state, self.S)),
            T.matmul(context, self.C),
        )
        return T.sigmoid(T.bias_add(pre, self.b))


def context_gate_apply(gate, source_context, target_context, *, state, prev_embedding, context):
    """Return ``(z * source_context, (1 - z) * target_context)``."""
    source_context, target_context = T.as_tensor(source_context), T.as_tensor(target_context)
    if source_context.shape != target_context.shape:
        raise DimensionError(
            f"context gate: {source_context.shape} vs {target_context.shape}"
        )
    z = gate(state, prev_embedding, context)
    if z.shape != source_context.shape:
        raise DimensionError(f"context gate output {z.shape} vs streams {source_context.shape}")
    one_minus = T.add(T.scale(z, -1.0), 1.0)
    return T.mul(z, source_context), T.mul(one_minus, target_context)


@dataclass
class DropoutMask:
    """One inverted-dropout mask, reused at every timestep of a sequence batch."""

    keep_prob: float
    values: np.ndarray

    def apply(self, h):
        if self.keep_prob == 1.0:
            return h
        return T.mul(h, T.Tensor(self.values))


def sample_mask(keep_prob, shape, rng):
    if not 0.0 < keep_prob <= 1.0:
        raise ParameterError(f"keep_prob must be in (0, 1], got {keep_prob}")
    if keep_prob == 1.0:
        return DropoutMask(1.0, np.ones(shape, dtype=np.float32))
    keep = rng.random(shape) < keep_prob
    return DropoutMask(keep_prob, (keep / keep_prob).astype(np.float32))


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def init(cls, params, **hyper):
        state = cls(**hyper)
        for p in params:
            state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        return state


def adam_step(state, params):
    """Apply one bias-corrected Adam update in place; gradients are left untouched."""
    params = list(params)
    for p in params:
        if p.name not in state.m:
            raise ContractError(f"Adam state has no moments for parameter {p.name!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p in params:
        g = p.grad
        m = state.m[p.name]
        v = state.v[p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= step.astype(p.data.dtype)
    return params
