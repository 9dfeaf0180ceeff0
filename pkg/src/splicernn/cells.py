"""Recurrent cells with hand-written backpropagation through time.

Three cell kinds are provided: a peephole LSTM (forget gate, diagonal
peepholes, output-gate peephole reading the updated cell), a GRU and an
identity-initialized ReLU RNN ("iRNN").

Conventions
-----------
Inputs are batched, row-vector style: ``x_t`` has shape ``(N, d)`` and a whole
sequence ``(N, T, d)``. Weight matrices map right-to-left (``W_x`` is
``(k*h, d)`` and is applied as ``x @ W_x.T``). Gate blocks are stacked along
the first axis of ``W_x``/``W_h``/``b``:

* LSTM: ``[input i, forget f, candidate g, output o]``
* GRU: ``[update z, reset r, candidate]``

so ``W_x[:h]`` of an LSTM is the input-gate matrix ``W_xi`` and so on. The
per-gate views are exposed through :meth:`LstmParams.gate` and friends.

Each ``*_step`` returns the new :class:`CellState` together with a cache of
the activations that the matching ``*_backward`` consumes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    DEFAULT_DTYPE,
    GLOROT,
    identity,
    init_matrix,
    relu,
    sigmoid,
)

LSTM_GATES = ("i", "f", "c", "o")
GRU_GATES = ("z", "r", "h")


@dataclass
class CellState:
    h: np.ndarray
    c: np.ndarray | None = None

    @classmethod
    def zeros(cls, batch: int, hidden: int, with_cell: bool = False, dtype=DEFAULT_DTYPE) -> "CellState":
        h = np.zeros((batch, hidden), dtype=dtype)
        return cls(h, np.zeros_like(h) if with_cell else None)


class _Params:
    """Named mapping of parameter arrays shared by all cell kinds."""

    names: tuple[str, ...] = ()
    blocks: int = 1

    def __init__(self, **arrays):
        missing = set(self.names) - set(arrays)
        if missing:
            raise ValueError(f"missing parameters {sorted(missing)}")
        self.arrays = {name: np.asarray(arrays[name]) for name in self.names}
        self._check()

    @property
    def input_size(self) -> int:
        return self.arrays["W_x"].shape[1]

    @property
    def hidden_size(self) -> int:
        return self.arrays["W_h"].shape[1]

    def __getitem__(self, name):
        return self.arrays[name]

    def __setitem__(self, name, value):
        if np.shape(value) != self.arrays[name].shape:
            raise ValueError(f"{name}: expected shape {self.arrays[name].shape}, got {np.shape(value)}")
        self.arrays[name] = np.asarray(value)

    def _check(self):
        h = self.hidden_size
        k = self.blocks
        d = self.input_size
        want = {"W_x": (k * h, d), "W_h": (k * h, h), "b": (k * h,)}
        for name, shape in want.items():
            if self.arrays[name].shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {self.arrays[name].shape}")
        for name in self.names:
            if name not in want and self.arrays[name].shape != (h,):
                raise ValueError(f"{name}: expected shape {(h,)}, got {self.arrays[name].shape}")

    def num_parameters(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.arrays.items()}

    def copy(self):
        return type(self)(**{k: v.copy() for k, v in self.arrays.items()})

    def _block(self, name: str, gates: tuple[str, ...], gate: str) -> np.ndarray:
        h = self.hidden_size
        j = gates.index(gate)
        return self.arrays[name][j * h:(j + 1) * h]


class LstmParams(_Params):
    names = ("W_x", "W_h", "b", "w_ci", "w_cf", "w_co")
    blocks = 4

    def gate(self, gate: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(W_x?, W_h?, b_?)`` views for gate ``i``, ``f``, ``c`` or ``o``."""
        return tuple(self._block(n, LSTM_GATES, gate) for n in ("W_x", "W_h", "b"))

    @classmethod
    def init(cls, d: int, h: int, rng: np.random.Generator, forget_bias: float = 1.0,
             dtype=DEFAULT_DTYPE) -> "LstmParams":
        W_x = np.vstack([init_matrix(h, d, GLOROT, rng, dtype) for _ in LSTM_GATES])
        W_h = np.vstack([init_matrix(h, h, GLOROT, rng, dtype) for _ in LSTM_GATES])
        b = np.zeros(4 * h, dtype=dtype)
        b[h:2 * h] = forget_bias
        zeros = np.zeros(h, dtype=dtype)
        return cls(W_x=W_x, W_h=W_h, b=b, w_ci=zeros.copy(), w_cf=zeros.copy(), w_co=zeros.copy())


class GruParams(_Params):
    names = ("W_x", "W_h", "b")
    blocks = 3

    def gate(self, gate: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(W_x?, W_h?, b_?)`` views for gate ``z``, ``r`` or ``h`` (candidate)."""
        return tuple(self._block(n, GRU_GATES, gate) for n in ("W_x", "W_h", "b"))

    @classmethod
    def init(cls, d: int, h: int, rng: np.random.Generator, dtype=DEFAULT_DTYPE) -> "GruParams":
        W_x = np.vstack([init_matrix(h, d, GLOROT, rng, dtype) for _ in GRU_GATES])
        W_h = np.vstack([init_matrix(h, h, GLOROT, rng, dtype) for _ in GRU_GATES])
        return cls(W_x=W_x, W_h=W_h, b=np.zeros(3 * h, dtype=dtype))


class IrnnParams(_Params):
    names = ("W_x", "W_h", "b")
    blocks = 1

    @classmethod
    def init(cls, d: int, h: int, rng: np.random.Generator, scale: float = 1.0,
             dtype=DEFAULT_DTYPE) -> "IrnnParams":
        return cls(
            W_x=init_matrix(h, d, GLOROT, rng, dtype),
            W_h=init_matrix(h, h, identity(scale), dtype=dtype),
            b=np.zeros(h, dtype=dtype),
        )


def _check_input(params: _Params, x: np.ndarray, state: CellState):
    if x.ndim != 2 or x.shape[1] != params.input_size:
        raise ValueError(f"input of shape {x.shape} does not match cell input size {params.input_size}")
    if state.h.shape != (x.shape[0], params.hidden_size):
        raise ValueError(f"state of shape {state.h.shape} does not match batch {x.shape[0]} "
                         f"and hidden size {params.hidden_size}")


def _check_sequence(params: _Params, xs: np.ndarray):
    if xs.ndim != 3 or xs.shape[2] != params.input_size:
        raise ValueError(f"sequence of shape {xs.shape} does not match cell input size {params.input_size}")


def _upstream(d_h: np.ndarray, caches: list, hidden: int) -> np.ndarray:
    """Normalize the upstream gradient to shape ``(N, T, h)``.

    A 2-d ``d_h`` is the gradient at the final hidden state only.
    """
    T = len(caches)
    if T == 0:
        raise ValueError("empty cache list")
    if d_h.ndim == 2:
        full = np.zeros((d_h.shape[0], T, hidden), dtype=d_h.dtype)
        full[:, -1] = d_h
        return full
    if d_h.shape[1] != T:
        raise ValueError(f"gradient covers {d_h.shape[1]} steps but {T} caches were given")
    return d_h


def _input_grads(params: _Params, caches: list, d_pre: np.ndarray, grads: dict):
    xs = np.stack([cache.x for cache in caches], axis=1)
    grads["W_x"] = np.einsum("ntk,ntd->kd", d_pre, xs)
    grads["b"] = d_pre.sum(axis=(0, 1))
    return d_pre @ params["W_x"]


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class LstmCache:
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray


def _lstm_advance(params: LstmParams, x, a_x, h, c):
    H = params.hidden_size
    a = a_x + h @ params["W_h"].T
    i = sigmoid(a[:, :H] + params["w_ci"] * c)
    f = sigmoid(a[:, H:2 * H] + params["w_cf"] * c)
    g = np.tanh(a[:, 2 * H:3 * H])
    c_new = f * c + i * g
    o = sigmoid(a[:, 3 * H:] + params["w_co"] * c_new)
    tanh_c = np.tanh(c_new)
    h_new = o * tanh_c
    return CellState(h_new, c_new), LstmCache(x, h, c, i, f, g, o, c_new, tanh_c)


def lstm_step(params: LstmParams, x_t: np.ndarray, state: CellState) -> tuple[CellState, LstmCache]:
    x_t = np.atleast_2d(x_t)
    _check_input(params, x_t, state)
    if state.c is None:
        raise ValueError("LSTM state needs a cell vector")
    a_x = x_t @ params["W_x"].T + params["b"]
    return _lstm_advance(params, x_t, a_x, state.h, state.c)


def lstm_forward(params: LstmParams, xs: np.ndarray, state: CellState | None = None):
    """Run the cell over ``xs`` of shape ``(N, T, d)``.

    Returns the hidden sequence ``(N, T, h)`` and the list of step caches.
    """
    _check_sequence(params, xs)
    N, T, _ = xs.shape
    if state is None:
        state = CellState.zeros(N, params.hidden_size, with_cell=True, dtype=xs.dtype)
    a_x = xs @ params["W_x"].T + params["b"]
    hs = np.empty((N, T, params.hidden_size), dtype=xs.dtype)
    caches = []
    for t in range(T):
        state, cache = _lstm_advance(params, xs[:, t], a_x[:, t], state.h, state.c)
        hs[:, t] = state.h
        caches.append(cache)
    return hs, caches


def lstm_backward(params: LstmParams, caches: list[LstmCache], d_h: np.ndarray):
    """Backpropagate through a full LSTM sequence.

    ``d_h`` is the loss gradient w.r.t. each emitted hidden state ``(N, T, h)``,
    or ``(N, h)`` for the final state only. Returns ``(d_xs, grads)``.
    """
    H = params.hidden_size
    d_h = _upstream(d_h, caches, H)
    N, T, _ = d_h.shape
    W_h = params["W_h"]
    w_ci, w_cf, w_co = params["w_ci"], params["w_cf"], params["w_co"]
    grads = {"W_h": np.zeros_like(W_h), "w_ci": np.zeros_like(w_ci),
             "w_cf": np.zeros_like(w_cf), "w_co": np.zeros_like(w_co)}
    d_pre = np.empty((N, T, 4 * H), dtype=d_h.dtype)
    dh_next = np.zeros((N, H), dtype=d_h.dtype)
    dc_next = np.zeros((N, H), dtype=d_h.dtype)
    for t in range(T - 1, -1, -1):
        k = caches[t]
        dh = d_h[:, t] + dh_next
        da_o = dh * k.tanh_c * k.o * (1.0 - k.o)
        dc = dc_next + dh * k.o * (1.0 - k.tanh_c ** 2) + da_o * w_co
        da_f = dc * k.c_prev * k.f * (1.0 - k.f)
        da_i = dc * k.g * k.i * (1.0 - k.i)
        da_g = dc * k.i * (1.0 - k.g ** 2)
        grads["w_co"] += (da_o * k.c).sum(axis=0)
        grads["w_ci"] += (da_i * k.c_prev).sum(axis=0)
        grads["w_cf"] += (da_f * k.c_prev).sum(axis=0)
        da = np.concatenate([da_i, da_f, da_g, da_o], axis=1)
        d_pre[:, t] = da
        grads["W_h"] += da.T @ k.h_prev
        dh_next = da @ W_h
        dc_next = dc * k.f + da_i * w_ci + da_f * w_cf
    d_xs = _input_grads(params, caches, d_pre, grads)
    return d_xs, grads


# ---------------------------------------------------------------------------
# GRU
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class GruCache:
    x: np.ndarray
    h_prev: np.ndarray
    z: np.ndarray
    r: np.ndarray
    cand: np.ndarray


def _gru_advance(params: GruParams, x, a_x, h):
    H = params.hidden_size
    W_h = params["W_h"]
    a_zr = a_x[:, :2 * H] + h @ W_h[:2 * H].T
    z = sigmoid(a_zr[:, :H])
    r = sigmoid(a_zr[:, H:])
    cand = np.tanh(a_x[:, 2 * H:] + (r * h) @ W_h[2 * H:].T)
    h_new = (1.0 - z) * h + z * cand
    return CellState(h_new), GruCache(x, h, z, r, cand)


def gru_step(params: GruParams, x_t: np.ndarray, state: CellState) -> tuple[CellState, GruCache]:
    x_t = np.atleast_2d(x_t)
    _check_input(params, x_t, state)
    a_x = x_t @ params["W_x"].T + params["b"]
    return _gru_advance(params, x_t, a_x, state.h)


def gru_forward(params: GruParams, xs: np.ndarray, state: CellState | None = None):
    _check_sequence(params, xs)
    N, T, _ = xs.shape
    if state is None:
        state = CellState.zeros(N, params.hidden_size, dtype=xs.dtype)
    a_x = xs @ params["W_x"].T + params["b"]
    hs = np.empty((N, T, params.hidden_size), dtype=xs.dtype)
    caches = []
    for t in range(T):
        state, cache = _gru_advance(params, xs[:, t], a_x[:, t], state.h)
        hs[:, t] = state.h
        caches.append(cache)
    return hs, caches


def gru_backward(params: GruParams, caches: list[GruCache], d_h: np.ndarray):
    H = params.hidden_size
    d_h = _upstream(d_h, caches, H)
    N, T, _ = d_h.shape
    W_h = params["W_h"]
    W_hzr, W_hh = W_h[:2 * H], W_h[2 * H:]
    grads = {"W_h": np.zeros_like(W_h)}
    d_pre = np.empty((N, T, 3 * H), dtype=d_h.dtype)
    dh_next = np.zeros((N, H), dtype=d_h.dtype)
    for t in range(T - 1, -1, -1):
        k = caches[t]
        dh = d_h[:, t] + dh_next
        da_z = dh * (k.cand - k.h_prev) * k.z * (1.0 - k.z)
        da_c = dh * k.z * (1.0 - k.cand ** 2)
        d_rh = da_c @ W_hh
        da_r = d_rh * k.h_prev * k.r * (1.0 - k.r)
        da_zr = np.concatenate([da_z, da_r], axis=1)
        grads["W_h"][:2 * H] += da_zr.T @ k.h_prev
        grads["W_h"][2 * H:] += da_c.T @ (k.r * k.h_prev)
        d_pre[:, t, :2 * H] = da_zr
        d_pre[:, t, 2 * H:] = da_c
        dh_next = dh * (1.0 - k.z) + d_rh * k.r + da_zr @ W_hzr
    d_xs = _input_grads(params, caches, d_pre, grads)
    return d_xs, grads


# ---------------------------------------------------------------------------
# iRNN
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class IrnnCache:
    x: np.ndarray
    h_prev: np.ndarray
    pre: np.ndarray


def _irnn_advance(params: IrnnParams, x, a_x, h):
    pre = a_x + h @ params["W_h"].T
    return CellState(relu(pre)), IrnnCache(x, h, pre)


def irnn_step(params: IrnnParams, x_t: np.ndarray, state: CellState) -> tuple[CellState, IrnnCache]:
    x_t = np.atleast_2d(x_t)
    _check_input(params, x_t, state)
    a_x = x_t @ params["W_x"].T + params["b"]
    return _irnn_advance(params, x_t, a_x, state.h)


def irnn_forward(params: IrnnParams, xs: np.ndarray, state: CellState | None = None):
    _check_sequence(params, xs)
    N, T, _ = xs.shape
    if state is None:
        state = CellState.zeros(N, params.hidden_size, dtype=xs.dtype)
    a_x = xs @ params["W_x"].T + params["b"]
    hs = np.empty((N, T, params.hidden_size), dtype=xs.dtype)
    caches = []
    for t in range(T):
        state, cache = _irnn_advance(params, xs[:, t], a_x[:, t], state.h)
        hs[:, t] = state.h
        caches.append(cache)
    return hs, caches


def irnn_backward(params: IrnnParams, caches: list[IrnnCache], d_h: np.ndarray):
    # relu subgradient at exactly 0 is taken as 0
    H = params.hidden_size
    d_h = _upstream(d_h, caches, H)
    N, T, _ = d_h.shape
    W_h = params["W_h"]
    grads = {"W_h": np.zeros_like(W_h)}
    d_pre = np.empty((N, T, H), dtype=d_h.dtype)
    dh_next = np.zeros((N, H), dtype=d_h.dtype)
    for t in range(T - 1, -1, -1):
        k = caches[t]
        da = (d_h[:, t] + dh_next) * (k.pre > 0)
        d_pre[:, t] = da
        grads["W_h"] += da.T @ k.h_prev
        dh_next = da @ W_h
    d_xs = _input_grads(params, caches, d_pre, grads)
    return d_xs, grads


@dataclass(frozen=True)
class CellKind:
    name: str
    params: type
    forward: object
    backward: object
    step: object
    has_cell_state: bool = False
    gates: tuple[str, ...] = field(default=())


CELL_KINDS = {
    "lstm": CellKind("lstm", LstmParams, lstm_forward, lstm_backward, lstm_step, True, LSTM_GATES),
    "gru": CellKind("gru", GruParams, gru_forward, gru_backward, gru_step, False, GRU_GATES),
    "irnn": CellKind("irnn", IrnnParams, irnn_forward, irnn_backward, irnn_step, False),
}


def parameter_count(kind: str, d: int, h: int) -> int:
    """Closed-form number of trainable scalars in one layer."""
    if kind == "lstm":
        return 4 * h * (d + h) + 3 * h + 4 * h
    if kind == "gru":
        return 3 * h * (d + h) + 3 * h
    if kind == "irnn":
        return h * (d + h) + h
    raise ValueError(f"unknown cell kind {kind!r}")
