"""LSTM and GRU cells with backpropagation through time.

Cells are the standard formulations (LSTM without peepholes; GRU with the
update gate blending h' = (1-z) h + z h_tilde). Sequences run from an
all-zero initial state; ``return_sequences`` selects all hidden states or
only the final one.
"""

from dataclasses import dataclass

import numpy as np

from .errors import EmptySequenceError, ShapeError
from .layers import glorot_uniform


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass
class RecurrentState:
    """Hidden state h, plus cell state c for LSTM."""
    h: np.ndarray
    c: np.ndarray | None = None


class _RecurrentBase:
    def __init__(self, input_size, units, return_sequences):
        self.input_size = int(input_size)
        self.units = int(units)
        self.return_sequences = bool(return_sequences)

    def initial_state(self, dtype=np.float32):
        h = np.zeros(self.units, dtype=dtype)
        c = np.zeros(self.units, dtype=dtype) if self._has_cell else None
        return RecurrentState(h, c)

    def _check_input(self, x_t):
        if x_t.shape != (self.input_size,):
            raise ShapeError(f"recurrent step expects input {(self.input_size,)}, got {x_t.shape}")

    def forward(self, xs):
        """Run the cell over xs [T, input_size] from a zero state.

        Returns (out, caches): out is [T, units] with return_sequences,
        else the final hidden state [units].
        """
        if xs.ndim != 2:
            raise ShapeError(f"recurrent input must be rank 2, got {xs.ndim}")
        if xs.shape[0] == 0:
            raise EmptySequenceError("recurrent forward needs at least one frame")
        if xs.shape[1] != self.input_size:
            raise ShapeError(f"recurrent expects input width {self.input_size}, got {xs.shape[1]}")
        state = self.initial_state(dtype=np.result_type(xs, self.w_matrices()[0]))
        hs, caches = [], []
        for t in range(xs.shape[0]):
            state, cache = self.step_forward(xs[t], state)
            hs.append(state.h)
            caches.append(cache)
        out = np.stack(hs) if self.return_sequences else hs[-1]
        return out, caches

    def output_width(self):
        return self.units


class LSTM(_RecurrentBase):
    """Single LSTM layer: gates i, f, o and candidate c~.

    i = sig(x W_i + h U_i + b_i), f = sig(..f..), o = sig(..o..),
    c~ = tanh(x W_c + h U_c + b_c), c' = f*c + i*c~, h' = o*tanh(c').
    """

    _has_cell = True
    PARAM_NAMES = ("w_i", "w_f", "w_o", "w_c",
                   "u_i", "u_f", "u_o", "u_c",
                   "b_i", "b_f", "b_o", "b_c")

    def __init__(self, input_size, units, return_sequences, params):
        super().__init__(input_size, units, return_sequences)
        for name in self.PARAM_NAMES:
            setattr(self, name, params[name])
        for g in "ifoc":
            if getattr(self, f"w_{g}").shape != (self.input_size, self.units) or \
               getattr(self, f"u_{g}").shape != (self.units, self.units) or \
               getattr(self, f"b_{g}").shape != (self.units,):
                raise ShapeError(f"LSTM gate {g} weight extents inconsistent")

    @classmethod
    def create(cls, input_size, units, return_sequences, rng):
        params = {}
        for g in "ifoc":
            params[f"w_{g}"] = glorot_uniform((input_size, units), input_size, units, rng)
            params[f"u_{g}"] = glorot_uniform((units, units), units, units, rng)
            params[f"b_{g}"] = np.zeros(units, dtype=np.float32)
        params["b_f"] = np.ones(units, dtype=np.float32)  # forget bias 1.0 for gradient flow
        return cls(input_size, units, return_sequences, params)

    def w_matrices(self):
        return (self.w_i,)

    def step_forward(self, x_t, state):
        self._check_input(x_t)
        h, c = state.h, state.c
        i = sigmoid(x_t @ self.w_i + h @ self.u_i + self.b_i)
        f = sigmoid(x_t @ self.w_f + h @ self.u_f + self.b_f)
        o = sigmoid(x_t @ self.w_o + h @ self.u_o + self.b_o)
        g = np.tanh(x_t @ self.w_c + h @ self.u_c + self.b_c)
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        cache = (x_t, h, c, i, f, o, g, tc)
        return RecurrentState(h_new, c_new), cache

    def step(self, x_t, state):
        new_state, _ = self.step_forward(x_t, state)
        return new_state

    def backward(self, caches, d_out):
        """Full BPTT. d_out is [T, units] (return_sequences) or [units]."""
        T = len(caches)
        if self.return_sequences:
            if d_out.shape != (T, self.units):
                raise ShapeError(f"expected d_out {(T, self.units)}, got {d_out.shape}")
        elif d_out.shape != (self.units,):
            raise ShapeError(f"expected d_out {(self.units,)}, got {d_out.shape}")
        grads = {name: np.zeros_like(getattr(self, name), dtype=d_out.dtype)
                 for name in self.PARAM_NAMES}
        d_xs = np.zeros((T, self.input_size), dtype=d_out.dtype)
        dh_next = np.zeros(self.units, dtype=d_out.dtype)
        dc_next = np.zeros(self.units, dtype=d_out.dtype)
        for t in reversed(range(T)):
            x_t, h_prev, c_prev, i, f, o, g, tc = caches[t]
            if self.return_sequences:
                dh = d_out[t] + dh_next
            else:
                dh = (d_out if t == T - 1 else 0.0) + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dpre_o = dh * tc * o * (1.0 - o)
            dpre_i = dc * g * i * (1.0 - i)
            dpre_f = dc * c_prev * f * (1.0 - f)
            dpre_g = dc * i * (1.0 - g * g)
            pres = {"i": dpre_i, "f": dpre_f, "o": dpre_o, "c": dpre_g}
            for gate, dpre in pres.items():
                grads[f"w_{gate}"] += np.outer(x_t, dpre)
                grads[f"u_{gate}"] += np.outer(h_prev, dpre)
                grads[f"b_{gate}"] += dpre
            d_xs[t] = sum(getattr(self, f"w_{gate}") @ pres[gate] for gate in "ifoc")
            dh_next = sum(getattr(self, f"u_{gate}") @ pres[gate] for gate in "ifoc")
            dc_next = dc * f
        return d_xs, grads


class GRU(_RecurrentBase):
    """Single GRU layer.

    z = sig(x W_z + h U_z + b_z), r = sig(x W_r + h U_r + b_r),
    h~ = tanh(x W_h + (r*h) U_h + b_h), h' = (1-z)*h + z*h~.
    """

    _has_cell = False
    PARAM_NAMES = ("w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h")

    def __init__(self, input_size, units, return_sequences, params):
        super().__init__(input_size, units, return_sequences)
        for name in self.PARAM_NAMES:
            setattr(self, name, params[name])
        for g in "zrh":
            if getattr(self, f"w_{g}").shape != (self.input_size, self.units) or \
               getattr(self, f"u_{g}").shape != (self.units, self.units) or \
               getattr(self, f"b_{g}").shape != (self.units,):
                raise ShapeError(f"GRU gate {g} weight extents inconsistent")

    @classmethod
    def create(cls, input_size, units, return_sequences, rng):
        params = {}
        for g in "zrh":
            params[f"w_{g}"] = glorot_uniform((input_size, units), input_size, units, rng)
            params[f"u_{g}"] = glorot_uniform((units, units), units, units, rng)
            params[f"b_{g}"] = np.zeros(units, dtype=np.float32)
        return cls(input_size, units, return_sequences, params)

    def w_matrices(self):
        return (self.w_z,)

    def step_forward(self, x_t, state):
        self._check_input(x_t)
        h = state.h
        z = sigmoid(x_t @ self.w_z + h @ self.u_z + self.b_z)
        r = sigmoid(x_t @ self.w_r + h @ self.u_r + self.b_r)
        rh = r * h
        g = np.tanh(x_t @ self.w_h + rh @ self.u_h + self.b_h)
        h_new = (1.0 - z) * h + z * g
        cache = (x_t, h, z, r, rh, g)
        return RecurrentState(h_new), cache

    def step(self, x_t, state):
        new_state, _ = self.step_forward(x_t, state)
        return new_state

    def backward(self, caches, d_out):
        T = len(caches)
        if self.return_sequences:
            if d_out.shape != (T, self.units):
                raise ShapeError(f"expected d_out {(T, self.units)}, got {d_out.shape}")
        elif d_out.shape != (self.units,):
            raise ShapeError(f"expected d_out {(self.units,)}, got {d_out.shape}")
        grads = {name: np.zeros_like(getattr(self, name), dtype=d_out.dtype)
                 for name in self.PARAM_NAMES}
        d_xs = np.zeros((T, self.input_size), dtype=d_out.dtype)
        dh_next = np.zeros(self.units, dtype=d_out.dtype)
        for t in reversed(range(T)):
            x_t, h_prev, z, r, rh, g = caches[t]
            if self.return_sequences:
                dh = d_out[t] + dh_next
            else:
                dh = (d_out if t == T - 1 else 0.0) + dh_next
            dpre_h = dh * z * (1.0 - g * g)
            dpre_z = dh * (g - h_prev) * z * (1.0 - z)
            drh = self.u_h @ dpre_h
            dpre_r = drh * h_prev * r * (1.0 - r)
            grads["w_z"] += np.outer(x_t, dpre_z)
            grads["w_r"] += np.outer(x_t, dpre_r)
            grads["w_h"] += np.outer(x_t, dpre_h)
            grads["u_z"] += np.outer(h_prev, dpre_z)
            grads["u_r"] += np.outer(h_prev, dpre_r)
            grads["u_h"] += np.outer(rh, dpre_h)
            grads["b_z"] += dpre_z
            grads["b_r"] += dpre_r
            grads["b_h"] += dpre_h
            d_xs[t] = self.w_z @ dpre_z + self.w_r @ dpre_r + self.w_h @ dpre_h
            dh_next = (dh * (1.0 - z) + drh * r
                       + self.u_z @ dpre_z + self.u_r @ dpre_r)
        return d_xs, grads
