"""Hand-rolled forecasters working on flat parameter vectors.

Both learners map a window ``X`` of shape ``(batch, past_obs, n_inputs)`` to
``(batch, future_obs)`` predictions and expose ``loss_and_grad`` for
mean-squared-error training. Parameters always travel as one flat float64
vector so the federated server can average them without knowing the layout.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from ..model import TecError


class IncompatibleWeightsError(TecError, ValueError):
    pass


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _glorot(rng, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _orthogonal(rng, rows, cols):
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q if rows >= cols else q.T


class LinearAR:
    """Affine map from the flattened input window to the next ``future_obs`` values."""

    kind = "linear-ar"

    def __init__(self, past_obs: int, future_obs: int = 1, n_inputs: int = 1):
        self.past_obs = past_obs
        self.future_obs = future_obs
        self.n_inputs = n_inputs
        self.d = past_obs * n_inputs

    @property
    def arch_tag(self) -> str:
        return f"linear-ar:p{self.past_obs}:f{self.future_obs}:x{self.n_inputs}"

    @property
    def n_params(self) -> int:
        return (self.d + 1) * self.future_obs

    def init_params(self, rng=None) -> np.ndarray:
        return np.zeros(self.n_params)

    def _unpack(self, params):
        k = self.d * self.future_obs
        return params[:k].reshape(self.d, self.future_obs), params[k:]

    def predict(self, params, X) -> np.ndarray:
        W, b = self._unpack(params)
        return X.reshape(X.shape[0], -1) @ W + b

    def design(self, X) -> np.ndarray:
        """Flattened windows with a trailing column of ones.

        ``params.reshape(d + 1, future_obs)`` is then the weight matrix with the
        bias as its last row, which lets training run on a single matmul.
        """
        Xf = X.reshape(X.shape[0], -1)
        return np.hstack([Xf, np.ones((Xf.shape[0], 1))])

    def loss_and_grad(self, params, X, Y, dropout_rng=None):
        W, b = self._unpack(params)
        Xf = X.reshape(X.shape[0], -1)
        r = Xf @ W + b - Y
        scale = 2.0 / r.size
        return float(np.mean(r * r)), np.concatenate([(scale * (Xf.T @ r)).ravel(), scale * r.sum(axis=0)])


@dataclass
class _LayerCache:
    x: np.ndarray
    h: np.ndarray
    c: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    zg: np.ndarray


class RecurrentNet:
    """Stacked LSTM layers with rectified-linear cell activation and a dense head.

    ``hidden`` lists the cell count of every layer. Dropout is applied after
    every layer but the first: on the full output sequence for intermediate
    layers and on the final hidden state for the last one.
    """

    kind = "recurrent"

    def __init__(self, past_obs: int, future_obs: int = 1, n_inputs: int = 1,
                 hidden: tuple = (16, 16, 16), dropout: float = 0.2):
        self.past_obs = past_obs
        self.future_obs = future_obs
        self.n_inputs = n_inputs
        self.hidden = tuple(int(h) for h in hidden)
        self.dropout = float(dropout)
        self.shapes = []
        d_in = n_inputs
        for h in self.hidden:
            self.shapes += [(d_in, 4 * h), (h, 4 * h), (4 * h,)]
            d_in = h
        self.shapes += [(d_in, future_obs), (future_obs,)]

    @property
    def arch_tag(self) -> str:
        hid = "-".join(str(h) for h in self.hidden)
        return f"recurrent:p{self.past_obs}:f{self.future_obs}:x{self.n_inputs}:h{hid}:d{self.dropout!r}"

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes)

    def _unpack(self, params):
        out, k = [], 0
        for s in self.shapes:
            n = int(np.prod(s))
            out.append(params[k:k + n].reshape(s))
            k += n
        return out

    def init_params(self, rng=None) -> np.ndarray:
        rng = rng if rng is not None else np.random.default_rng(0)
        parts = []
        d_in = self.n_inputs
        for h in self.hidden:
            b = np.zeros(4 * h)
            b[h:2 * h] = 1.0  # forget-gate bias
            parts += [_glorot(rng, d_in, 4 * h), _orthogonal(rng, h, 4 * h), b]
            d_in = h
        parts += [_glorot(rng, d_in, self.future_obs), np.zeros(self.future_obs)]
        return np.concatenate([p.ravel() for p in parts])

    def dropout_masks(self, rng, batch: int) -> list:
        """Inverted-dropout masks, one per dropped layer output (None for the first layer)."""
        if self.dropout <= 0.0:
            return [None] * len(self.hidden)
        keep = 1.0 - self.dropout
        masks = [None]
        for k, h in enumerate(self.hidden[1:], start=1):
            last = k == len(self.hidden) - 1
            shape = (batch, h) if last else (batch, self.past_obs, h)
            masks.append((rng.random(shape) < keep) / keep)
        return masks

    def _layer_forward(self, x, W, U, b):
        B, T, _ = x.shape
        H = U.shape[0]
        h = np.zeros((B, T + 1, H))
        c = np.zeros((B, T + 1, H))
        gi = np.empty((B, T, H))
        gf = np.empty((B, T, H))
        go = np.empty((B, T, H))
        gg = np.empty((B, T, H))
        zg = np.empty((B, T, H))
        xw = x @ W + b
        for t in range(T):
            z = xw[:, t] + h[:, t] @ U
            gi[:, t] = _sigmoid(z[:, :H])
            gf[:, t] = _sigmoid(z[:, H:2 * H])
            zg[:, t] = z[:, 2 * H:3 * H]
            gg[:, t] = np.maximum(zg[:, t], 0.0)
            go[:, t] = _sigmoid(z[:, 3 * H:])
            c[:, t + 1] = gf[:, t] * c[:, t] + gi[:, t] * gg[:, t]
            h[:, t + 1] = go[:, t] * np.maximum(c[:, t + 1], 0.0)
        return h[:, 1:], _LayerCache(x, h, c, gi, gf, go, gg, zg)

    def _layer_backward(self, dh_seq, cache: _LayerCache, W, U):
        x, h, c = cache.x, cache.h, cache.c
        B, T, _ = x.shape
        H = U.shape[0]
        dz_all = np.empty((B, T, 4 * H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            dh = dh_seq[:, t] + dh_next
            ct = c[:, t + 1]
            i, f, o, g = cache.i[:, t], cache.f[:, t], cache.o[:, t], cache.g[:, t]
            do = dh * np.maximum(ct, 0.0)
            dc = dh * o * (ct > 0.0) + dc_next
            dz = dz_all[:, t]
            dz[:, :H] = dc * g * i * (1.0 - i)
            dz[:, H:2 * H] = dc * c[:, t] * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = dc * i * (cache.zg[:, t] > 0.0)
            dz[:, 3 * H:] = do * o * (1.0 - o)
            dh_next = dz @ U.T
            dc_next = dc * f
        dW = np.einsum("btd,btk->dk", x, dz_all)
        dU = np.einsum("bth,btk->hk", h[:, :-1], dz_all)
        db = dz_all.sum(axis=(0, 1))
        dx = dz_all @ W.T
        return dx, dW, dU, db

    def _forward(self, params, X, masks=None):
        p = self._unpack(params)
        seq = X
        caches = []
        n = len(self.hidden)
        for k in range(n):
            W, U, b = p[3 * k:3 * k + 3]
            out, cache = self._layer_forward(seq, W, U, b)
            caches.append(cache)
            if k < n - 1:
                seq = out if masks is None or masks[k] is None else out * masks[k]
            else:
                last = out[:, -1]
                if masks is not None and masks[k] is not None:
                    last = last * masks[k]
        Wd, bd = p[-2], p[-1]
        return last @ Wd + bd, (p, caches, last)

    def predict(self, params, X) -> np.ndarray:
        return self._forward(params, X)[0]

    def loss_and_grad(self, params, X, Y, dropout_rng=None, masks=None):
        if masks is None and dropout_rng is not None:
            masks = self.dropout_masks(dropout_rng, X.shape[0])
        pred, (p, caches, last) = self._forward(params, X, masks)
        r = pred - Y
        loss = float(np.mean(r * r))
        dpred = 2.0 * r / r.size
        Wd = p[-2]
        grads = [None] * len(self.shapes)
        grads[-2] = last.T @ dpred
        grads[-1] = dpred.sum(axis=0)
        n = len(self.hidden)
        B, T = X.shape[0], X.shape[1]
        dlast = dpred @ Wd.T
        if masks is not None and masks[n - 1] is not None:
            dlast = dlast * masks[n - 1]
        dh_seq = np.zeros((B, T, self.hidden[-1]))
        dh_seq[:, -1] = dlast
        for k in range(n - 1, -1, -1):
            W, U, _ = p[3 * k:3 * k + 3]
            dx, dW, dU, db = self._layer_backward(dh_seq, caches[k], W, U)
            grads[3 * k:3 * k + 3] = [dW, dU, db]
            if k > 0:
                dh_seq = dx
                if masks is not None and masks[k - 1] is not None:
                    dh_seq = dh_seq * masks[k - 1]
        return loss, np.concatenate([g.ravel() for g in grads])


_TAG = re.compile(r"^(?P<kind>linear-ar|recurrent):p(?P<p>\d+):f(?P<f>\d+):x(?P<x>\d+)"
                  r"(?::h(?P<h>[\d-]+):d(?P<d>[\d.e-]+))?$")


def learner_from_tag(tag: str):
    m = _TAG.match(tag)
    if m is None:
        raise IncompatibleWeightsError(f"unrecognised architecture tag {tag!r}")
    p, f, x = int(m["p"]), int(m["f"]), int(m["x"])
    if m["kind"] == "linear-ar":
        return LinearAR(p, f, x)
    if m["h"] is None:
        raise IncompatibleWeightsError(f"recurrent tag {tag!r} lacks layer sizes")
    return RecurrentNet(p, f, x, tuple(int(h) for h in m["h"].split("-")), float(m["d"]))
