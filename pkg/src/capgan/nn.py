"""Dense layers with hand-written backward passes, plus a finite-difference checker.

All weights are float64 numpy arrays in C (row-major) order. Gradients are
computed by explicit per-layer backward functions rather than a general tape;
the network topology is small and fixed, and every backward path is verified
against central finite differences (see grad_check).

Randomness everywhere in this package comes from numpy's PCG64 generator,
seeded explicitly, so runs are bit-reproducible single-threaded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


def rng_from_seed(seed: int) -> np.random.Generator:
    """The package-wide RNG family: PCG64."""
    return np.random.Generator(np.random.PCG64(seed))


def spawn_seeds(seed: int, n: int) -> list[int]:
    """Derive n independent child seeds deterministically."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def sigmoid(x):
    # tanh form: one stable pass, no overflow at any magnitude.
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(logits, temperature: float = 1.0):
    """Rows sum to 1; max-subtraction keeps it finite for |logits| up to ~1e300."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    if temperature != 1.0:
        z = z / temperature
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class ParamStore:
    """Named float64 parameter tensors, each paired with a same-shaped gradient buffer."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> np.ndarray:
        if name in self.params:
            raise ValueError(f"parameter {name!r} already exists")
        arr = np.ascontiguousarray(value, dtype=np.float64)
        self.params[name] = arr
        self.grads[name] = np.zeros_like(arr)
        return arr

    def zero_grads(self):
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self) -> "ParamStore":
        other = ParamStore(self.seed)
        for name, p in self.params.items():
            other.add(name, p.copy())
        return other

    def freeze(self) -> "ParamStore":
        """Deep copy with read-only parameter arrays (for policy snapshots)."""
        other = self.copy()
        for p in other.params.values():
            p.flags.writeable = False
        return other

    @property
    def n_entries(self) -> int:
        return sum(p.size for p in self.params.values())

    def assert_finite(self):
        for name, p in self.params.items():
            if not np.all(np.isfinite(p)):
                raise FloatingPointError(f"non-finite entries in parameter {name!r}")


@dataclass
class LstmState:
    """Recurrent state (h_t, c_t) at step t. h entries always lie in (-1, 1)."""

    h: np.ndarray
    c: np.ndarray
    t: int = 0


def affine(x, W, b):
    """W @ x + b with shape checking."""
    x = np.asarray(x, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if W.ndim != 2 or x.shape[-1] != W.shape[1] or b.shape[-1] != W.shape[0]:
        raise ShapeError(
            f"affine: W {W.shape} incompatible with x {x.shape} and b {b.shape}"
        )
    return x @ W.T + b


def lstm_cell_forward(x, h_prev, c_prev, W, b):
    """One LSTM step on a batch. x (B,E), h_prev/c_prev (B,H), W (4H, E+H), b (4H,).

    Gate order is [input, forget, output, candidate]; i, f, o are sigmoids and
    the candidate is tanh. Returns (h, c, cache) with cache for the backward pass.
    """
    H = h_prev.shape[-1]
    if W.shape != (4 * H, x.shape[-1] + H) or b.shape != (4 * H,):
        raise ShapeError(f"lstm: W {W.shape} does not match input {x.shape} hidden {H}")
    X = np.concatenate([x, h_prev], axis=-1)
    A = X @ W.T + b
    i = sigmoid(A[..., :H])
    f = sigmoid(A[..., H : 2 * H])
    o = sigmoid(A[..., 2 * H : 3 * H])
    g = np.tanh(A[..., 3 * H :])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (X, i, f, o, g, c_prev, tc)


def lstm_cell_backward(dh, dc, cache, W):
    """Backward for one step. Returns (dx, dh_prev, dc_prev, dW, db)."""
    X, i, f, o, g, c_prev, tc = cache
    do = dh * tc
    dct = dc + dh * o * (1.0 - tc * tc)
    dA = np.concatenate(
        [
            dct * g * i * (1.0 - i),
            dct * c_prev * f * (1.0 - f),
            do * o * (1.0 - o),
            dct * i * (1.0 - g * g),
        ],
        axis=-1,
    )
    dW = dA.T @ X
    db = dA.sum(axis=0)
    dX = dA @ W
    E = X.shape[-1] - dh.shape[-1]
    return dX[..., :E], dX[..., E:], dct * f, dW, db


def lstm_step(state: LstmState, x, params: ParamStore, prefix: str = "lstm_") -> LstmState:
    """Advance a single-sequence LstmState using params[prefix+'W'], params[prefix+'b']."""
    W = params.params[prefix + "W"]
    b = params.params[prefix + "b"]
    x = np.asarray(x, dtype=np.float64)
    h, c, _ = lstm_cell_forward(x[None, :], state.h[None, :], state.c[None, :], W, b)
    return LstmState(h[0], c[0], state.t + 1)


def log_sum_exp(logits):
    m = logits.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(logits - m).sum(axis=-1, keepdims=True))).squeeze(-1)


def softmax_xent(logits, target: int):
    """Cross-entropy of softmax(logits) against a target index.

    Returns (loss, grad_logits) with loss = -log softmax(logits)[target] and
    grad = softmax(logits) - onehot(target), both in the max-subtracted form.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= target < logits.shape[-1]:
        raise IndexError(f"target {target} out of range for {logits.shape[-1]} logits")
    loss = log_sum_exp(logits) - logits[target]
    grad = softmax(logits)
    grad[target] -= 1.0
    return float(loss), grad


def relative_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def grad_check(f, params: ParamStore, eps: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    f must be deterministic, return a scalar, and accumulate its analytic
    gradients into params.grads. Relative error per entry is
    |a - n| / max(|a|, |n|, 1e-8).
    """
    params.zero_grads()
    base = float(f(params))
    if not np.isfinite(base):
        raise FloatingPointError("grad_check: objective is not finite")
    analytic = {name: g.copy() for name, g in params.grads.items()}

    worst = 0.0
    for name, p in params.params.items():
        flat = p.reshape(-1)
        aflat = analytic[name].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            fp = float(f(params))
            flat[k] = orig - eps
            fm = float(f(params))
            flat[k] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError(f"grad_check: non-finite value at {name}[{k}]")
            numeric = (fp - fm) / (2.0 * eps)
            err = relative_error(aflat[k], numeric)
            if err > worst:
                worst = err
    return worst
