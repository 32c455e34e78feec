"""Selective state-space kernel: ZOH discretization, scans, and S6.

Conventions (fixed here and relied on everywhere else):

* A is diagonal and strictly negative; it is stored as log(-A) so gradient
  updates cannot flip its sign.
* The recurrence starts from h_{-1} = 0 and h_t includes the current input:
  h_t = Abar_t * h_{t-1} + Bbar_t * x_t, y_t = C_t . h_t. Output t therefore
  depends on inputs at positions <= t.
* ``scan_sequential`` is the ground-truth oracle; ``scan_chunked`` composes
  per-chunk affine maps h -> alpha*h + beta and must agree with it.

Array layout: sequences are (L, D) with per-token state tensors (L, D, N),
D channels each carrying an independent length-N state.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DiscretizationError, NumericError
from .tensor import Tensor

DEFAULT_CHUNK = 64
MAX_STATE_SIZE = 256


def state_size_for(channels: int) -> int:
    """Default SSM state size for a given channel count: min(C, 256)."""
    return min(channels, MAX_STATE_SIZE)


# ---------------------------------------------------------------------------
# numpy-level kernels (no autodiff)
# ---------------------------------------------------------------------------


def discretize_zoh(a: np.ndarray, b: np.ndarray, delta: np.ndarray):
    """Zero-order-hold discretization of a diagonal system.

    For each diagonal entry: Abar = exp(delta*a), Bbar = (exp(delta*a)-1)/a * b.
    expm1 keeps Bbar accurate in the small-delta limit (Bbar -> delta*b).
    """
    a = np.asarray(a, dtype=np.float64) if np.isscalar(a) else np.asarray(a)
    b = np.asarray(b)
    delta = np.asarray(delta)
    if np.any(a == 0):
        raise DiscretizationError("diagonal entry a == 0: (delta*A)^-1 does not exist")
    if np.any(delta <= 0):
        raise ContractError("delta must be strictly positive")
    da = delta * a
    a_bar = np.exp(da)
    b_bar = np.expm1(da) / a * b
    return a_bar, b_bar


def _scan_h_sequential(a_bar: np.ndarray, bx: np.ndarray) -> np.ndarray:
    """Reference recurrence h_t = a_bar_t * h_{t-1} + bx_t, h_{-1} = 0."""
    L = a_bar.shape[0]
    h = np.zeros(a_bar.shape[1:], dtype=a_bar.dtype)
    out = np.empty_like(a_bar)
    for t in range(L):
        h = a_bar[t] * h + bx[t]
        out[t] = h
    return out


def _scan_h_chunked(a_bar: np.ndarray, bx: np.ndarray, chunk: int) -> np.ndarray:
    """Blocked evaluation of the same recurrence.

    Each chunk is summarized as an affine map h -> P*h + hloc (P the running
    product of a_bar, hloc the chunk-local state from zero); carries are
    propagated across chunks and the block results recombined. With chunk=1
    the arithmetic reduces to the sequential order exactly.
    """
    if chunk < 1:
        raise ContractError(f"chunk must be >= 1, got {chunk}")
    L = a_bar.shape[0]
    if L == 0:
        return np.empty_like(a_bar)
    n_chunks = -(-L // chunk)
    pad = n_chunks * chunk - L
    if pad:
        # identity affine maps: a_bar = 1, bx = 0
        a_bar = np.concatenate([a_bar, np.ones((pad, *a_bar.shape[1:]), a_bar.dtype)])
        bx = np.concatenate([bx, np.zeros((pad, *bx.shape[1:]), bx.dtype)])
    ac = a_bar.reshape(n_chunks, chunk, *a_bar.shape[1:])
    bc = bx.reshape(n_chunks, chunk, *bx.shape[1:])

    hloc = np.empty_like(bc)
    prod = np.empty_like(ac)
    h = np.zeros((n_chunks, *a_bar.shape[1:]), dtype=a_bar.dtype)
    p = np.ones_like(h)
    for i in range(chunk):
        h = ac[:, i] * h + bc[:, i]
        p = p * ac[:, i]
        hloc[:, i] = h
        prod[:, i] = p

    carry = np.zeros((n_chunks, *a_bar.shape[1:]), dtype=a_bar.dtype)
    c = np.zeros(a_bar.shape[1:], dtype=a_bar.dtype)
    for j in range(n_chunks):
        carry[j] = c
        c = prod[j, -1] * c + hloc[j, -1]

    out = prod * carry[:, None] + hloc
    out = out.reshape(n_chunks * chunk, *a_bar.shape[1:])
    return out[:L]


def _readout(h: np.ndarray, c: np.ndarray) -> np.ndarray:
    # (L, D, N) states contracted with per-token (L, N) projections
    return np.einsum("ldn,ln->ld", h, c)


def scan_sequential(x: np.ndarray, a_bar: np.ndarray, b_bar: np.ndarray,
                    c: np.ndarray) -> np.ndarray:
    """Oracle scan: x (L,D), a_bar/b_bar (L,D,N), c (L,N) -> y (L,D)."""
    if x.shape[0] == 0:
        return np.empty_like(x)
    h = _scan_h_sequential(a_bar, b_bar * x[:, :, None])
    return _readout(h, c)


def scan_chunked(x: np.ndarray, a_bar: np.ndarray, b_bar: np.ndarray,
                 c: np.ndarray, chunk: int = DEFAULT_CHUNK) -> np.ndarray:
    """Blocked scan; agrees with scan_sequential to round-off."""
    if x.shape[0] == 0:
        return np.empty_like(x)
    h = _scan_h_chunked(a_bar, b_bar * x[:, :, None], chunk)
    return _readout(h, c)


# ---------------------------------------------------------------------------
# autodiff primitive
# ---------------------------------------------------------------------------


def diag_scan(a_bar: Tensor, bx: Tensor, chunk: int = DEFAULT_CHUNK) -> Tensor:
    """Differentiable h_t = a_bar_t * h_{t-1} + bx_t as a single tape node.

    Backward runs the adjoint recurrence g_t = dh_t + a_bar_{t+1} * g_{t+1}
    (itself a reversed scan), giving d(bx)_t = g_t and d(a_bar)_t = g_t * h_{t-1}.
    """
    if a_bar.shape != bx.shape:
        raise ContractError(f"a_bar {a_bar.shape} and bx {bx.shape} must match")
    h = _scan_h_chunked(a_bar.data, bx.data, chunk)

    def backward(g):
        ones = np.ones((1, *a_bar.shape[1:]), dtype=a_bar.dtype)
        a_shift_rev = np.concatenate([a_bar.data[1:], ones])[::-1]
        grad_h = _scan_h_chunked(a_shift_rev, g[::-1], chunk)[::-1]
        if bx.requires_grad:
            bx._accum(grad_h)
        if a_bar.requires_grad:
            h_prev = np.concatenate(
                [np.zeros((1, *h.shape[1:]), dtype=h.dtype), h[:-1]])
            a_bar._accum(grad_h * h_prev)

    return Tensor._from_op(h, (a_bar, bx), backward, "diag_scan")


# ---------------------------------------------------------------------------
# S6: selection projections + discretization + scan, end to end
# ---------------------------------------------------------------------------


@dataclass
class S6Weights:
    """Learned quantities of the selective SSM over D channels, state size N."""

    a_log: Tensor      # (D, N), A = -exp(a_log) stays strictly negative
    b_proj: Tensor     # (D, N)
    c_proj: Tensor     # (D, N)
    dt_proj: Tensor    # (D, 1), token -> scalar step-size logit
    dt_bias: Tensor    # (D,), per-channel learned step-size parameter

    def parameters(self):
        return [self.a_log, self.b_proj, self.c_proj, self.dt_proj, self.dt_bias]

    @property
    def n_state(self) -> int:
        return self.a_log.shape[1]

    @property
    def d_model(self) -> int:
        return self.a_log.shape[0]


@dataclass
class SsmParams:
    """Per-token selected SSM quantities (all Tensors on the tape)."""

    a: Tensor          # (D, N) diagonal of A, strictly negative
    b: Tensor          # (L, N)
    c: Tensor          # (L, N)
    delta: Tensor      # (L, D), strictly positive
    n_state: int
    d_model: int


def init_s6(d_model: int, n_state: int, rng: np.random.Generator,
            dtype=np.float32, dt_min: float = 1e-3, dt_max: float = 1e-1) -> S6Weights:
    """S4D-real style initialization: a_n = -(n+1), log-uniform step sizes."""
    a = np.tile(np.arange(1, n_state + 1, dtype=np.float64), (d_model, 1))
    a_log = np.log(a).astype(dtype)
    s = 1.0 / np.sqrt(d_model)
    b_proj = rng.uniform(-s, s, size=(d_model, n_state)).astype(dtype)
    c_proj = rng.uniform(-s, s, size=(d_model, n_state)).astype(dtype)
    dt_proj = rng.uniform(-s, s, size=(d_model, 1)).astype(dtype)
    dt = np.exp(rng.uniform(np.log(dt_min), np.log(dt_max), size=d_model))
    # invert softplus so softplus(dt_bias) == dt at zero input
    dt_bias = (dt + np.log(-np.expm1(-dt))).astype(dtype)
    return S6Weights(
        a_log=Tensor(a_log, requires_grad=True),
        b_proj=Tensor(b_proj, requires_grad=True),
        c_proj=Tensor(c_proj, requires_grad=True),
        dt_proj=Tensor(dt_proj, requires_grad=True),
        dt_bias=Tensor(dt_bias, requires_grad=True),
    )


def select_params(x: Tensor, w: S6Weights) -> SsmParams:
    """Input-dependent B, C, delta per token (the selection mechanism).

    B and C are linear projections of the token; delta is
    softplus(per-channel parameter + per-token scalar broadcast over channels),
    hence strictly positive.
    """
    if not np.all(np.isfinite(x.data)):
        raise NumericError("select_params requires finite input")
    b = x @ w.b_proj                      # (L, N)
    c = x @ w.c_proj                      # (L, N)
    dt_tok = x @ w.dt_proj                # (L, 1), broadcast over channels
    delta = (dt_tok + w.dt_bias).softplus()   # (L, D)
    a = -w.a_log.exp()                    # (D, N)
    return SsmParams(a=a, b=b, c=c, delta=delta,
                     n_state=w.n_state, d_model=w.d_model)


def s6_forward(x: Tensor, w: S6Weights, chunk: int = DEFAULT_CHUNK) -> Tensor:
    """Selective scan over a (L, D) sequence; differentiable end to end."""
    L, d = x.shape
    p = select_params(x, w)
    delta = p.delta.reshape((L, d, 1))            # (L, D, 1)
    da = delta * p.a                              # (L, D, N)
    a_bar = da.exp()
    phi = da.expm1() * p.a.reciprocal()           # (exp(delta*a)-1)/a
    bx = phi * p.b.reshape((L, 1, p.n_state)) * x.reshape((L, d, 1))
    h = diag_scan(a_bar, bx, chunk=chunk)
    y = (h * p.c.reshape((L, 1, p.n_state))).sum(axis=2)
    return y
