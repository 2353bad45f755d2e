"""Randomized p-quantization and the DIANA family of compressed methods.

A p-quantized block sends its p-norm once and one ternary symbol per
coordinate: ``Delta_hat_j = ||Delta||_p * sign(Delta_j) * xi_j`` with
``xi_j ~ Bernoulli(|Delta_j| / ||Delta||_p)``. The estimate is unbiased
and its variance is ``psi(Delta)``.
"""
import struct
from dataclasses import dataclass

import numpy as np

from .prox import ProxTerm
from .rng import as_stream
from .trace import MetricTrace, Monitor

FLOAT_BITS = 32


def _norm_p(p):
    if p in (np.inf, "inf", float("inf")):
        return np.inf
    if p in (1, 2):
        return int(p)
    raise ValueError(f"unsupported p={p!r}; only 1, 2 and inf are available")


def _block_sizes(d, blocks):
    if blocks is None:
        return np.array([d])
    sizes = np.asarray(blocks, dtype=np.int64)
    if np.any(sizes < 1) or sizes.sum() != d:
        raise ValueError(f"block sizes {sizes.tolist()} do not partition dimension {d}")
    return sizes


def bit_cost(nnz, b=FLOAT_BITS):
    """Bits to send a block with ``nnz`` nonzeros: ``nnz^(1/2) (log2 nnz + log2 2 + 1) + b``."""
    nnz = np.asarray(nnz, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        body = np.where(nnz > 0, np.sqrt(nnz) * (np.log2(np.maximum(nnz, 1)) + 1.0 + 1.0), 0.0)
    return body + b


@dataclass
class QuantizedMessage:
    """Block-wise quantized vector.

    Attributes
    ----------
    norms : ndarray
        p-norm of every block.
    signs : ndarray of int8
        Ternary payload in {-1, 0, +1}, one entry per coordinate.
    sizes : ndarray
        Block sizes.
    p : float
    bits : float
        Sum over blocks of :func:`bit_cost`.
    """

    norms: np.ndarray
    signs: np.ndarray
    sizes: np.ndarray
    p: float
    bits: float

    def decode(self):
        return np.repeat(self.norms, self.sizes) * self.signs

    @property
    def nnz(self):
        return int(np.count_nonzero(self.signs))


def quant_block(delta, p, blocks, rng):
    """Quantize each block of ``delta`` independently.

    One uniform number per coordinate is drawn from ``rng`` in coordinate
    order, whatever the block contents.
    """
    delta = np.asarray(delta, float)
    if not np.all(np.isfinite(delta)):
        raise ValueError("cannot quantize non-finite entries")
    p = _norm_p(p)
    sizes = _block_sizes(delta.shape[0], blocks)
    rng = as_stream(rng, "quantize")
    u = rng.uniform(delta.shape[0])
    norms = np.empty(len(sizes))
    signs = np.zeros(delta.shape[0], dtype=np.int8)
    bits = 0.0
    start = 0
    for l, size in enumerate(sizes):
        block = delta[start:start + size]
        nrm = np.linalg.norm(block, ord=p)
        norms[l] = nrm
        if nrm > 0:
            keep = u[start:start + size] < np.abs(block) / nrm
            signs[start:start + size] = np.sign(block) * keep
        bits += float(bit_cost(np.count_nonzero(signs[start:start + size])))
        start += size
    return QuantizedMessage(norms, signs, sizes, p, bits)


def quant_block_samples(delta, p, blocks, rng, num):
    """``num`` independent decoded quantizations of ``delta`` at once.

    Draws the same uniforms, in the same order, as ``num`` successive calls
    of :func:`quant_block`, so row ``s`` equals the ``s``-th sequential
    sample. Returns ``(decoded, nnz)`` with shapes ``(num, d)`` and ``(num,)``.
    """
    delta = np.asarray(delta, float)
    p = _norm_p(p)
    d = delta.shape[0]
    sizes = _block_sizes(d, blocks)
    rng = as_stream(rng, "quantize")
    u = rng.uniform((num, d))
    edges = np.concatenate([[0], np.cumsum(sizes)])
    norms = np.array([np.linalg.norm(delta[a:b], ord=p) for a, b in zip(edges[:-1], edges[1:])])
    scale = np.repeat(norms, sizes)
    prob = np.divide(np.abs(delta), scale, out=np.zeros(d), where=scale > 0)
    signs = np.sign(delta) * (u < prob)
    return signs * scale, np.count_nonzero(signs, axis=1)


def quant_p(delta, p, rng):
    """p-quantization of the whole vector as a single block."""
    return quant_block(delta, p, None, rng)


def psi(delta, p, blocks=None):
    """Variance of block quantization: ``sum_l ||D_l||_1 ||D_l||_p - ||D_l||^2``."""
    delta = np.asarray(delta, float)
    p = _norm_p(p)
    total, start = 0.0, 0
    for size in _block_sizes(delta.shape[0], blocks):
        blk = delta[start:start + size]
        total += np.abs(blk).sum() * np.linalg.norm(blk, ord=p) - blk @ blk
        start += size
    return float(max(total, 0.0))


def alpha_p(p, d):
    """``inf_x ||x||^2 / (||x||_1 ||x||_p)`` over nonzero ``x`` in ``R^d``."""
    p = _norm_p(p)
    if d < 1:
        raise ValueError("d must be >= 1")
    if p == 1:
        return 1.0 / d
    if p == 2:
        return 1.0 / np.sqrt(d)
    return 2.0 / (1.0 + np.sqrt(d))


def expected_nnz(delta, p):
    """Expected number of nonzeros of ``quant_p(delta)``: ``||D||_1 / ||D||_p`` (0 for D = 0)."""
    delta = np.asarray(delta, float)
    nrm = np.linalg.norm(delta, ord=_norm_p(p))
    return 0.0 if nrm == 0 else float(np.abs(delta).sum() / nrm)


# ---------------------------------------------------------------------------
# wire format


def serialize_message(msg):
    """Bytes of a message: per block a little-endian float64 norm, then
    2 bits per coordinate (00 = 0, 01 = +1, 10 = -1, low bits first),
    padded to a byte boundary."""
    out = bytearray()
    start = 0
    code = {0: 0, 1: 1, -1: 2}
    for nrm, size in zip(msg.norms, msg.sizes):
        out += struct.pack("<d", float(nrm))
        payload = bytearray((int(size) * 2 + 7) // 8)
        for k, s in enumerate(msg.signs[start:start + size]):
            payload[k // 4] |= code[int(s)] << (2 * (k % 4))
        out += payload
        start += size
    return bytes(out)


def deserialize_message(data, sizes, p):
    """Inverse of :func:`serialize_message` given the block sizes."""
    sizes = np.asarray(sizes, dtype=np.int64)
    norms, signs = [], []
    pos = 0
    decode = {0: 0, 1: 1, 2: -1}
    for size in sizes:
        (nrm,) = struct.unpack_from("<d", data, pos)
        pos += 8
        nbytes = (int(size) * 2 + 7) // 8
        payload = data[pos:pos + nbytes]
        pos += nbytes
        norms.append(nrm)
        for k in range(size):
            sym = (payload[k // 4] >> (2 * (k % 4))) & 3
            if sym == 3:
                raise ValueError("invalid ternary symbol")
            signs.append(decode[sym])
    if pos != len(data):
        raise ValueError("trailing bytes in message")
    signs = np.array(signs, dtype=np.int8)
    bits = float(sum(bit_cost(np.count_nonzero(s)) for s in np.split(signs, np.cumsum(sizes)[:-1])))
    return QuantizedMessage(np.array(norms), signs, sizes, _norm_p(p), bits)


# ---------------------------------------------------------------------------
# distributed methods


def diana_default_params(L, mu, M, p, blocks):
    """``(alpha, c, gamma)`` for strongly convex problems.

    ``alpha = alpha_p / 2``, ``c = 4 (1 - alpha_p) / (M alpha_p^2)`` and
    ``gamma = min{alpha/mu, 2 / ((L + mu)(1 + c alpha))}`` where ``alpha_p``
    uses the largest block size.
    """
    if mu <= 0:
        raise ValueError("default DIANA parameters need mu > 0")
    a_p = alpha_p(p, int(np.max(blocks)))
    alpha = a_p / 2
    c = 4 * (1 - a_p) / (M * a_p**2)
    gamma = min(alpha / mu, 2 / ((L + mu) * (1 + c * alpha)))
    return alpha, c, gamma


def _as_schedule(gamma):
    return gamma if callable(gamma) else (lambda k, g=float(gamma): g)


def diana_run(fp, p, blocks, alpha, gamma, beta=0.0, psi=None, K=100, batch=None, rng=None,
              x0=None, x_star=None, f_star=None, h0=None, record_every=1):
    """DIANA: workers quantize gradient differences against a local memory.

    Parameters
    ----------
    fp : FederatedProblem
    p : {1, 2, inf} or None
        ``None`` sends exact differences as dense floats (uncompressed
        baseline, ``d * 32`` bits per worker and round).
    blocks : sequence of int or None
    alpha : float
        Memory learning rate (0 disables the memory).
    gamma : float or callable
        Stepsize, or ``k -> gamma_k`` for round ``k = 0, 1, ...``.
    beta : float
        Heavy-ball momentum in [0, 1).
    psi : ProxTerm, optional
    batch : int or None
        Minibatch size for worker gradients; ``None`` uses full shard gradients.

    Notes
    -----
    Momentum starts from ``v = 0`` so the first direction is the first
    gradient estimate. ``bits`` accumulates the quantized upload cost.
    """
    if not 0 <= beta < 1:
        raise ValueError("beta must lie in [0, 1)")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    psi = ProxTerm.zero() if psi is None else psi
    steps = _as_schedule(gamma)
    rng = as_stream(rng, "diana")
    qstreams = [rng.child(f"worker/{i}/quant") for i in range(fp.M)]
    gstreams = [rng.child(f"worker/{i}/grad") for i in range(fp.M)]
    d = fp.dim
    x = np.zeros(d) if x0 is None else np.array(x0, float)
    H = np.zeros((fp.M, d)) if h0 is None else np.array(h0, float).reshape(fp.M, d)
    h = H.mean(axis=0)
    v = np.zeros(d)
    mon = Monitor(fp.f, psi, x_star, f_star)
    trace = MetricTrace({"solver": "diana", "p": str(p), "alpha": alpha})
    bits = 0.0
    grads = 0
    mon.record(trace, x, 0)
    for k in range(K):
        dhat = np.zeros((fp.M, d))
        for i, shard in enumerate(fp.shards):
            if batch is None:
                g = shard.grad(x)
                grads += shard.n
            else:
                idx = gstreams[i].integers(shard.n, size=batch)
                g = shard.component_grads(idx, x).sum(axis=0) / batch
                grads += batch
            if p is None:
                dhat[i] = g - H[i]
                bits += d * FLOAT_BITS
            else:
                msg = quant_block(g - H[i], p, blocks, qstreams[i])
                dhat[i] = msg.decode()
                bits += msg.bits
        mean_dhat = dhat.mean(axis=0)
        g_hat = h + mean_dhat
        if alpha != 0:
            H = H + alpha * dhat
            h = h + alpha * mean_dhat
        v = beta * v + g_hat
        gk = steps(k)
        x = psi.prox(gk, x - gk * v)
        if (k + 1) % record_every == 0 or k + 1 == K:
            mon.record(trace, x, k + 1, grads, k + 1, bits)
    trace.memory = H
    return trace


def terngrad_run(fp, p=np.inf, blocks=None, gamma=0.1, K=100, psi=None, batch=None, rng=None,
                 x0=None, x_star=None, f_star=None, record_every=1):
    """Memoryless quantized SGD: DIANA with ``alpha = 0``, ``h = 0``, no momentum.

    ``p = inf`` gives TernGrad and ``p = 2`` one-bit QSGD. ``gamma`` may be a
    callable such as ``k -> 2 / (mu k + theta)``.
    """
    return diana_run(fp, p, blocks, 0.0, gamma, 0.0, psi, K, batch, rng, x0, x_star, f_star,
                     None, record_every)
