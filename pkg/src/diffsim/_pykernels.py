"""NumPy implementation of the Gaussian-kernel reductions.

Used when the compiled ``_ckernels`` extension is unavailable, and as the
reference the compiled path is tested against.
"""
import numpy as np

BLOCK = 128


def kernel_weights(samples, x, beta):
    if x.shape[0] != samples.shape[1]:
        raise ValueError("dimension mismatch")
    d = samples - x
    return np.exp(-beta * np.einsum("ij,ij->i", d, d))


def _pairwise(parts):
    # parts: (nb, ...) block partials, combined in a balanced binary tree
    while parts.shape[0] > 1:
        if parts.shape[0] % 2:
            head = parts[:-1:2] + parts[1::2]
            parts = np.concatenate([head, parts[-1:]], axis=0)
        else:
            parts = parts[0::2] + parts[1::2]
    return parts[0]


def kernel_stats(samples, x, beta, second):
    """Return (sum_k w_k, sum_k w_k s_k, sum_k w_k (x-s_k)(x-s_k)^T or None)."""
    N, n = samples.shape
    if x.shape[0] != n:
        raise ValueError("dimension mismatch")
    if N == 0:
        raise ValueError("empty sample")
    nb = -(-N // BLOCK)
    pad = nb * BLOCK - N
    s = np.concatenate([samples, np.zeros((pad, n))]) if pad else samples
    s = s.reshape(nb, BLOCK, n)
    d = x - s
    w = np.exp(-beta * np.einsum("bki,bki->bk", d, d))
    if pad:
        w.reshape(-1)[N:] = 0.0

    ksum = float(_pairwise(w.sum(axis=1)))
    first = _pairwise(np.einsum("bk,bkj->bj", w, s))
    if not second:
        return ksum, first, None
    dw = d * w[:, :, None]
    m2 = _pairwise(np.matmul(dw.transpose(0, 2, 1), d))
    return ksum, first, 0.5 * (m2 + m2.T)
