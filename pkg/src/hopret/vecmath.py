"""Fixed-order float kernels shared by every scoring path.

All inner products in the engine go through ``dot_scores`` / ``dot``.
``np.einsum`` (without ``optimize``) accumulates each row independently in an
order that depends only on the vector length, never on how many other rows
are in the batch, so a passage's score is bit-identical whether it was
computed by a full flat scan, an HNSW candidate expansion, or an oracle
re-derivation over a hand-picked subset.  BLAS-backed ``@`` does not have
this property (its blocking varies with matrix shape), which is why it is
not used for scores anywhere.
"""

from __future__ import annotations

import numpy as np

LAYERNORM_EPS = 1e-5


def dot_scores(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Inner product of each row of `matrix` with `query`."""
    return np.einsum("ij,j->i", matrix, query)


def dot(vector: np.ndarray, query: np.ndarray) -> float:
    """Single inner product on the same accumulation path as `dot_scores`."""
    return float(np.einsum("ij,j->i", vector.reshape(1, -1), query)[0])


def layer_norm(values: np.ndarray) -> np.ndarray:
    """(x - mean) / (population std + eps), row-wise for 2-D input.

    The epsilon guard maps an all-constant row (std 0) to the zero vector.
    """
    mean = values.mean(axis=-1, keepdims=True)
    centered = values - mean
    std = np.sqrt((centered * centered).mean(axis=-1, keepdims=True))
    return centered / (std + LAYERNORM_EPS)


def layer_norm_backward(pre_norm: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Gradient of `layer_norm` w.r.t. its input, row-wise.

    `pre_norm` is the input that was normalized; `grad_out` the gradient of
    the loss w.r.t. the normalized output.  Rows with zero variance get the
    centered-gradient term only (the std term has no defined derivative
    there and its coefficient vanishes).
    """
    z = np.atleast_2d(pre_norm)
    g = np.atleast_2d(grad_out)
    d = z.shape[-1]
    mean = z.mean(axis=-1, keepdims=True)
    centered = z - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    std = np.sqrt(var)
    inv = 1.0 / (std + LAYERNORM_EPS)
    g_mean = g.mean(axis=-1, keepdims=True)
    proj = (g * centered).sum(axis=-1, keepdims=True)
    safe_std = np.where(std > 0.0, std, 1.0)
    correction = np.where(std > 0.0, centered * inv * inv * proj / (d * safe_std), 0.0)
    out = inv * (g - g_mean) - correction
    return out.reshape(np.shape(grad_out))


def top_k_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest scores, descending, ties by ascending index.

    Uses a full stable sort: partial-selection tricks (argpartition) do not
    preserve the tie-break at the k-th boundary.
    """
    order = np.argsort(-scores, kind="stable")
    return order[:k]
