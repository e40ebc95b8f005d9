"""Learned graph constructors and power-series graph convolution.

All functions accept optional leading batch dimensions: a graph is ``(..., N, N)``,
a node signal is ``(..., N, C)``.
"""
import torch
import torch.nn.functional as F


def _check_square(S):
    if S.dim() < 2 or S.shape[-1] != S.shape[-2]:
        raise ValueError(f"score matrix must be square, got shape {tuple(S.shape)}")


def normalize_scores(S):
    """Row-wise softmax of ``relu(S)``; rows of the result sum to one."""
    _check_square(S)
    if not torch.isfinite(S).all():
        raise ValueError("score matrix contains non-finite entries")
    # softmax subtracts the row max internally
    return F.softmax(F.relu(S), dim=-1)


def adaptive_graph(E):
    """Graph from a node embedding ``E`` of shape (..., N, e)."""
    if E.dim() < 2:
        raise ValueError(f"node embedding must be at least 2-D, got {tuple(E.shape)}")
    return normalize_scores(E @ E.transpose(-1, -2))


def momentary_graph(H, W):
    """Input-conditioned graph: project hidden state ``H`` (..., N, h) with ``W`` (h, e)."""
    if W.dim() != 2 or H.shape[-1] != W.shape[0]:
        raise ValueError(
            f"cannot project hidden state {tuple(H.shape)} with weight {tuple(W.shape)}"
        )
    return adaptive_graph(H @ W)


def graph_powers(X, P, order):
    """Stack ``[X, PX, P^2 X, ...]`` along the feature axis -> (..., N, (order+1)*C)."""
    if X.shape[-2] != P.shape[-1]:
        raise ValueError(
            f"signal has {X.shape[-2]} nodes but graph has {P.shape[-1]}"
        )
    terms = [X]
    for _ in range(order):
        terms.append(P @ terms[-1])
    if len(terms) == 1:
        return X
    return torch.cat(torch.broadcast_tensors(*terms), dim=-1)


def cheb_graph_conv(X, P, weights):
    """``sum_k P^k X W_k`` with ``weights`` of shape (K+1, C_in, C_out); no activation."""
    if weights.dim() != 3:
        raise ValueError(f"kernel must be (K+1, C_in, C_out), got {tuple(weights.shape)}")
    n_terms, c_in, c_out = weights.shape
    if X.shape[-1] != c_in:
        raise ValueError(f"signal has {X.shape[-1]} channels, kernel expects {c_in}")
    feats = graph_powers(X, P, n_terms - 1)
    # term-major layout matches weights.reshape: row k*C_in + c is (term k, channel c)
    return feats @ weights.reshape(n_terms * c_in, c_out)
