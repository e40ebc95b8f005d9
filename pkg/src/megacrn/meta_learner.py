"""Meta-node bank: prototype memory, attention read, hyper-network graph, memory losses."""
import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError
from .graph_ops import adaptive_graph


@dataclass
class MemoryReadout:
    """Result of reading the bank for every node.

    M: (..., N, d) reconstructed meta-node vectors
    A: (..., N, phi) attention weights, rows sum to one
    top2: (..., N, 2) long indices (positive, negative) ranked by attention
    """

    M: torch.Tensor
    A: torch.Tensor
    top2: torch.Tensor


class MetaNodeBank(nn.Module):
    """Learnable prototypes ``phi`` plus the query projection and hyper-network.

    With ``hyper=False`` the hyper-network weights are not created (memory-only
    ablation). ``hyper_bias`` toggles the bias of the hyper-network FC layer.
    """

    def __init__(self, hidden_dim, memory_size=10, memory_dim=32, embed_dim=8, hyper=True, hyper_bias=True):
        super().__init__()
        if memory_size < 2:
            raise ConfigError(f"memory_size must be >= 2 for top-2 ranking, got {memory_size}")
        self.hidden_dim = hidden_dim
        self.memory_size = memory_size
        self.memory_dim = memory_dim
        self.embed_dim = embed_dim
        self.phi = nn.Parameter(torch.empty(memory_size, memory_dim))
        self.w_q = nn.Parameter(torch.empty(hidden_dim, memory_dim))
        self.b_q = nn.Parameter(torch.empty(memory_dim))
        if hyper:
            self.w_e = nn.Parameter(torch.empty(memory_dim, embed_dim))
            self.b_e = nn.Parameter(torch.empty(embed_dim)) if hyper_bias else None
        else:
            self.w_e = None
            self.b_e = None
        self.reset_parameters()

    @property
    def has_hyper(self):
        return self.w_e is not None

    def reset_parameters(self):
        bound = 1.0 / math.sqrt(self.memory_dim)
        nn.init.uniform_(self.phi, -bound, bound)
        nn.init.xavier_uniform_(self.w_q)
        nn.init.zeros_(self.b_q)
        if self.w_e is not None:
            nn.init.xavier_uniform_(self.w_e)
        if self.b_e is not None:
            nn.init.zeros_(self.b_e)


def query(H, bank):
    """Row-wise affine projection of the hidden state into query space."""
    if H.shape[-1] != bank.w_q.shape[0]:
        raise ValueError(f"hidden width {H.shape[-1]} does not match W_Q rows {bank.w_q.shape[0]}")
    return H @ bank.w_q + bank.b_q


def top2_indices(logits):
    """Indices of the largest and second-largest entry along the last axis.

    Ties go to the lowest index.
    """
    order = torch.sort(logits, dim=-1, descending=True, stable=True).indices
    return order[..., :2]


def read(Q, phi):
    """Attention read of the prototype memory."""
    if phi.shape[0] < 2:
        raise ConfigError(f"memory needs at least 2 prototypes, got {phi.shape[0]}")
    if Q.shape[-1] != phi.shape[-1]:
        raise ValueError(f"query width {Q.shape[-1]} does not match prototype width {phi.shape[-1]}")
    logits = Q @ phi.t()
    A = F.softmax(logits, dim=-1)
    M = A @ phi
    # ranking the logits gives the same order as ranking A and avoids softmax underflow ties
    return MemoryReadout(M=M, A=A, top2=top2_indices(logits.detach()))


def hyper_embedding(M, bank):
    if not bank.has_hyper:
        raise ConfigError("this bank was built without a hyper-network")
    if M.shape[-1] != bank.w_e.shape[0]:
        raise ValueError(f"meta-node width {M.shape[-1]} does not match W_E rows {bank.w_e.shape[0]}")
    E = M @ bank.w_e
    if bank.b_e is not None:
        E = E + bank.b_e
    return E


def meta_graph(M, bank):
    """Return ``(graph, embedding)`` built from meta-node vectors through the hyper-network."""
    E = hyper_embedding(M, bank)
    return adaptive_graph(E), E


def _sq_dist(Q, phi, idx):
    return ((Q - phi[idx]) ** 2).sum(dim=-1)


def consistency_loss(Q, phi, top2):
    """Sum over nodes of the squared distance to the positive prototype.

    Leading batch axes are kept, so a (B, N, d) query yields a (B,) result.
    """
    return _sq_dist(Q, phi, top2[..., 0]).sum(dim=-1)


def contrastive_loss(Q, phi, top2, margin=1.0):
    """Sum over nodes of ``max(d(Q, pos) - d(Q, neg) + margin, 0)``."""
    if margin < 0:
        raise ValueError("margin must be non-negative")
    pos = _sq_dist(Q, phi, top2[..., 0])
    neg = _sq_dist(Q, phi, top2[..., 1])
    return F.relu(pos - neg + margin).sum(dim=-1)
