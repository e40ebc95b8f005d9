"""Graph convolutional GRU cell and the encoder / decoder loops built on it."""
import math

import torch
import torch.nn as nn

from .graph_ops import graph_powers


class GCRUCell(nn.Module):
    """GRU cell whose matrix products are graph convolutions over a supplied graph.

    Each gate kernel has shape (K+1, C+h, h); the input rows come first, then the
    hidden rows, matching the feature-axis concatenation ``[X_t, H_{t-1}]``.
    """

    def __init__(self, input_dim, hidden_dim, cheb_order=2):
        super().__init__()
        if input_dim < 1 or hidden_dim < 1 or cheb_order < 0:
            raise ValueError("input_dim, hidden_dim must be positive and cheb_order >= 0")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.cheb_order = cheb_order
        shape = (cheb_order + 1, input_dim + hidden_dim, hidden_dim)
        self.theta_u = nn.Parameter(torch.empty(shape))
        self.theta_r = nn.Parameter(torch.empty(shape))
        self.theta_c = nn.Parameter(torch.empty(shape))
        self.b_u = nn.Parameter(torch.empty(hidden_dim))
        self.b_r = nn.Parameter(torch.empty(hidden_dim))
        self.b_c = nn.Parameter(torch.empty(hidden_dim))
        self.reset_parameters()

    def reset_parameters(self):
        fan_in = (self.cheb_order + 1) * (self.input_dim + self.hidden_dim)
        bound = math.sqrt(6.0 / (fan_in + self.hidden_dim))
        for theta in (self.theta_u, self.theta_r, self.theta_c):
            nn.init.uniform_(theta, -bound, bound)
        for b in (self.b_u, self.b_r, self.b_c):
            nn.init.zeros_(b)

    def forward(self, x, h_prev, P):
        return gcru_step(x, h_prev, P, self)


def _flat(theta):
    k1, c_in, c_out = theta.shape
    return theta.reshape(k1 * c_in, c_out)


def fused_weights(cell):
    """Flattened kernels with the u and r gates side by side.

    Building these once per sequence instead of once per step saves a few ops
    in every step of the forward and backward pass.
    """
    w_ur = torch.cat([_flat(cell.theta_u), _flat(cell.theta_r)], dim=-1)
    b_ur = torch.cat([cell.b_u, cell.b_r])
    return w_ur, b_ur, _flat(cell.theta_c), cell.b_c


def gcru_step(x, h_prev, P, cell, weights=None):
    """One recurrent update. ``x``: (..., N, C), ``h_prev``: (..., N, h), ``P``: (..., N, N).

    ``weights`` may carry a precomputed ``fused_weights(cell)``.
    """
    if x.shape[-1] != cell.input_dim or h_prev.shape[-1] != cell.hidden_dim:
        raise ValueError(
            f"cell expects C={cell.input_dim}, h={cell.hidden_dim}; "
            f"got x {tuple(x.shape)}, h {tuple(h_prev.shape)}"
        )
    n = x.shape[-2]
    if h_prev.shape[-2] != n or P.shape[-1] != n or P.shape[-2] != n:
        raise ValueError(
            f"node count mismatch: x {tuple(x.shape)}, h {tuple(h_prev.shape)}, P {tuple(P.shape)}"
        )
    h = cell.hidden_dim
    K = cell.cheb_order
    w_ur, b_ur, w_c, b_c = fused_weights(cell) if weights is None else weights

    # u and r read the same graph features, so one product serves both gates
    feats = graph_powers(torch.cat([x, h_prev], dim=-1), P, K)
    ur = torch.sigmoid(torch.addmm(b_ur, feats.reshape(-1, feats.shape[-1]), w_ur).reshape(*feats.shape[:-1], 2 * h))
    u, r = ur[..., :h], ur[..., h:]

    feats_c = graph_powers(torch.cat([x, r * h_prev], dim=-1), P, K)
    c = torch.tanh(torch.addmm(b_c, feats_c.reshape(-1, feats_c.shape[-1]), w_c).reshape(*feats_c.shape[:-1], h))
    return c + u * (h_prev - c)


class GCRUStack(nn.Module):
    """Stacked cells registered as ``cell0``, ``cell1``, ... (stable checkpoint keys)."""

    def __init__(self, input_dim, hidden_dim, layers=1, cheb_order=2):
        super().__init__()
        if layers < 1:
            raise ValueError("layers must be >= 1")
        self.layers = layers
        for i in range(layers):
            self.add_module(f"cell{i}", GCRUCell(input_dim if i == 0 else hidden_dim, hidden_dim, cheb_order))

    @property
    def cells(self):
        return [getattr(self, f"cell{i}") for i in range(self.layers)]

    @property
    def hidden_dim(self):
        return self.cell0.hidden_dim


def _init_hidden(like, cells):
    return [like.new_zeros(*like.shape[:-1], cell.hidden_dim) for cell in cells]


def encode_layers(seq, P, cells):
    """Unroll over the time axis of ``seq`` (..., T, N, C) from zero state.

    Returns the final hidden state of every layer.
    """
    if seq.dim() < 3 or seq.shape[-3] < 1:
        raise ValueError("encoder input sequence must contain at least one step")
    states = _init_hidden(seq[..., 0, :, :], cells)
    weights = [fused_weights(cell) for cell in cells]
    for t in range(seq.shape[-3]):
        inp = seq[..., t, :, :]
        for i, cell in enumerate(cells):
            states[i] = gcru_step(inp, states[i], P, cell, weights[i])
            inp = states[i]
    return states


def encode(seq, P, cells):
    """Final hidden state of the last layer after reading ``seq``."""
    return encode_layers(seq, P, cells)[-1]


def decode(h_init, graph_provider, steps, cells, readout):
    """Autoregressive decoder.

    ``h_init`` is one initial state per layer (a bare tensor is accepted for a
    single layer). ``graph_provider`` is either a fixed graph tensor or a callable
    ``step -> graph``. ``readout`` maps the top hidden state to ``C`` channels; its
    output is fed back as the next step's input, starting from an all-zero frame.
    Returns predictions of shape (..., steps, N, C).
    """
    if steps < 1:
        raise ValueError("decoder needs at least one step")
    states = [h_init] if torch.is_tensor(h_init) else list(h_init)
    if len(states) != len(cells):
        raise ValueError(f"got {len(states)} initial states for {len(cells)} layers")
    provider = graph_provider if callable(graph_provider) else (lambda _step: graph_provider)

    top = states[-1]
    inp = top.new_zeros(*top.shape[:-1], cells[0].input_dim)
    weights = [fused_weights(cell) for cell in cells]
    outputs = []
    for step in range(steps):
        P = provider(step)
        layer_in = inp
        for i, cell in enumerate(cells):
            states[i] = gcru_step(layer_in, states[i], P, cell, weights[i])
            layer_in = states[i]
        inp = readout(states[-1])
        outputs.append(inp)
    return torch.stack(outputs, dim=-3)
