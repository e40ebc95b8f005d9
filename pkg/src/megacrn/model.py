"""MegaCRN encoder-decoder and its ablation variants."""
from dataclasses import asdict, dataclass, fields
from typing import Optional

import torch
import torch.nn as nn

from .errors import ConfigError
from .gcru import GCRUStack, decode, encode_layers
from .graph_ops import adaptive_graph, momentary_graph
from .meta_learner import MemoryReadout, MetaNodeBank, meta_graph, query, read

VARIANTS = ("adaptive", "memory", "momentary", "mega")


@dataclass
class ModelConfig:
    n_nodes: int
    in_channels: int = 1
    hidden: int = 32
    layers: int = 1
    cheb_order: int = 2
    embed_dim: int = 8
    memory_size: int = 10
    memory_dim: int = 32
    horizon: int = 12
    lookback: int = 12
    variant: str = "mega"
    hyper_bias: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose one of {', '.join(VARIANTS)}")
        for name in ("n_nodes", "in_channels", "hidden", "layers", "embed_dim", "memory_dim", "horizon", "lookback"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.cheb_order < 0:
            raise ConfigError(f"cheb_order must be >= 0, got {self.cheb_order}")
        if self.uses_memory and self.memory_size < 2:
            raise ConfigError(f"memory_size must be >= 2, got {self.memory_size}")

    @property
    def uses_memory(self):
        return self.variant in ("mega", "memory")

    @property
    def decoder_hidden(self):
        return self.hidden + self.memory_dim if self.uses_memory else self.hidden

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class ForwardTrace:
    """Everything a forward pass produces; memory fields are None for memoryless variants.

    predictions: (..., beta, N, C) in normalized units
    """

    predictions: torch.Tensor
    encoder_graph: torch.Tensor
    decoder_graph: torch.Tensor
    hidden: torch.Tensor
    queries: Optional[torch.Tensor] = None
    readout: Optional[MemoryReadout] = None
    decoder_embedding: Optional[torch.Tensor] = None


class MegaCRN(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        c = config
        self.node_embedding = nn.Parameter(torch.randn(c.n_nodes, c.embed_dim))
        self.encoder = GCRUStack(c.in_channels, c.hidden, c.layers, c.cheb_order)
        if c.uses_memory:
            self.memory = MetaNodeBank(
                c.hidden, c.memory_size, c.memory_dim, c.embed_dim,
                hyper=c.variant == "mega", hyper_bias=c.hyper_bias,
            )
        else:
            self.memory = None
        if c.variant == "momentary":
            self.momentary_proj = nn.Parameter(torch.empty(c.hidden, c.embed_dim))
            nn.init.xavier_uniform_(self.momentary_proj)
        else:
            self.momentary_proj = None
        self.decoder = GCRUStack(c.in_channels, c.decoder_hidden, c.layers, c.cheb_order)
        self.readout = nn.Linear(c.decoder_hidden, c.in_channels)

    @property
    def variant(self):
        return self.config.variant

    def forward(self, x):
        """``x``: (..., alpha, N, C) normalized inputs -> ForwardTrace."""
        c = self.config
        if x.shape[-2] != c.n_nodes or x.shape[-1] != c.in_channels:
            raise ValueError(f"expected (..., alpha, {c.n_nodes}, {c.in_channels}) input, got {tuple(x.shape)}")

        enc_graph = adaptive_graph(self.node_embedding)
        states = encode_layers(x, enc_graph, self.encoder.cells)
        H = states[-1]

        Q = readout = E_dec = None
        if c.uses_memory:
            Q = query(H, self.memory)
            readout = read(Q, self.memory.phi)
            states = [torch.cat([s, readout.M], dim=-1) for s in states]

        if c.variant == "mega":
            dec_graph, E_dec = meta_graph(readout.M, self.memory)
        elif c.variant == "momentary":
            dec_graph = momentary_graph(H, self.momentary_proj)
        else:
            dec_graph = enc_graph

        preds = decode(states, dec_graph, c.horizon, self.decoder.cells, self.readout)
        return ForwardTrace(
            predictions=preds,
            encoder_graph=enc_graph,
            decoder_graph=dec_graph,
            hidden=H,
            queries=Q,
            readout=readout,
            decoder_embedding=E_dec,
        )

    def zero_parameters_(self):
        with torch.no_grad():
            for p in self.parameters():
                p.zero_()
        return self


def parameter_breakdown(config: ModelConfig):
    """Trainable scalar count per checkpoint key."""
    model = MegaCRN(config)
    return {name: p.numel() for name, p in model.named_parameters()}


def count_parameters(config: ModelConfig):
    return sum(parameter_breakdown(config).values())
