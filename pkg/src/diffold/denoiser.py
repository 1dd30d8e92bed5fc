"""Gated graph denoising network.

Six (configurable) stacked layers, each running three sublayers over the
residue graph — gated message passing, a shared-center context node, and
cross-attention alignment against per-type semantic embeddings — followed by
a timestep-conditioned feature-wise affine.  The output head maps the final
node states plus a secondary-structure embedding to 20 type logits.

Built entirely on :mod:`diffold.autodiff`, so the whole forward pass is
differentiable and finite-difference checkable.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NumericFault, Tensor
from .features import EDGE_FEAT_DIM, NODE_FEAT_DIM, ResidueGraph

N_TYPES = 20
N_SS_CLASSES = 8


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters (persisted in checkpoints)."""

    hidden_dim: int = 128
    n_layers: int = 6
    activation: str = "gelu"
    use_shared_center: bool = True
    freeze_type_embeddings: bool = False

    def __post_init__(self):
        if self.hidden_dim < 2 or self.hidden_dim % 2 != 0:
            raise ValueError("hidden_dim must be an even integer >= 2")
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.activation not in ad.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class LayerTrace:
    """Per-layer artifacts captured during one forward pass."""

    node_states: list[np.ndarray] = field(default_factory=list)    # (N, d) each
    align_attention: list[np.ndarray] = field(default_factory=list)  # (N, 20) each
    center_attention: list[np.ndarray] = field(default_factory=list)  # (1, N) each

    @property
    def n_layers(self) -> int:
        return len(self.node_states)


@dataclass
class ForwardResult:
    logits: Tensor                  # (N, 20)
    align_probs: list[Tensor]       # per-layer (N, 20) attention rows
    trace: LayerTrace | None


class DenoiserParams:
    """All learnable tensors, keyed by dotted names in a fixed order."""

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor]):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def trainable(self) -> list[tuple[str, Tensor]]:
        skip_type_emb = self.config.freeze_type_embeddings
        return [
            (name, t)
            for name, t in self.tensors.items()
            if not (skip_type_emb and name.endswith("ra.h_c"))
        ]

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def n_params(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "DenoiserParams":
        rng = np.random.default_rng(seed)
        d = config.hidden_dim
        tensors: dict[str, Tensor] = {}

        def matrix(name: str, fan_in: int, fan_out: int) -> None:
            std = math.sqrt(2.0 / (fan_in + fan_out))
            tensors[name] = Tensor(
                rng.normal(0.0, std, size=(fan_in, fan_out)), requires_grad=True
            )

        def linear(name: str, fan_in: int, fan_out: int, zero: bool = False) -> None:
            if zero:
                tensors[f"{name}.w"] = Tensor(np.zeros((fan_in, fan_out)), requires_grad=True)
            else:
                matrix(f"{name}.w", fan_in, fan_out)
            tensors[f"{name}.b"] = Tensor(np.zeros((1, fan_out)), requires_grad=True)

        def norm(name: str) -> None:
            tensors[f"{name}.g"] = Tensor(np.ones((1, d)), requires_grad=True)
            tensors[f"{name}.b"] = Tensor(np.zeros((1, d)), requires_grad=True)

        def cell(name: str, a_width: int, b_width: int) -> None:
            linear(f"{name}.g1", a_width + b_width, a_width)
            linear(f"{name}.g2", a_width + b_width, a_width)
            linear(f"{name}.pb", b_width, a_width)
            linear(f"{name}.pa", a_width, a_width)

        linear("input", N_TYPES + NODE_FEAT_DIM, d)
        for i in range(config.n_layers):
            p = f"layer{i}"
            norm(f"{p}.ln1")
            linear(f"{p}.edge", EDGE_FEAT_DIM, d)
            cell(f"{p}.mp.cell", 2 * d, d)
            linear(f"{p}.mp.mlp1", 3 * d, d)
            linear(f"{p}.mp.mlp2", d, d)
            if config.use_shared_center:
                norm(f"{p}.ln2")
                tensors[f"{p}.sc.h_s"] = Tensor(
                    rng.normal(0.0, 1.0, size=(1, d)), requires_grad=True
                )
                # Attention projections are pure matrices, no bias (a key
                # bias cancels inside the softmax and would be untrainable).
                matrix(f"{p}.sc.wq", d, d)
                matrix(f"{p}.sc.wk", d, d)
                matrix(f"{p}.sc.wv", d, d)
                cell(f"{p}.sc.cell", d, d)
            norm(f"{p}.ln3")
            tensors[f"{p}.ra.h_c"] = Tensor(
                rng.normal(0.0, 1.0, size=(N_TYPES, d)), requires_grad=True
            )
            matrix(f"{p}.ra.wq", d, d)
            matrix(f"{p}.ra.wk", d, d)
            matrix(f"{p}.ra.wv", d, d)
            linear(f"{p}.time.mlp1", d, d)
            # Zero-init so every layer starts as the identity conditioning.
            linear(f"{p}.time.mlp2", d, 2 * d, zero=True)
        linear("head.ss", N_SS_CLASSES, d)
        linear("head.mlp1", d, d)
        linear("head.mlp2", d, N_TYPES)
        return cls(config, tensors)


def _lin(params: DenoiserParams, name: str, x: Tensor) -> Tensor:
    return ad.add(ad.matmul(x, params[f"{name}.w"]), params[f"{name}.b"])


def _act(params: DenoiserParams):
    return ad.ACTIVATIONS[params.config.activation]


def cell(a: Tensor, b: Tensor, params: DenoiserParams, prefix: str) -> Tensor:
    """Gated fusion of a carried stream ``a`` with a modulating stream ``b``.

    Two sigmoid gates from [b; a]; a candidate Act(Lin(b) + g1 * Lin(a));
    output g2 * a + (1 - g2) * candidate.
    """
    act = _act(params)
    ba = ad.concat([b, a])
    g1 = ad.sigmoid(_lin(params, f"{prefix}.g1", ba))
    g2 = ad.sigmoid(_lin(params, f"{prefix}.g2", ba))
    cand = act(ad.add(_lin(params, f"{prefix}.pb", b),
                      ad.mul(g1, _lin(params, f"{prefix}.pa", a))))
    one_minus_g2 = ad.add(ad.scale(g2, -1.0), Tensor(np.ones_like(g2.data)))
    return ad.add(ad.mul(g2, a), ad.mul(one_minus_g2, cand))


def message_passing_layer(
    h: Tensor,
    edge_feats: Tensor,
    edges: np.ndarray,
    params: DenoiserParams,
    prefix: str,
) -> Tensor:
    """Residual update from gated neighbor messages.

    Each edge (j -> i) carries [h_i; h_j] fused with its projected edge
    features through the cell, summed per destination, and mixed back into
    the node state by a two-layer MLP.
    """
    act = _act(params)
    n = h.shape[0]
    src = edges[:, 0]
    dst = edges[:, 1]
    e = _lin(params, f"{prefix}.edge", edge_feats)
    m = ad.concat([ad.gather_rows(h, dst), ad.gather_rows(h, src)])
    fused = cell(m, e, params, f"{prefix}.mp.cell")
    agg = ad.scatter_sum(fused, dst, n)
    hidden = act(_lin(params, f"{prefix}.mp.mlp1", ad.concat([h, agg])))
    return _lin(params, f"{prefix}.mp.mlp2", hidden)


def shared_center(
    h: Tensor, params: DenoiserParams, prefix: str
) -> tuple[Tensor, Tensor]:
    """Global context via a learned virtual node, redistributed per residue.

    Returns the updated node rows and the (1, N) attention row the virtual
    node used to pool the protein.
    """
    d = params.config.hidden_dim
    n = h.shape[0]
    qs = ad.matmul(params[f"{prefix}.sc.h_s"], params[f"{prefix}.sc.wq"])
    kh = ad.matmul(h, params[f"{prefix}.sc.wk"])
    vh = ad.matmul(h, params[f"{prefix}.sc.wv"])
    attn = ad.softmax(ad.scale(ad.matmul(qs, ad.transpose(kh)), 1.0 / math.sqrt(d)))
    hg = ad.matmul(attn, vh)
    out = cell(ad.repeat_rows(hg, n), h, params, f"{prefix}.sc.cell")
    return out, attn


def representation_alignment(
    h: Tensor, params: DenoiserParams, prefix: str
) -> tuple[Tensor, Tensor]:
    """Cross-attention from node states to the 20 type embeddings.

    Returns the aligned rows (convex combinations of the value-projected
    type embeddings) and the (N, 20) attention matrix.
    """
    d = params.config.hidden_dim
    h_c = params[f"{prefix}.ra.h_c"]
    q = ad.matmul(h, params[f"{prefix}.ra.wq"])
    kc = ad.matmul(h_c, params[f"{prefix}.ra.wk"])
    vc = ad.matmul(h_c, params[f"{prefix}.ra.wv"])
    probs = ad.softmax(ad.scale(ad.matmul(q, ad.transpose(kc)), 1.0 / math.sqrt(d)))
    aligned = ad.matmul(probs, vc)
    return aligned, probs


def sinusoidal_embedding(t: int, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = float(t) * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])[None, :]


def time_condition(h: Tensor, t: int, params: DenoiserParams, prefix: str) -> Tensor:
    """Feature-wise affine ``h * (gamma + 1) + beta`` from the timestep."""
    act = _act(params)
    d = params.config.hidden_dim
    emb = Tensor(sinusoidal_embedding(t, d))
    hidden = act(_lin(params, f"{prefix}.time.mlp1", emb))
    gb = _lin(params, f"{prefix}.time.mlp2", hidden)
    gamma = ad.slice_cols(gb, 0, d)
    beta = ad.slice_cols(gb, d, 2 * d)
    return ad.scale_shift(h, gamma, beta)


def output_head(h: Tensor, ss_classes: np.ndarray, params: DenoiserParams) -> Tensor:
    """Type logits from final node states plus the ss-class embedding."""
    act = _act(params)
    n = h.shape[0]
    onehot = np.zeros((n, N_SS_CLASSES))
    onehot[np.arange(n), np.asarray(ss_classes, dtype=np.int64)] = 1.0
    x = ad.add(h, _lin(params, "head.ss", Tensor(onehot)))
    hidden = act(_lin(params, "head.mlp1", x))
    return _lin(params, "head.mlp2", hidden)


def denoiser_forward(
    st: np.ndarray,
    t: int,
    graph: ResidueGraph,
    params: DenoiserParams,
    capture_trace: bool = False,
) -> ForwardResult:
    """Full network pass predicting clean-type logits from a noisy state.

    ``st`` is the (N, 20) noisy type state (one-hot rows during sampling).
    The trace, when requested, records per-layer node states, alignment
    attention, and the shared-center attention row.
    """
    n = graph.n_nodes
    st = np.asarray(st, dtype=np.float64)
    if st.shape != (n, N_TYPES):
        raise ValueError(f"state shape {st.shape} does not match graph ({n}, {N_TYPES})")
    cfg = params.config

    inp = Tensor(np.concatenate([st, graph.node_feats], axis=1))
    edge_feats = Tensor(graph.edge_feats)
    h = _lin(params, "input", inp)

    trace = LayerTrace() if capture_trace else None
    align_probs: list[Tensor] = []
    for i in range(cfg.n_layers):
        p = f"layer{i}"
        try:
            hn = ad.layer_norm(h, params[f"{p}.ln1.g"], params[f"{p}.ln1.b"])
            h = ad.add(h, message_passing_layer(hn, edge_feats, graph.edges, params, p))
            if cfg.use_shared_center:
                hn = ad.layer_norm(h, params[f"{p}.ln2.g"], params[f"{p}.ln2.b"])
                sc_out, sc_attn = shared_center(hn, params, p)
                h = ad.add(h, sc_out)
            else:
                sc_attn = None
            hn = ad.layer_norm(h, params[f"{p}.ln3.g"], params[f"{p}.ln3.b"])
            aligned, probs = representation_alignment(hn, params, p)
            h = ad.add(h, aligned)
            h = time_condition(h, t, params, p)
        except NumericFault as exc:
            raise NumericFault(f"layer {i}: {exc}") from exc
        align_probs.append(probs)
        if trace is not None:
            trace.node_states.append(h.data.copy())
            trace.align_attention.append(probs.data.copy())
            if sc_attn is not None:
                trace.center_attention.append(sc_attn.data.copy())
    logits = output_head(h, graph.ss_classes, params)
    return ForwardResult(logits=logits, align_probs=align_probs, trace=trace)
