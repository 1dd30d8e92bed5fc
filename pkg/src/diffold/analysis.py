"""Diagnostic analyses: layer-wise nonlinearity and attention exports.

The nonlinearity measure histograms each hidden dimension's node values for
two adjacent layers over a shared range and reports the log of the
dimension-averaged KL divergence — larger values mean the layer transformed
the feature distribution more.  Attention exports flatten the alignment
attention maps into CSV for external heat-map plotting.
"""

from __future__ import annotations

import csv
from dataclasses import asdict

import numpy as np

from .denoiser import DenoiserParams, LayerTrace, denoiser_forward
from .diffusion import sample_uniform_hard
from .features import ResidueGraph

KL_BINS = 64
KL_EPS = 1e-9
KL_RANGE_PAD = 0.01


class AnalysisError(ValueError):
    """Inputs unsuitable for the requested analysis."""


def _histogram_kl(a: np.ndarray, b: np.ndarray, eps: float) -> float:
    """KL(P_a || P_b) of two samples over a shared padded 64-bin range."""
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    span = hi - lo
    if span == 0.0:
        return 0.0
    lo -= KL_RANGE_PAD * span
    hi += KL_RANGE_PAD * span
    ca, _ = np.histogram(a, bins=KL_BINS, range=(lo, hi))
    cb, _ = np.histogram(b, bins=KL_BINS, range=(lo, hi))
    p = (ca + eps) / (ca.sum() + KL_BINS * eps)
    q = (cb + eps) / (cb.sum() + KL_BINS * eps)
    return float(np.sum(p * np.log(p / q)))


def layer_kl(trace: LayerTrace, eps: float = KL_EPS) -> np.ndarray:
    """Log KL divergence of node-state distributions per adjacent layer pair.

    Returns a vector of length n_layers - 1, entry l comparing layer l to
    layer l + 1.  Identical layers floor at ln(eps).
    """
    if trace.n_layers < 2:
        raise AnalysisError("layer_kl requires a trace with at least 2 layers")
    if trace.node_states[0].shape[0] < 2:
        raise AnalysisError("layer_kl degenerate for single-node proteins")
    out = np.empty(trace.n_layers - 1)
    for l in range(trace.n_layers - 1):
        a = trace.node_states[l]
        b = trace.node_states[l + 1]
        kls = [_histogram_kl(a[:, j], b[:, j], eps) for j in range(a.shape[1])]
        out[l] = np.log(max(float(np.mean(kls)), eps))
    return out


def write_kl_csv(values: np.ndarray, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer_from", "layer_to", "log_kl"])
        for l, v in enumerate(values):
            writer.writerow([l, l + 1, f"{v:.6f}"])


def alignment_attention_rows(
    trace: LayerTrace, true_types: np.ndarray, predicted_types: np.ndarray
) -> list[list]:
    """Flatten per-layer alignment attention into exportable rows.

    One row per (layer, residue): layer index, residue index, true type,
    predicted type, then the 20 attention weights.
    """
    rows = []
    for layer, attn in enumerate(trace.align_attention):
        for i in range(attn.shape[0]):
            rows.append(
                [layer, i, int(true_types[i]), int(predicted_types[i])]
                + [float(w) for w in attn[i]]
            )
    return rows


def export_alignment_attention(
    trace: LayerTrace,
    true_types: np.ndarray,
    predicted_types: np.ndarray,
    path,
) -> list[list]:
    rows = alignment_attention_rows(trace, true_types, predicted_types)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["layer", "residue_index", "true_type", "predicted_type"]
            + [f"w{i}" for i in range(20)]
        )
        for row in rows:
            writer.writerow(row[:4] + [f"{w:.8f}" for w in row[4:]])
    return rows


def compare_sc_ablation(
    graphs: list[ResidueGraph],
    params_with: DenoiserParams,
    params_without: DenoiserParams,
    t: int,
    seed: int = 0,
) -> list[dict]:
    """Paired log-KL series for the shared-center ablation.

    Both models see the same noisy input per protein.  Configs must agree on
    everything except the shared-center flag.  Returns one row per model per
    adjacent layer pair with the mean log KL over the sample.
    """
    cfg_w = asdict(params_with.config)
    cfg_wo = asdict(params_without.config)
    if not cfg_w.pop("use_shared_center") or cfg_wo.pop("use_shared_center"):
        raise AnalysisError(
            "expected params_with to use the shared center and params_without not to"
        )
    if cfg_w != cfg_wo:
        diff = {k for k in cfg_w if cfg_w[k] != cfg_wo[k]}
        raise AnalysisError(f"configs differ beyond the shared-center flag: {sorted(diff)}")
    if not graphs:
        raise AnalysisError("no graphs to analyze")

    n_pairs = params_with.config.n_layers - 1
    sums = {"with_sc": np.zeros(n_pairs), "without_sc": np.zeros(n_pairs)}
    for idx, graph in enumerate(graphs):
        rng = np.random.default_rng((seed, idx))
        state = sample_uniform_hard(graph.n_nodes, 20, rng)
        for label, params in (("with_sc", params_with), ("without_sc", params_without)):
            fwd = denoiser_forward(state, t, graph, params, capture_trace=True)
            sums[label] += layer_kl(fwd.trace)
    rows = []
    for label in ("with_sc", "without_sc"):
        for l in range(n_pairs):
            rows.append(
                {
                    "model": label,
                    "layer_from": l,
                    "layer_to": l + 1,
                    "mean_log_kl": float(sums[label][l] / len(graphs)),
                    "n_proteins": len(graphs),
                }
            )
    return rows


def write_sc_ablation_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["model", "layer_from", "layer_to", "mean_log_kl", "n_proteins"]
        )
        writer.writeheader()
        writer.writerows(rows)


def write_schedule_csv(schedule, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "alpha", "alpha_bar"])
        for t in range(1, schedule.T + 1):
            writer.writerow([t, repr(schedule.alpha_at(t)), repr(schedule.alpha_bar_at(t))])
