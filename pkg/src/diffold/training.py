"""Training loop, losses, optimizer, and checkpointing.

The objective is a weighted sum of two cross-entropies: the prediction loss
on the output logits and the alignment loss tying the type-attention rows to
the true types.  Optimization is adaptive moments with decoupled weight
decay, gradient accumulation, and a global-norm clip.  Checkpoints are a
deterministic binary container (JSON header + raw float64 blobs) so that
save -> load -> save is byte-identical and resumed runs follow the same
trajectory as unbroken ones.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NumericFault, Tensor
from .denoiser import DenoiserParams, ForwardResult, ModelConfig, denoiser_forward
from .diffusion import TransitionSchedule, forward_sample, make_schedule, one_hot
from .features import ResidueGraph

CHECKPOINT_MAGIC = b"DFCP"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    """Unreadable, corrupt, or incompatible checkpoint file."""


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters (persisted in checkpoints)."""

    lr: float = 5e-4
    weight_decay: float = 1e-5
    batch_size: int = 32
    grad_accum_steps: int = 2
    total_steps: int = 1000
    alpha: float = 0.5          # prediction-loss weight
    lam: float = 0.5            # alignment-loss weight
    seed: int = 0
    T: int = 500
    schedule: str = "cosine"
    grad_clip: float = 10.0
    attn_loss_all_layers: bool = False

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.alpha < 0 or self.lam < 0:
            raise ValueError("loss weights must be >= 0")
        if self.batch_size < 1 or self.grad_accum_steps < 1:
            raise ValueError("batch_size and grad_accum_steps must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def prediction_loss(logits: Tensor, true_types: np.ndarray) -> Tensor:
    """Mean cross-entropy of softmax(logits) against the true types."""
    return ad.cross_entropy(logits, true_types)


def attention_loss(align_probs: Tensor, true_types: np.ndarray) -> Tensor:
    """Mean negative log alignment probability of the true type per node."""
    return ad.nll_from_probs(align_probs, true_types, eps=1e-12)


def total_loss(l_pred: Tensor, l_attn: Tensor, alpha: float, lam: float) -> Tensor:
    return ad.add(ad.scale(l_pred, alpha), ad.scale(l_attn, lam))


class AdamW:
    """Adaptive moments with decoupled weight decay."""

    def __init__(
        self,
        params: DenoiserParams,
        lr: float,
        weight_decay: float = 0.0,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.tensors.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.tensors.items()}

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for name, p in self.params.trainable():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= self.lr * update + self.lr * self.weight_decay * p.data

    def zero_grad(self) -> None:
        self.params.zero_grad()


def global_grad_norm(params: DenoiserParams) -> float:
    total = 0.0
    for _, p in params.trainable():
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return float(np.sqrt(total))


def clip_grad_norm(params: DenoiserParams, max_norm: float) -> float:
    """Scale all gradients so the global norm is at most ``max_norm``."""
    norm = global_grad_norm(params)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for _, p in params.trainable():
            if p.grad is not None:
                p.grad *= factor
    return norm


def protein_loss(
    graph: ResidueGraph,
    params: DenoiserParams,
    schedule: TransitionSchedule,
    config: TrainConfig,
    rng: np.random.Generator,
) -> tuple[Tensor, float, float, ForwardResult]:
    """Corrupt one protein at a random timestep and evaluate the objective."""
    t = int(rng.integers(1, config.T + 1))
    s0 = one_hot(graph.true_types)
    st = forward_sample(s0, t, schedule, rng)
    fwd = denoiser_forward(st, t, graph, params)
    l_pred = prediction_loss(fwd.logits, graph.true_types)
    if config.attn_loss_all_layers:
        pieces = [attention_loss(p, graph.true_types) for p in fwd.align_probs]
        l_attn = pieces[0]
        for piece in pieces[1:]:
            l_attn = ad.add(l_attn, piece)
        l_attn = ad.scale(l_attn, 1.0 / len(pieces))
    else:
        l_attn = attention_loss(fwd.align_probs[-1], graph.true_types)
    loss = total_loss(l_pred, l_attn, config.alpha, config.lam)
    return loss, l_pred.item(), l_attn.item(), fwd


def train_step(
    batch: list[ResidueGraph],
    params: DenoiserParams,
    schedule: TransitionSchedule,
    config: TrainConfig,
    rng: np.random.Generator,
) -> dict:
    """Accumulate gradients of the mean batch loss; returns batch metrics."""
    scale_factor = 1.0 / (len(batch) * config.grad_accum_steps)
    pred_sum = attn_sum = total_sum = 0.0
    for graph in batch:
        try:
            loss, l_pred, l_attn, _ = protein_loss(graph, params, schedule, config, rng)
            ad.scale(loss, scale_factor).backward()
        except NumericFault as exc:
            raise NumericFault(f"protein {graph.id!r}: {exc}") from exc
        pred_sum += l_pred
        attn_sum += l_attn
        total_sum += config.alpha * l_pred + config.lam * l_attn
    n = len(batch)
    return {"l_pred": pred_sum / n, "l_attn": attn_sum / n, "total": total_sum / n}


@dataclass
class TrainResult:
    params: DenoiserParams
    optimizer: AdamW
    rng: np.random.Generator
    history: list[dict] = field(default_factory=list)
    last_step: int = 0


def train(
    graphs: list[ResidueGraph],
    model_config: ModelConfig,
    config: TrainConfig,
    params: DenoiserParams | None = None,
    optimizer: AdamW | None = None,
    rng: np.random.Generator | None = None,
    start_step: int = 0,
    log_path=None,
    callback=None,
) -> TrainResult:
    """Run the training loop.

    A step processes one batch; the optimizer applies an update every
    ``grad_accum_steps`` steps.  ``callback(step, metrics)`` may return True
    to stop early.  All randomness flows through one generator, so a given
    seed fixes the whole trajectory.
    """
    if not graphs:
        raise ValueError("no training graphs")
    if params is None:
        params = DenoiserParams.init(model_config, seed=config.seed)
    if optimizer is None:
        optimizer = AdamW(params, lr=config.lr, weight_decay=config.weight_decay)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    schedule = make_schedule(config.T, kind=config.schedule)

    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    if log_fh:
        log_fh.write("step,l_pred,l_attn,total,grad_norm,wallclock\n")
    t0 = time.perf_counter()
    result = TrainResult(params=params, optimizer=optimizer, rng=rng)
    try:
        for step in range(start_step + 1, config.total_steps + 1):
            order = rng.permutation(len(graphs))[: config.batch_size]
            batch = [graphs[i] for i in order]
            metrics = train_step(batch, params, schedule, config, rng)
            metrics["step"] = step
            if step % config.grad_accum_steps == 0:
                metrics["grad_norm"] = clip_grad_norm(params, config.grad_clip)
                optimizer.step()
                optimizer.zero_grad()
            else:
                metrics["grad_norm"] = float("nan")
            result.history.append(metrics)
            result.last_step = step
            if log_fh:
                log_fh.write(
                    f"{step},{metrics['l_pred']:.6f},{metrics['l_attn']:.6f},"
                    f"{metrics['total']:.6f},{metrics['grad_norm']:.6f},"
                    f"{time.perf_counter() - t0:.3f}\n"
                )
            if callback is not None and callback(step, metrics):
                break
    finally:
        if log_fh:
            log_fh.close()
    return result


# ---------------------------------------------------------------------------
# Checkpoint container
# ---------------------------------------------------------------------------

def save_checkpoint(
    path,
    params: DenoiserParams,
    optimizer: AdamW,
    train_config: TrainConfig,
    step: int,
    rng: np.random.Generator,
) -> None:
    """Write the deterministic binary checkpoint container."""
    names = params.names()
    tensors = []
    blobs = []
    for name in names:
        arr = params[name].data
        tensors.append({"name": name, "role": "param", "shape": list(arr.shape)})
        blobs.append(arr)
    for role, table in (("m", optimizer.m), ("v", optimizer.v)):
        for name in names:
            arr = table[name]
            tensors.append({"name": name, "role": role, "shape": list(arr.shape)})
            blobs.append(arr)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": params.config.to_dict(),
        "train_config": train_config.to_dict(),
        "step": int(step),
        "adam_step": int(optimizer.step_count),
        "rng_state": rng.bit_generator.state,
        "tensors": tensors,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for arr in blobs:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    step: int
    params: DenoiserParams
    optimizer: AdamW
    rng: np.random.Generator


def load_checkpoint(path) -> Checkpoint:
    """Read a checkpoint; rebuilds params, optimizer state, and the RNG."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})"
        )
    (header_len,) = struct.unpack_from("<Q", raw, 8)
    header_start = 16
    try:
        header = json.loads(raw[header_start : header_start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc

    model_config = ModelConfig.from_dict(header["model_config"])
    train_config = TrainConfig.from_dict(header["train_config"])
    params = DenoiserParams.init(model_config, seed=0)
    optimizer = AdamW(
        params, lr=train_config.lr, weight_decay=train_config.weight_decay
    )
    optimizer.step_count = int(header["adam_step"])

    offset = header_start + header_len
    for rec in header["tensors"]:
        name, role, shape = rec["name"], rec["role"], tuple(rec["shape"])
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated blob for tensor {name!r}")
        arr = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
        if role == "param":
            if name not in params.tensors:
                raise CheckpointError(f"{path}: unexpected tensor {name!r}")
            if params[name].data.shape != shape:
                raise CheckpointError(
                    f"{path}: tensor {name!r} has shape {shape}, expected "
                    f"{params[name].data.shape}"
                )
            params[name].data = arr
        elif role in ("m", "v"):
            table = optimizer.m if role == "m" else optimizer.v
            if name not in table or table[name].shape != shape:
                raise CheckpointError(f"{path}: optimizer state mismatch for {name!r}")
            table[name] = arr
        else:
            raise CheckpointError(f"{path}: unknown tensor role {role!r}")
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")

    rng = np.random.default_rng(0)
    state = header["rng_state"]
    if state["bit_generator"] != rng.bit_generator.state["bit_generator"]:
        raise CheckpointError(
            f"{path}: unsupported bit generator {state['bit_generator']!r}"
        )
    rng.bit_generator.state = state
    return Checkpoint(
        model_config=model_config,
        train_config=train_config,
        step=int(header["step"]),
        params=params,
        optimizer=optimizer,
        rng=rng,
    )
