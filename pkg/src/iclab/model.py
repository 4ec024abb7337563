"""Small decoder-only transformer for masked next-token prediction over
episode sequences, with both inference strategies (token-by-token greedy
and single forward pass) and a versioned binary checkpoint format.

Training conditions the w*h output positions on the context/query prefix;
the loss is computed on those positions only. Gradients come from torch
autograd; the finite-difference check in the test suite validates them on
a float64 micro-configuration.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .sequence import SequencePair
from .tokenizer import TokenGrid


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab: int
    layers: int = 4
    heads: int = 4
    embed_dim: int = 128
    context_len: int = 512
    ffn_mult: int = 4
    dropout: float = 0.0

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise ModelError("embed_dim must be divisible by heads")
        if self.vocab < 2:
            raise ModelError("vocab must be >= 2")


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    seed: int
    mask_ratio: float = 1.0
    batch_size: int = 8
    base_lr: float = 3e-4
    min_lr: float = 1e-5
    grad_clip: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.mask_ratio <= 1.0):
            raise ModelError("mask_ratio must lie in [0, 1]")
        if self.steps < 1 or self.batch_size < 1:
            raise ModelError("steps and batch_size must be >= 1")


class _Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.embed_dim
        self.ln1 = nn.LayerNorm(d)
        self.ln2 = nn.LayerNorm(d)
        self.heads = cfg.heads
        self.qkv = nn.Linear(d, 3 * d)
        self.proj = nn.Linear(d, d)
        self.ff1 = nn.Linear(d, cfg.ffn_mult * d)
        self.ff2 = nn.Linear(cfg.ffn_mult * d, d)
        self.dropout = cfg.dropout

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        h = self.heads
        q, k, v = self.qkv(self.ln1(x)).split(d, dim=2)
        q = q.view(b, t, h, d // h).transpose(1, 2)
        k = k.view(b, t, h, d // h).transpose(1, 2)
        v = v.view(b, t, h, d // h).transpose(1, 2)
        drop = self.dropout if self.training else 0.0
        y = F.scaled_dot_product_attention(q, k, v, is_causal=True, dropout_p=drop)
        y = y.transpose(1, 2).reshape(b, t, d)
        x = x + self.proj(y)
        x = x + self.ff2(F.gelu(self.ff1(self.ln2(x))))
        return x


class ModelParams(nn.Module):
    """Transformer weights: embeddings, blocks, and the vocab projection."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.tok_emb = nn.Embedding(cfg.vocab, cfg.embed_dim)
        self.pos_emb = nn.Embedding(cfg.context_len, cfg.embed_dim)
        self.blocks = nn.ModuleList(_Block(cfg) for _ in range(cfg.layers))
        self.ln_f = nn.LayerNorm(cfg.embed_dim)
        self.head = nn.Linear(cfg.embed_dim, cfg.vocab)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def expected_parameter_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count from the layer shapes."""
    d, v, f = cfg.embed_dim, cfg.vocab, cfg.ffn_mult * cfg.embed_dim
    per_layer = (
        2 * (2 * d)              # two LayerNorms (weight + bias)
        + d * 3 * d + 3 * d      # qkv
        + d * d + d              # attention out projection
        + d * f + f              # ff1
        + f * d + d              # ff2
    )
    return (
        v * d                    # token embeddings
        + cfg.context_len * d    # positional embeddings
        + cfg.layers * per_layer
        + 2 * d                  # final LayerNorm
        + d * v + v              # output head
    )


def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    """Seeded Gaussian init (scale 0.02) for all weight matrices and
    embeddings; zero biases; unit LayerNorm gains. Byte-deterministic."""
    model = ModelParams(cfg)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if "ln" in name or name.endswith(".bias"):
                if name.endswith(".weight"):
                    p.fill_(1.0)
                else:
                    p.zero_()
            else:
                p.copy_(torch.randn(p.shape, generator=gen) * 0.02)
    model.eval()
    return model


def forward(params: ModelParams, sequence, positions_to_score=None) -> torch.Tensor:
    """Logits over the vocab at the requested positions (all by default).

    `sequence` is a 1-D or 2-D (batched) array of token ids.
    """
    ids = torch.as_tensor(np.asarray(sequence), dtype=torch.long)
    squeeze = ids.ndim == 1
    if squeeze:
        ids = ids[None, :]
    t = ids.shape[1]
    if t > params.cfg.context_len:
        raise ModelError(f"sequence length {t} exceeds context_len {params.cfg.context_len}")
    if ids.numel() and (ids.min() < 0 or ids.max() >= params.cfg.vocab):
        raise ModelError("token id out of vocab range")
    x = params.tok_emb(ids) + params.pos_emb(torch.arange(t))[None, :, :]
    for block in params.blocks:
        x = block(x)
    x = params.ln_f(x)
    if positions_to_score is not None:
        x = x[:, list(positions_to_score), :]
    logits = params.head(x)
    return logits[0] if squeeze else logits


def loss(params: ModelParams, pair: SequencePair) -> torch.Tensor:
    """Mean NLL over the output positions of one sequence pair."""
    return batch_loss(params, [pair])


def batch_loss(params: ModelParams, pairs: list[SequencePair]) -> torch.Tensor:
    """Mean NLL over the output positions of a batch of sequence pairs.

    Input at output position i is teacher_inputs[i]; prefix positions do
    not contribute to the loss.
    """
    if not pairs:
        raise ModelError("batch must be non-empty")
    lp = len(pairs[0].prefix)
    lt = len(pairs[0].target)
    seqs = np.stack([np.concatenate([p.prefix, p.teacher_inputs]) for p in pairs])
    targets = torch.as_tensor(np.stack([p.target for p in pairs]), dtype=torch.long)
    positions = range(lp, lp + lt)
    logits = forward(params, seqs, positions_to_score=positions)
    return F.cross_entropy(logits.reshape(-1, params.cfg.vocab), targets.reshape(-1))


def per_position_nll(params: ModelParams, pair: SequencePair) -> np.ndarray:
    """NLL of each target token under the model, for perplexity reporting."""
    lp = len(pair.prefix)
    seq = np.concatenate([pair.prefix, pair.teacher_inputs])
    logits = forward(params, seq, positions_to_score=range(lp, lp + len(pair.target)))
    logp = F.log_softmax(logits, dim=-1)
    idx = torch.as_tensor(pair.target, dtype=torch.long)
    return (-logp[torch.arange(len(idx)), idx]).detach().numpy()


def cosine_lr(step: int, cfg: TrainConfig) -> float:
    """Cosine annealing from base_lr at step 0 to min_lr at the final step."""
    if cfg.steps == 1:
        return cfg.base_lr
    progress = step / (cfg.steps - 1)
    return cfg.min_lr + 0.5 * (cfg.base_lr - cfg.min_lr) * (1.0 + math.cos(math.pi * progress))


def make_optimizer(params: ModelParams, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(params.parameters(), lr=cfg.base_lr, betas=(0.9, 0.999), eps=1e-8)


def train_step(
    params: ModelParams,
    opt_state: torch.optim.Adam,
    batch: list[SequencePair],
    cfg: TrainConfig,
    step: int,
) -> float:
    """One optimization step in place; returns the batch loss.

    Aborts on a non-finite loss rather than continuing with poisoned state.
    """
    params.train()
    lr = cosine_lr(step, cfg)
    for group in opt_state.param_groups:
        group["lr"] = lr
    opt_state.zero_grad()
    value = batch_loss(params, batch)
    if not torch.isfinite(value):
        raise ModelError(f"non-finite loss {value.item()!r} at step {step}")
    value.backward()
    torch.nn.utils.clip_grad_norm_(params.parameters(), cfg.grad_clip)
    opt_state.step()
    params.eval()
    return float(value.detach())


def decode_token_by_token(
    params: ModelParams,
    prefix: np.ndarray,
    out_len: int,
    mask_id: int,
    grid_shape: tuple[int, int] | None = None,
    feed_generated: bool = False,
) -> TokenGrid:
    """Greedy token-by-token decoding.

    With feed_generated=False (matching 100%-masked training) every filled
    output position is presented as MASK; with feed_generated=True the
    previously generated tokens are fed back shifted by one.
    """
    lp = len(prefix)
    if lp + out_len > params.cfg.context_len:
        raise ModelError("prefix + out_len exceeds context_len")
    out_inputs = np.full(out_len, mask_id, dtype=np.int64)
    generated = np.empty(out_len, dtype=np.int64)
    with torch.no_grad():
        for i in range(out_len):
            seq = np.concatenate([prefix, out_inputs[: i + 1]])
            logits = forward(params, seq, positions_to_score=[lp + i])
            generated[i] = int(logits[0].argmax())
            if feed_generated and i + 1 < out_len:
                out_inputs[i + 1] = generated[i]
    return _to_grid(generated, out_len, grid_shape)


def decode_single_pass(
    params: ModelParams,
    prefix: np.ndarray,
    out_len: int,
    mask_id: int,
    grid_shape: tuple[int, int] | None = None,
) -> TokenGrid:
    """One forward pass with MASK at every output position; argmax everywhere."""
    lp = len(prefix)
    if lp + out_len > params.cfg.context_len:
        raise ModelError("prefix + out_len exceeds context_len")
    if out_len == 0:
        return _to_grid(np.empty(0, dtype=np.int64), 0, grid_shape)
    seq = np.concatenate([prefix, np.full(out_len, mask_id, dtype=np.int64)])
    with torch.no_grad():
        logits = forward(params, seq, positions_to_score=range(lp, lp + out_len))
        generated = logits.argmax(dim=-1).numpy().astype(np.int64)
    return _to_grid(generated, out_len, grid_shape)


def _to_grid(ids: np.ndarray, out_len: int, grid_shape: tuple[int, int] | None) -> TokenGrid:
    if grid_shape is None:
        side = int(math.isqrt(out_len)) if out_len else 0
        grid_shape = (side, side) if side * side == out_len else (1, out_len)
    if out_len == 0:
        return TokenGrid(np.empty((0, 0), dtype=np.int64))
    return TokenGrid(ids.reshape(grid_shape))


_CKPT_MAGIC = b"ICLCKPT\x01"


def checkpoint_save(
    params: ModelParams,
    opt_state: torch.optim.Adam | None,
    cfg: TrainConfig | None,
    path,
    step: int = 0,
) -> None:
    """Versioned binary checkpoint: magic, JSON config block, then named
    tensor blocks (shape header + little-endian float32 data)."""
    tensors: list[tuple[str, np.ndarray]] = []
    for name, p in params.state_dict().items():
        tensors.append(("param/" + name, p.detach().numpy().astype("<f4")))
    if opt_state is not None:
        sd = opt_state.state_dict()
        for pid, st in sd["state"].items():
            for key, val in st.items():
                if isinstance(val, torch.Tensor):
                    tensors.append((f"opt/{pid}/{key}", val.detach().numpy().astype("<f4")))
                else:
                    tensors.append((f"opt/{pid}/{key}", np.asarray([float(val)], dtype="<f4")))
    header = {
        "model_config": asdict(params.cfg),
        "train_config": asdict(cfg) if cfg is not None else None,
        "step": step,
        "has_optimizer": opt_state is not None,
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            nb = name.encode()
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                f.write(struct.pack("<I", dim))
            f.write(arr.tobytes())


def checkpoint_load(path) -> tuple[ModelParams, torch.optim.Adam | None, TrainConfig | None, int]:
    with open(path, "rb") as f:
        magic = f.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise ModelError("not a checkpoint file (bad magic or version)")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen))
        (n_tensors,) = struct.unpack("<I", f.read(4))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(n_tensors):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode()
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack("<" + "I" * ndim, f.read(4 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(f.read(4 * count), dtype="<f4")
            if data.size != count:
                raise ModelError("truncated checkpoint file")
            tensors[name] = data.reshape(shape)
    cfg = ModelConfig(**header["model_config"])
    params = ModelParams(cfg)
    state = {}
    for name, arr in tensors.items():
        if name.startswith("param/"):
            state[name[len("param/"):]] = torch.from_numpy(arr.copy())
    missing = set(params.state_dict()) - set(state)
    if missing:
        raise ModelError(f"checkpoint is missing tensors: {sorted(missing)[:3]} ...")
    try:
        params.load_state_dict(state)
    except RuntimeError as e:
        raise ModelError(f"checkpoint/config shape mismatch: {e}") from e
    params.eval()
    train_cfg = TrainConfig(**header["train_config"]) if header["train_config"] else None
    opt = None
    if header.get("has_optimizer"):
        opt = make_optimizer(params, train_cfg) if train_cfg else torch.optim.Adam(params.parameters())
        sd = opt.state_dict()
        by_pid: dict[int, dict] = {}
        for name, arr in tensors.items():
            if not name.startswith("opt/"):
                continue
            _, pid, key = name.split("/", 2)
            entry = by_pid.setdefault(int(pid), {})
            if key == "step":
                entry[key] = torch.tensor(float(arr.reshape(-1)[0]))
            else:
                entry[key] = torch.from_numpy(arr.copy())
        sd["state"] = by_pid
        opt.load_state_dict(sd)
    return params, opt, train_cfg, int(header["step"])
