"""Small encoder-only transformer for token classification.

Trains from random initialization with AdamW on randomly cropped
sequences, evaluates macro boundary F on a validation set at a fixed step
interval, and stops early when it fails to improve. Checkpoints are
self-describing npz containers.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .labeling import LabeledStream
from .metrics import boundary_metrics, harmonic
from .tokenizer import EncodedStream, PAD


class ModelError(Exception):
    pass


@dataclass
class ModelConfig:
    vocab_size: int
    n_labels: int
    d_model: int = 128
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 256
    max_seq_len: int = 512
    dropout: float = 0.1

    def validate(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ModelError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if min(self.vocab_size, self.n_labels, self.n_layers, self.max_seq_len) < 1:
            raise ModelError("all size parameters must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainHyper:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    max_steps: int = 7500
    eval_every: int = 300
    patience: int = 5
    batch_size: int = 8
    crop_min: int = 64
    seeds: tuple[int, ...] = (0, 1, 2)

    def validate(self) -> None:
        if min(self.learning_rate, self.weight_decay) < 0:
            raise ModelError("rates must be >= 0")
        if min(self.max_steps, self.eval_every, self.batch_size, self.crop_min) < 1:
            raise ModelError("step/batch parameters must be >= 1")
        if self.patience < 1:
            raise ModelError("patience must be >= 1")


REL_BIAS_SPAN = 8  # relative offsets beyond this share the edge bucket


class EncoderLayer(nn.Module):
    """Pre-norm attention + feed-forward block.

    Attention logits carry a learned per-head relative-position bias so
    fixed-offset patterns (such as reading a neighboring token) do not have
    to be assembled from absolute position embeddings.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.n_heads = config.n_heads
        self.attn = nn.MultiheadAttention(
            config.d_model, config.n_heads, dropout=config.dropout, batch_first=True
        )
        self.rel_bias = nn.Parameter(torch.zeros(config.n_heads, 2 * REL_BIAS_SPAN + 1))
        self.norm1 = nn.LayerNorm(config.d_model)
        self.norm2 = nn.LayerNorm(config.d_model)
        self.ff = nn.Sequential(
            nn.Linear(config.d_model, config.d_ff),
            nn.GELU(),
            nn.Linear(config.d_ff, config.d_model),
        )
        self.dropout = nn.Dropout(config.dropout)

    def _bias_mask(self, batch: int, length: int, device) -> torch.Tensor:
        positions = torch.arange(length, device=device)
        offsets = (positions[None, :] - positions[:, None]).clamp(
            -REL_BIAS_SPAN, REL_BIAS_SPAN
        ) + REL_BIAS_SPAN
        bias = self.rel_bias[:, offsets]  # (heads, L, L)
        return bias.repeat(batch, 1, 1)

    def forward(self, x: torch.Tensor, key_padding_mask: torch.Tensor | None):
        h = self.norm1(x)
        attn_mask = self._bias_mask(x.shape[0], x.shape[1], x.device).to(x.dtype)
        if key_padding_mask is not None:
            blocked = key_padding_mask[:, None, None, :].expand(
                -1, self.n_heads, x.shape[1], -1
            ).reshape_as(attn_mask)
            attn_mask = attn_mask.masked_fill(blocked, float("-inf"))
        attn_out, _ = self.attn(h, h, h, attn_mask=attn_mask, need_weights=False)
        x = x + self.dropout(attn_out)
        x = x + self.dropout(self.ff(self.norm2(x)))
        return x


LOCAL_MIX_KERNEL = 7  # local context window of the embedding stem


class TokenTagger(nn.Module):
    """Token embeddings + learned positions + encoder stack + per-token classifier.

    The embedding stem mixes each position with its close neighbors through
    a depthwise convolution, so rules over adjacent tokens are directly
    expressible and the attention stack is left to model longer-range
    structure.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.token_emb = nn.Embedding(config.vocab_size, config.d_model)
        self.pos_emb = nn.Embedding(config.max_seq_len, config.d_model)
        self.local_mix = nn.Conv1d(
            config.d_model, config.d_model, LOCAL_MIX_KERNEL,
            padding=LOCAL_MIX_KERNEL // 2, groups=config.n_heads,
        )
        self.emb_norm = nn.LayerNorm(config.d_model)
        self.emb_dropout = nn.Dropout(config.dropout)
        self.layers = nn.ModuleList(
            EncoderLayer(config) for _ in range(config.n_layers)
        )
        self.out_norm = nn.LayerNorm(config.d_model)
        self.classifier = nn.Linear(config.d_model, config.n_labels)
        nn.init.normal_(self.token_emb.weight, std=0.02)
        nn.init.normal_(self.pos_emb.weight, std=0.02)

    def forward(self, ids: torch.Tensor, attention_mask: torch.Tensor | None = None):
        """Per-token label logits of shape (batch, seq_len, n_labels)."""
        if ids.dim() != 2:
            raise ModelError("ids must be (batch, seq_len)")
        if ids.numel() and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise ModelError("token id out of range")
        if ids.shape[1] > self.config.max_seq_len:
            raise ModelError(
                f"sequence length {ids.shape[1]} exceeds max_seq_len "
                f"{self.config.max_seq_len}"
            )
        positions = torch.arange(ids.shape[1], device=ids.device)
        emb = self.token_emb(ids)
        if attention_mask is not None:
            emb = emb * attention_mask.to(emb.dtype)[:, :, None]
        x = emb + self.local_mix(emb.transpose(1, 2)).transpose(1, 2)
        x = x + self.pos_emb(positions)[None, :, :]
        x = self.emb_dropout(self.emb_norm(x))
        key_padding_mask = None
        if attention_mask is not None:
            key_padding_mask = ~attention_mask.bool()
            # a fully padded row would make softmax undefined; let it attend
            # everywhere instead, its outputs are masked out of the loss
            all_pad = key_padding_mask.all(dim=1, keepdim=True)
            key_padding_mask = key_padding_mask & ~all_pad
        for layer in self.layers:
            x = layer(x, key_padding_mask)
        return self.classifier(self.out_norm(x))


def init_model(config: ModelConfig, seed: int) -> TokenTagger:
    """Deterministic initialization for a given seed."""
    torch.manual_seed(seed)
    return TokenTagger(config)


def zero_position_machinery(model: TokenTagger) -> TokenTagger:
    """Silence every position-dependent component.

    Zeroes the learned position table, the relative attention biases and
    the off-center taps of the local mixer, leaving a permutation
    equivariant network (useful to test that nothing else leaks position).
    """
    with torch.no_grad():
        model.pos_emb.weight.zero_()
        center = LOCAL_MIX_KERNEL // 2
        for tap in range(LOCAL_MIX_KERNEL):
            if tap != center:
                model.local_mix.weight[:, :, tap] = 0.0
        for layer in model.layers:
            layer.rel_bias.zero_()
    return model


def grow_embeddings(model: TokenTagger, n_new: int, seed: int = 0) -> TokenTagger:
    """Append freshly initialized embedding rows; existing rows are unchanged."""
    if n_new < 0:
        raise ModelError("n_new must be >= 0")
    old = model.token_emb.weight.data
    torch.manual_seed(seed)
    fresh = torch.empty(n_new, old.shape[1], dtype=old.dtype)
    nn.init.normal_(fresh, std=0.02)
    emb = nn.Embedding(old.shape[0] + n_new, old.shape[1])
    emb.weight.data = torch.cat([old, fresh], dim=0)
    model.token_emb = emb
    model.config.vocab_size += n_new
    return model


def masked_loss(
    logits: torch.Tensor, labels: torch.Tensor, attention_mask: torch.Tensor
) -> torch.Tensor:
    """Cross-entropy averaged over non-pad positions only."""
    logp = F.log_softmax(logits, dim=-1)
    nll = -logp.gather(-1, labels.unsqueeze(-1)).squeeze(-1)
    mask = attention_mask.to(nll.dtype)
    denom = mask.sum()
    if denom.item() == 0:
        return logits.sum() * 0.0
    return (nll * mask).sum() / denom


class EarlyStopper:
    """Stop after ``patience`` consecutive evaluations without improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -float("inf")
        self.failures = 0

    def update(self, value: float) -> bool:
        if value > self.best:
            self.best = value
            self.failures = 0
            return True
        self.failures += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.failures >= self.patience


@dataclass
class Checkpoint:
    config: ModelConfig
    weights: dict[str, np.ndarray]
    vocab_fingerprint: str
    history: list[tuple[int, float]] = field(default_factory=list)
    best_step: int = 0

    def restore(self) -> TokenTagger:
        model = TokenTagger(self.config)
        state = {k: torch.from_numpy(v.copy()) for k, v in self.weights.items()}
        model.load_state_dict(state)
        model.eval()
        return model

    def save(self, path: str | Path) -> None:
        meta = {
            "config": self.config.to_dict(),
            "vocab_fingerprint": self.vocab_fingerprint,
            "history": self.history,
            "best_step": self.best_step,
        }
        arrays = {f"w::{k}": v for k, v in self.weights.items()}
        buffer = io.BytesIO()
        np.savez(buffer, __meta__=np.array(json.dumps(meta)), **arrays)
        Path(path).write_bytes(buffer.getvalue())

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["__meta__"][()]))
            weights = {
                k[len("w::"):]: data[k] for k in data.files if k.startswith("w::")
            }
        return cls(
            config=ModelConfig(**meta["config"]),
            weights=weights,
            vocab_fingerprint=meta["vocab_fingerprint"],
            history=[tuple(h) for h in meta["history"]],
            best_step=meta["best_step"],
        )


def _snapshot(model: TokenTagger) -> dict[str, np.ndarray]:
    return {
        k: v.detach().cpu().numpy().astype(np.float32, copy=True)
        for k, v in model.state_dict().items()
    }


def _as_tensors(data: Sequence[LabeledStream]) -> list[tuple[torch.Tensor, torch.Tensor]]:
    out = []
    for labeled in data:
        ids = torch.tensor(labeled.encoded.ids, dtype=torch.long)
        labels = torch.tensor(labeled.label_ids, dtype=torch.long)
        if len(ids):
            out.append((ids, labels))
    return out


def _sample_batch(
    streams: list[tuple[torch.Tensor, torch.Tensor]],
    hyper: TrainHyper,
    max_seq_len: int,
    rng: np.random.Generator,
):
    lengths = np.array([len(ids) for ids, _ in streams])
    weights = lengths / lengths.sum()
    crops = []
    for _ in range(hyper.batch_size):
        si = rng.choice(len(streams), p=weights)
        ids, labels = streams[si]
        crop_len = int(rng.integers(hyper.crop_min, max_seq_len + 1))
        crop_len = min(crop_len, len(ids))
        start = int(rng.integers(0, len(ids) - crop_len + 1))
        crops.append((ids[start:start + crop_len], labels[start:start + crop_len]))
    width = max(len(c[0]) for c in crops)
    batch_ids = torch.full((len(crops), width), PAD, dtype=torch.long)
    batch_labels = torch.zeros((len(crops), width), dtype=torch.long)
    mask = torch.zeros((len(crops), width), dtype=torch.bool)
    for row, (ids, labels) in enumerate(crops):
        batch_ids[row, :len(ids)] = ids
        batch_labels[row, :len(labels)] = labels
        mask[row, :len(ids)] = True
    return batch_ids, batch_labels, mask


def predict_ids(model: TokenTagger, ids: torch.Tensor) -> torch.Tensor:
    """Argmax labels; long streams go through half-stride overlapping windows
    stitched at overlap centers so every position keeps bidirectional context."""
    model.eval()
    n = len(ids)
    if n == 0:
        return torch.zeros(0, dtype=torch.long)
    window = model.config.max_seq_len
    with torch.no_grad():
        if n <= window:
            return model(ids[None, :]).argmax(dim=-1)[0]
        stride = window // 2
        starts = list(range(0, n - window + 1, stride))
        if starts[-1] != n - window:
            starts.append(n - window)
        out = torch.zeros(n, dtype=torch.long)
        filled = 0
        for k, start in enumerate(starts):
            pred = model(ids[None, start:start + window]).argmax(dim=-1)[0]
            if k == len(starts) - 1:
                upper = n
            else:
                upper = (starts[k + 1] + (start + window)) // 2
            out[filled:upper] = pred[filled - start:upper - start]
            filled = upper
        return out


def _macro_boundary_f(
    model: TokenTagger, data: Sequence[LabeledStream],
    tensors: list[tuple[torch.Tensor, torch.Tensor]],
) -> float:
    pred_marks: list[str] = []
    gold_marks: list[str] = []
    for labeled, (ids, _) in zip(data, tensors):
        pred = predict_ids(model, ids).tolist()
        scheme = labeled.scheme
        for label_id in pred:
            _, mark = scheme.decompose(scheme.label_of(label_id))
            pred_marks.append(mark if mark is not None else "O")
        gold_marks.extend(labeled.boundary_marks())
    reports = boundary_metrics(pred_marks, gold_marks)
    p = sum(r.precision for r in reports.values()) / len(reports)
    r = sum(r.recall for r in reports.values()) / len(reports)
    return harmonic(p, r)


def train(
    model: TokenTagger,
    train_data: Sequence[LabeledStream],
    val_data: Sequence[LabeledStream],
    hyper: TrainHyper,
    seed: int = 0,
) -> Checkpoint:
    """AdamW on random crops with periodic validation and early stopping."""
    hyper.validate()
    train_tensors = _as_tensors(train_data)
    if not train_tensors:
        raise ModelError("empty training set")
    val_tensors = _as_tensors(val_data)
    fingerprint = train_data[0].encoded.vocab_fingerprint
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=hyper.learning_rate, weight_decay=hyper.weight_decay
    )
    stopper = EarlyStopper(hyper.patience)
    history: list[tuple[int, float]] = []
    best_weights: dict[str, np.ndarray] | None = None
    best_step = 0
    for step in range(1, hyper.max_steps + 1):
        model.train()
        ids, labels, mask = _sample_batch(
            train_tensors, hyper, model.config.max_seq_len, rng
        )
        loss = masked_loss(model(ids, mask), labels, mask)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        if step % hyper.eval_every == 0:
            score = _macro_boundary_f(model, val_data, val_tensors) if val_tensors else 0.0
            history.append((step, score))
            if stopper.update(score) or best_weights is None:
                best_weights = _snapshot(model)
                best_step = step
            if stopper.should_stop:
                break
    if best_weights is None:
        best_weights = _snapshot(model)
        best_step = hyper.max_steps
    return Checkpoint(
        config=model.config,
        weights=best_weights,
        vocab_fingerprint=fingerprint,
        history=history,
        best_step=best_step,
    )


def predict(checkpoint: Checkpoint, encoded: EncodedStream) -> list[int]:
    """Label ids for a stream; refuses streams from a different vocabulary."""
    if encoded.vocab_fingerprint != checkpoint.vocab_fingerprint:
        raise ModelError("stream vocabulary fingerprint does not match checkpoint")
    model = checkpoint.restore()
    ids = torch.tensor(encoded.ids, dtype=torch.long)
    return predict_ids(model, ids).tolist()
