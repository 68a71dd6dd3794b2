"""Text/audio encoders, concatenation fusion and the 4-way classifier head."""

from __future__ import annotations

import hashlib
import json
import math
import re
import zlib
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .audio import TARGET_RATE, TARGET_SECONDS
from .errors import (
    CheckpointIncompatible,
    CheckpointNotFound,
    DimensionMismatch,
    EncoderFailure,
    InvalidLabel,
    ShapeMismatch,
    TokenBudgetExceeded,
)
from .metrics import N_CLASSES
from .text import TOKEN_BUDGET

SEGMENT_SAMPLES = int(TARGET_RATE * TARGET_SECONDS)


class Mode(str, Enum):
    FUSED = "Fused"
    AUDIO_ONLY = "AudioOnly"


class EncoderBundle(nn.Module):
    """Pretrained-style encoders ``f_t``/``f_a`` with projections ``h_t``/``h_a`` onto R^d."""

    d: int

    def encode_text(self, texts: Sequence[str]) -> torch.Tensor:
        raise NotImplementedError

    def encode_audio(self, waves: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def backbone_parameters(self):
        """Parameters of the encoders proper, excluding the projections."""
        raise NotImplementedError

    def check_audio(self, waves: torch.Tensor) -> torch.Tensor:
        if waves.ndim == 1:
            waves = waves.unsqueeze(0)
        if waves.ndim != 2 or waves.shape[1] != SEGMENT_SAMPLES:
            raise ShapeMismatch(
                f"audio must be {TARGET_SECONDS:g} s at {TARGET_RATE} Hz ({SEGMENT_SAMPLES} samples), got shape {tuple(waves.shape)}"
            )
        return waves


_WORD_RE = re.compile(r"\w+|[^\w\s]")


class StubEncoders(EncoderBundle):
    """Seeded stand-in for a pretrained language-audio model.

    Text: hashed word/punctuation tokens, mean-pooled embeddings. Audio: mean
    over 20 ms frames of band-averaged log spectra. Each raw feature then
    passes a fixed random linear map (the "encoder") and a projection to d.
    """

    frame = 960
    n_bands = 64

    def __init__(self, d: int = 16, seed: int = 0, vocab_size: int = 4096, raw_dim: int = 64):
        super().__init__()
        self.d = d
        self.vocab_size = vocab_size
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.token_embedding = nn.EmbeddingBag(vocab_size, raw_dim, mode="mean")
            self.text_map = nn.Linear(raw_dim, raw_dim)
            self.audio_map = nn.Linear(self.n_bands, raw_dim)
            self.text_projection = nn.Linear(raw_dim, d)
            self.audio_projection = nn.Linear(raw_dim, d)
        edges = np.linspace(0, self.frame // 2 + 1, self.n_bands + 1).astype(int)
        band = np.zeros((self.frame // 2 + 1, self.n_bands), dtype=np.float32)
        for b in range(self.n_bands):
            band[edges[b] : edges[b + 1], b] = 1.0 / (edges[b + 1] - edges[b])
        self.register_buffer("band_matrix", torch.from_numpy(band), persistent=False)

    def tokenize(self, text: str) -> list[int]:
        words = _WORD_RE.findall(text)
        if len(words) + 2 > TOKEN_BUDGET:
            raise TokenBudgetExceeded(f"{len(words) + 2} tokens > budget {TOKEN_BUDGET}: {text[:60]!r}...")
        return [zlib.crc32(w.encode()) % self.vocab_size for w in ["<s>", *words, "</s>"]]

    def encode_text(self, texts):
        ids = [self.tokenize(t) for t in texts]
        flat = torch.tensor([i for seq in ids for i in seq], dtype=torch.long, device=self.band_matrix.device)
        offsets = torch.tensor(np.cumsum([0] + [len(s) for s in ids[:-1]]), dtype=torch.long, device=flat.device)
        raw = torch.tanh(self.text_map(self.token_embedding(flat, offsets)))
        return self.text_projection(raw)

    def audio_features(self, waves: torch.Tensor) -> torch.Tensor:
        frames = waves.reshape(waves.shape[0], -1, self.frame)
        spec = torch.log1p(torch.fft.rfft(frames, dim=-1).abs())
        return (spec @ self.band_matrix).mean(dim=1)

    def encode_audio(self, waves):
        waves = self.check_audio(waves)
        raw = torch.tanh(self.audio_map(self.audio_features(waves.float())))
        return self.audio_projection(raw)

    def backbone_parameters(self):
        yield from self.token_embedding.parameters()
        yield from self.text_map.parameters()
        yield from self.audio_map.parameters()


DEFAULT_CHECKPOINT = "laion/clap-htsat-unfused"


def resolve_checkpoint(checkpoint: str | Path | None) -> str:
    """Local directory for ``checkpoint``: a path, or a hub id already in the local cache.

    Never downloads.
    """
    if not checkpoint:
        raise CheckpointNotFound("no checkpoint given")
    if Path(checkpoint).exists():
        return str(checkpoint)
    try:
        from huggingface_hub import snapshot_download

        return snapshot_download(str(checkpoint), local_files_only=True)
    except Exception as exc:
        raise CheckpointNotFound(f"no checkpoint at {checkpoint} (not a local path, not in the hub cache)") from exc


class ClapEncoders(EncoderBundle):
    """A pretrained CLAP checkpoint loaded through ``transformers``.

    The checkpoint's own projection layers serve as ``h_t``/``h_a``; ``d`` is
    read from its config rather than assumed.
    """

    def __init__(self, checkpoint: str | Path):
        super().__init__()
        path = Path(resolve_checkpoint(checkpoint))
        try:
            from transformers import AutoTokenizer, ClapFeatureExtractor, ClapModel
        except ImportError as exc:  # pragma: no cover
            raise CheckpointIncompatible("loading CLAP checkpoints requires the 'transformers' package") from exc
        try:
            self.clap = ClapModel.from_pretrained(str(path))
            self.tokenizer = AutoTokenizer.from_pretrained(str(path))
            self.feature_extractor = ClapFeatureExtractor.from_pretrained(str(path))
        except (OSError, ValueError, KeyError) as exc:
            raise CheckpointIncompatible(f"{path} is not a loadable CLAP checkpoint: {exc}") from exc
        if self.feature_extractor.sampling_rate != TARGET_RATE:
            raise CheckpointIncompatible(f"checkpoint expects {self.feature_extractor.sampling_rate} Hz audio, pipeline produces {TARGET_RATE}")
        self.d = int(self.clap.config.projection_dim)

    @staticmethod
    def _features(out) -> torch.Tensor:
        return out if isinstance(out, torch.Tensor) else out.pooler_output

    def encode_text(self, texts):
        device = next(self.clap.parameters()).device
        tok = self.tokenizer(list(texts), padding=True, truncation=False, return_tensors="pt")
        lengths = tok["attention_mask"].sum(dim=1)
        if int(lengths.max()) > TOKEN_BUDGET:
            raise TokenBudgetExceeded(f"description of {int(lengths.max())} tokens exceeds budget {TOKEN_BUDGET}")
        tok = {k: v.to(device) for k, v in tok.items()}
        try:
            return self._features(self.clap.get_text_features(**tok))
        except RuntimeError as exc:
            raise EncoderFailure(str(exc)) from exc

    def encode_audio(self, waves):
        waves = self.check_audio(waves)
        device = next(self.clap.parameters()).device
        feats = self.feature_extractor(
            [w.detach().cpu().numpy() for w in waves], sampling_rate=TARGET_RATE, return_tensors="pt"
        )
        feats = {k: v.to(device) for k, v in feats.items()}
        try:
            return self._features(self.clap.get_audio_features(**feats))
        except RuntimeError as exc:
            raise EncoderFailure(str(exc)) from exc

    def backbone_parameters(self):
        yield from self.clap.text_model.parameters()
        yield from self.clap.audio_model.parameters()


def fuse(z_t: torch.Tensor, z_a: torch.Tensor) -> torch.Tensor:
    """Concatenate text then audio embeddings along the last axis."""
    if z_t.shape[-1] != z_a.shape[-1] or z_t.shape[:-1] != z_a.shape[:-1]:
        raise DimensionMismatch(f"cannot fuse shapes {tuple(z_t.shape)} and {tuple(z_a.shape)}")
    return torch.cat([z_t, z_a], dim=-1)


class FusionClassifier(nn.Module):
    def __init__(self, encoders: EncoderBundle, mode: Mode | str = Mode.FUSED, seed: int = 0):
        super().__init__()
        self.encoders = encoders
        self.mode = Mode(mode)
        self.d = encoders.d
        in_dim = 2 * self.d if self.mode is Mode.FUSED else self.d
        self.head = nn.Linear(in_dim, N_CLASSES)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            bound = 1.0 / math.sqrt(in_dim)
            nn.init.uniform_(self.head.weight, -bound, bound)
        nn.init.zeros_(self.head.bias)

    @property
    def in_dim(self) -> int:
        return self.head.in_features

    def embed_text(self, texts: Sequence[str]) -> torch.Tensor:
        if any(not t for t in texts):
            raise ValueError("empty description")
        return self.encoders.encode_text(texts)

    def embed_audio(self, waves: torch.Tensor) -> torch.Tensor:
        return self.encoders.encode_audio(waves)

    def joint(self, z_t: Optional[torch.Tensor], z_a: torch.Tensor) -> torch.Tensor:
        if self.mode is Mode.AUDIO_ONLY:
            return z_a
        return fuse(z_t, z_a)

    def logits(self, z: torch.Tensor) -> torch.Tensor:
        if z.shape[-1] != self.in_dim:
            raise DimensionMismatch(f"head expects {self.in_dim}-dim input, got {z.shape[-1]}")
        return self.head(z)

    def classify(self, z: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.logits(z), dim=-1)

    def forward(self, texts: Optional[Sequence[str]], waves: torch.Tensor) -> torch.Tensor:
        z_a = self.embed_audio(waves)
        z_t = None if self.mode is Mode.AUDIO_ONLY else self.embed_text(texts)
        return self.logits(self.joint(z_t, z_a))


def predict(probs_or_logits: torch.Tensor) -> torch.Tensor:
    """Argmax with ties going to the lowest class index."""
    return torch.argmax(probs_or_logits, dim=-1)


def ce_loss(probs, labels, eps: float = 1e-12):
    """Batch-mean cross-entropy of probability rows against integer labels."""
    probs = torch.as_tensor(probs, dtype=torch.float64)
    labels = torch.as_tensor(labels, dtype=torch.long)
    if labels.numel() and (labels.min() < 0 or labels.max() >= N_CLASSES):
        raise InvalidLabel(f"labels must lie in 0..{N_CLASSES - 1}")
    picked = probs.gather(-1, labels.unsqueeze(-1)).squeeze(-1)
    return -torch.log(picked.clamp_min(eps)).mean()


def head_gradient_check(head: nn.Linear, z: torch.Tensor, labels: torch.Tensor, h: float = 1e-6) -> float:
    """Largest relative error between autograd and central differences of the CE loss w.r.t. head weights."""
    w = head.weight.detach().double().clone().requires_grad_(True)
    b = head.bias.detach().double()
    z = z.detach().double()
    labels = labels.long()

    def loss(weight):
        return F.cross_entropy(z @ weight.T + b, labels)

    loss(w).backward()
    analytic = w.grad.numpy()
    numeric = np.zeros_like(analytic)
    base = w.detach()
    with torch.no_grad():
        for idx in np.ndindex(*analytic.shape):
            plus, minus = base.clone(), base.clone()
            plus[idx] += h
            minus[idx] -= h
            numeric[idx] = (loss(plus).item() - loss(minus).item()) / (2 * h)
    scale = np.maximum(np.abs(analytic), np.abs(numeric)).max()
    return float(np.abs(analytic - numeric).max() / max(scale, 1e-12))


@dataclass(frozen=True)
class ModelConfig:
    encoder: str = "clap"  # "clap" or "stub"
    checkpoint: Optional[str] = DEFAULT_CHECKPOINT
    d: int = 16
    encoder_seed: int = 0
    mode: str = Mode.FUSED.value
    freeze_encoders: bool = False

    def fingerprint(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def make_model(config: ModelConfig, seed: int = 0) -> FusionClassifier:
    if config.encoder == "stub":
        encoders = StubEncoders(d=config.d, seed=config.encoder_seed)
    elif config.encoder == "clap":
        encoders = ClapEncoders(config.checkpoint)
    else:
        raise ValueError(f"unknown encoder source {config.encoder!r}")
    model = FusionClassifier(encoders, config.mode, seed=seed)
    if config.freeze_encoders:
        for p in encoders.backbone_parameters():
            p.requires_grad_(False)
    return model


def state_hash(model: nn.Module) -> str:
    h = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(model: FusionClassifier, path: str | Path, config: ModelConfig, seed: int, **extra) -> None:
    torch.save(
        {"state_dict": model.state_dict(), "model_config": asdict(config), "seed": seed, **extra},
        str(path),
    )


def load_checkpoint(path: str | Path, config: Optional[ModelConfig] = None) -> tuple[FusionClassifier, dict]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointNotFound(f"no checkpoint at {path}")
    blob = torch.load(str(path), map_location="cpu", weights_only=False)
    stored = ModelConfig(**blob["model_config"])
    if config is not None and config.fingerprint() != stored.fingerprint():
        raise CheckpointIncompatible(f"{path} was trained with a different model config")
    model = make_model(stored, seed=blob["seed"])
    try:
        model.load_state_dict(blob["state_dict"])
    except RuntimeError as exc:
        raise CheckpointIncompatible(str(exc)) from exc
    return model, blob
