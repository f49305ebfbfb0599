"""Image and text encoders.

Two patch-level image encoders share one interface:

  * AnalyticPatchEncoder - a deterministic featurizer (per-patch color
    statistics and gradient-orientation histogram behind a fixed random
    projection). Patch token i depends only on patch i's pixels, which
    makes it the reference oracle for patch matching and the default
    conditioning/similarity encoder.
  * LearnedPatchEncoder - a small ViT trained contrastively against the
    text encoder, with an auxiliary per-patch part classifier.

The text encoder is a bag-of-attribute-tokens embedding table; a prompt
maps to the sorted set of vocabulary tokens it contains, so wording and
order never matter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import checkpoint as ckpt
from .imaging import check_image
from .prompts import PromptParseError, describe, tokenize, vocabulary
from .scenes import decoration_footprint, render_scene, sample_scene


class EncoderError(ValueError):
    pass


@dataclass(frozen=True)
class PatchEmbedding:
    """L x d token matrix; row 0 is the global token, rows 1..P^2 are patch
    tokens in row-major patch order."""

    tokens: np.ndarray
    patch_grid: int
    dim: int

    def __post_init__(self):
        t = self.tokens
        L = 1 + self.patch_grid**2
        if t.shape != (L, self.dim):
            raise EncoderError(f"tokens shape {t.shape} != ({L}, {self.dim})")
        norms = np.linalg.norm(t, axis=1)
        if (norms == 0.0).any():
            raise EncoderError("zero token in patch embedding (cosine similarity undefined)")

    @property
    def patch_tokens(self) -> np.ndarray:
        return self.tokens[1:]

    @property
    def global_token(self) -> np.ndarray:
        return self.tokens[0]


@dataclass(frozen=True)
class TextEmbedding:
    tokens: np.ndarray  # (M, d)

    def __post_init__(self):
        if self.tokens.ndim != 2 or self.tokens.shape[0] < 1:
            raise EncoderError("text embedding needs at least one token")


def _normalize(v: np.ndarray) -> np.ndarray:
    return (v / np.linalg.norm(v)).astype(np.float32)


# ---------------------------------------------------------------------------
# analytic featurizer

_RAW_DIM = 10  # mean RGB (3) + RGB variance (3) + gradient-orientation bins (4)


def _patch_raw_features(patch: np.ndarray) -> np.ndarray:
    """(3, s, s) pixel block -> 10-dim statistics vector."""
    mean = patch.mean(axis=(1, 2))
    var = patch.var(axis=(1, 2))
    gray = patch.mean(axis=0)
    gy, gx = np.gradient(gray)
    mag = np.hypot(gx, gy)
    # |gx|,|gy| fold the orientation into [0, pi/2], making the histogram
    # invariant to horizontal/vertical flips
    ori = np.arctan2(np.abs(gy), np.abs(gx))
    hist = np.zeros(4, dtype=np.float64)
    bins = np.minimum((ori / (math.pi / 2) * 4).astype(int), 3)
    np.add.at(hist, bins.ravel(), mag.ravel())
    hist = hist / patch.shape[1] / patch.shape[2]
    return np.concatenate([mean, var, 0.5 * hist]).astype(np.float64)


class AnalyticPatchEncoder:
    """Deterministic patch featurizer behind a fixed seeded projection."""

    def __init__(self, image_size: int = 32, patch_grid: int = 8, dim: int = 64, seed: int = 7):
        if image_size % patch_grid != 0:
            raise EncoderError("image_size must be divisible by patch_grid")
        self.image_size = image_size
        self.patch_grid = patch_grid
        self.patch_size = image_size // patch_grid
        self.dim = dim
        self.seed = seed
        rng = np.random.default_rng(seed)
        self._proj = rng.normal(0.0, 1.0 / math.sqrt(_RAW_DIM), size=(_RAW_DIM, dim))
        self._bias = np.full(dim, 0.05)  # keeps tokens away from the zero vector

    def _project(self, raw: np.ndarray) -> np.ndarray:
        return (raw @ self._proj + self._bias).astype(np.float32)

    def encode_patches(self, img: np.ndarray) -> PatchEmbedding:
        check_image(img, channels=3)
        if img.shape[1] != self.image_size or img.shape[2] != self.image_size:
            raise EncoderError(
                f"encoder configured for {self.image_size}x{self.image_size}, got {img.shape[1:]}"
            )
        P, s = self.patch_grid, self.patch_size
        raws = np.empty((P * P, _RAW_DIM), dtype=np.float64)
        for i in range(P):
            for j in range(P):
                raws[i * P + j] = _patch_raw_features(img[:, i * s:(i + 1) * s, j * s:(j + 1) * s])
        global_raw = raws.mean(axis=0)
        tokens = np.concatenate([self._project(global_raw)[None], self._project(raws)], axis=0)
        return PatchEmbedding(tokens=tokens, patch_grid=P, dim=self.dim)

    def encode_global(self, img: np.ndarray) -> np.ndarray:
        return _normalize(self.encode_patches(img).global_token)

    def to_config(self) -> dict:
        return {"kind": "analytic", "image_size": self.image_size, "patch_grid": self.patch_grid,
                "dim": self.dim, "seed": self.seed}


# ---------------------------------------------------------------------------
# learned encoders

class ViTBlock(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, dim * 4), nn.GELU(), nn.Linear(dim * 4, dim))

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        return x + self.mlp(self.norm2(x))


class ViTEncoder(nn.Module):
    """4-block ViT; CLS token doubles as the contrastive image embedding."""

    def __init__(self, image_size: int = 32, patch_grid: int = 8, dim: int = 64,
                 depth: int = 4, heads: int = 4, part_classes: int = 3):
        super().__init__()
        if image_size % patch_grid != 0:
            raise EncoderError("image_size must be divisible by patch_grid")
        self.image_size = image_size
        self.patch_grid = patch_grid
        self.dim = dim
        patch = image_size // patch_grid
        self.patch_embed = nn.Conv2d(3, dim, patch, stride=patch)
        self.cls = nn.Parameter(torch.zeros(1, 1, dim))
        self.pos = nn.Parameter(torch.randn(1, 1 + patch_grid**2, dim) * 0.02)
        self.blocks = nn.ModuleList(ViTBlock(dim, heads) for _ in range(depth))
        self.norm = nn.LayerNorm(dim)
        self.clip_proj = nn.Linear(dim, dim)
        self.part_head = nn.Linear(dim, part_classes)
        self.logit_scale = nn.Parameter(torch.tensor(math.log(1.0 / 0.07)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (B, 3, H, W) -> tokens (B, 1 + P^2, dim)
        h = self.patch_embed(x).flatten(2).transpose(1, 2)
        h = torch.cat([self.cls.expand(h.shape[0], -1, -1), h], dim=1) + self.pos
        for blk in self.blocks:
            h = blk(h)
        return self.norm(h)

    def clip_embed(self, tokens: torch.Tensor) -> torch.Tensor:
        return F.normalize(self.clip_proj(tokens[:, 0]), dim=-1)

    def to_config(self) -> dict:
        return {"image_size": self.image_size, "patch_grid": self.patch_grid, "dim": self.dim,
                "depth": len(self.blocks), "heads": self.blocks[0].attn.num_heads,
                "part_classes": self.part_head.out_features}


class TextEncoder(nn.Module):
    """Bag-of-attribute-tokens embedding table."""

    def __init__(self, vocab: list[str], dim: int = 64):
        super().__init__()
        self.vocab = list(vocab)
        self.index = {tok: i for i, tok in enumerate(self.vocab)}
        self.dim = dim
        self.embedding = nn.Embedding(len(self.vocab), dim)

    def token_ids(self, prompt: str) -> list[int]:
        words = tokenize(prompt)
        ids = sorted({self.index[w] for w in words if w in self.index})
        if not ids:
            raise PromptParseError(f"prompt contains no vocabulary tokens: {prompt!r}")
        return ids

    def token_matrix(self, prompt: str) -> torch.Tensor:
        ids = torch.tensor(self.token_ids(prompt), dtype=torch.long)
        return self.embedding(ids)

    def global_embed(self, prompt: str) -> torch.Tensor:
        return F.normalize(self.token_matrix(prompt).mean(dim=0), dim=-1)


class LearnedPatchEncoder:
    """Frozen ViT behind the numpy patch-encoder interface."""

    def __init__(self, vit: ViTEncoder):
        self.vit = vit.eval()
        self.image_size = vit.image_size
        self.patch_grid = vit.patch_grid
        self.dim = vit.dim

    @torch.no_grad()
    def encode_patches(self, img: np.ndarray) -> PatchEmbedding:
        check_image(img, channels=3)
        if img.shape[1] != self.image_size or img.shape[2] != self.image_size:
            raise EncoderError(
                f"encoder configured for {self.image_size}x{self.image_size}, got {img.shape[1:]}"
            )
        tokens = self.vit(torch.from_numpy(img).unsqueeze(0))[0]
        # row 0 summarizes the image as the mean patch token (DINO-style
        # global embedding); the CLS slot is reserved for the CLIP head
        g = tokens[1:].mean(dim=0, keepdim=True)
        out = torch.cat([g, tokens[1:]], dim=0).numpy().astype(np.float32)
        return PatchEmbedding(tokens=out, patch_grid=self.patch_grid, dim=self.dim)

    def encode_global(self, img: np.ndarray) -> np.ndarray:
        return _normalize(self.encode_patches(img).global_token)


class ClipSurrogate:
    """Frozen image/text pair used for CLIP-style similarity."""

    def __init__(self, vit: ViTEncoder, text: TextEncoder):
        self.vit = vit.eval()
        self.text = text.eval()

    @torch.no_grad()
    def embed_image(self, img: np.ndarray) -> np.ndarray:
        check_image(img, channels=3)
        tokens = self.vit(torch.from_numpy(img).unsqueeze(0))
        return self.vit.clip_embed(tokens)[0].numpy().astype(np.float32)

    @torch.no_grad()
    def embed_text(self, prompt: str) -> np.ndarray:
        return self.text.global_embed(prompt).numpy().astype(np.float32)

    @torch.no_grad()
    def text_tokens(self, prompt: str) -> TextEmbedding:
        return TextEmbedding(self.text.token_matrix(prompt).numpy().astype(np.float32))


@dataclass
class EncoderSuite:
    """Everything downstream code needs: patch encoder f(x), CLIP pair, vocab."""

    dino: AnalyticPatchEncoder | LearnedPatchEncoder
    clip: ClipSurrogate
    vocab: list[str]
    dino_kind: str = "analytic"

    @property
    def patch_dim(self) -> int:
        return self.dino.dim

    @property
    def text_dim(self) -> int:
        return self.clip.text.dim


def save_encoders(path, vit: ViTEncoder, text: TextEncoder, *, analytic_seed: int = 7,
                  dino_kind: str = "analytic", seed: int = 0, config_hash: str = "",
                  extra_meta: dict | None = None) -> None:
    params = {f"vit.{k}": v for k, v in ckpt.state_dict_to_arrays(vit).items()}
    params.update({f"text.{k}": v for k, v in ckpt.state_dict_to_arrays(text).items()})
    meta = {
        "kind": "encoders",
        "vit": vit.to_config(),
        "text": {"dim": text.dim},
        "vocab": text.vocab,
        "analytic_seed": analytic_seed,
        "dino_kind": dino_kind,
        "seed": seed,
        "config_hash": config_hash,
    }
    if extra_meta:
        meta.update(extra_meta)
    ckpt.save_checkpoint(path, params, meta)


def load_encoders(path, dino_kind: str | None = None) -> EncoderSuite:
    params, meta = ckpt.load_checkpoint(path)
    if meta.get("kind") != "encoders":
        raise ckpt.CheckpointError(f"{path}: expected an encoders checkpoint, got {meta.get('kind')}")
    vit = ViTEncoder(**meta["vit"])
    text = TextEncoder(meta["vocab"], dim=meta["text"]["dim"])
    ckpt.load_state_dict_from_arrays(vit, {k[4:]: v for k, v in params.items() if k.startswith("vit.")})
    ckpt.load_state_dict_from_arrays(text, {k[5:]: v for k, v in params.items() if k.startswith("text.")})
    vit.eval()
    text.eval()
    kind = dino_kind or meta.get("dino_kind", "analytic")
    dino = (AnalyticPatchEncoder(vit.image_size, vit.patch_grid, vit.dim, seed=meta["analytic_seed"])
            if kind == "analytic" else LearnedPatchEncoder(vit))
    return EncoderSuite(dino=dino, clip=ClipSurrogate(vit, text), vocab=meta["vocab"], dino_kind=kind)


# ---------------------------------------------------------------------------
# surrogate training

def build_surrogate_corpus(n_scenes: int, seed: int, image_size: int = 32,
                           decorated_fraction: float = 0.35):
    """Pre-rendered (image, prompt, part-label) corpus for contrastive training."""
    rng = np.random.default_rng(seed)
    images = np.empty((n_scenes, 3, image_size, image_size), dtype=np.float32)
    prompts: list[str] = []
    part_labels = np.empty((n_scenes, 64), dtype=np.int64)
    specs = []
    for i in range(n_scenes):
        decorated = rng.random() < decorated_fraction
        spec = sample_scene(rng, decorated=decorated)
        img, mask, _ = render_scene(spec, size=image_size)
        images[i] = img
        prompts.append(describe(spec, rng))
        part_labels[i] = _patch_part_labels(spec, mask, image_size)
        specs.append(spec)
    return images, prompts, part_labels, specs


def _patch_part_labels(spec, mask: np.ndarray, image_size: int, patch_grid: int = 8) -> np.ndarray:
    """0 = background, 1 = subject, 2 = decoration, one label per patch."""
    s = image_size // patch_grid
    fg = mask[0] > 0
    deco = np.zeros_like(fg)
    if spec.decoration is not None:
        deco = decoration_footprint(spec.decoration, image_size)
    labels = np.zeros(patch_grid * patch_grid, dtype=np.int64)
    for i in range(patch_grid):
        for j in range(patch_grid):
            cell_fg = fg[i * s:(i + 1) * s, j * s:(j + 1) * s].mean()
            cell_deco = deco[i * s:(i + 1) * s, j * s:(j + 1) * s].mean()
            if cell_deco > 0.25:
                labels[i * patch_grid + j] = 2
            elif cell_fg > 0.5:
                labels[i * patch_grid + j] = 1
    return labels


def contrastive_loss(vit: ViTEncoder, text: TextEncoder, images: torch.Tensor,
                     prompts: list[str], part_labels: torch.Tensor,
                     part_weight: float = 0.5) -> torch.Tensor:
    tokens = vit(images)
    img_emb = vit.clip_embed(tokens)
    txt_emb = torch.stack([text.global_embed(p) for p in prompts])
    scale = vit.logit_scale.exp().clamp(max=100.0)
    logits = scale * img_emb @ txt_emb.t()
    targets = torch.arange(len(prompts))
    nce = 0.5 * (F.cross_entropy(logits, targets) + F.cross_entropy(logits.t(), targets))
    part_logits = vit.part_head(tokens[:, 1:])
    part = F.cross_entropy(part_logits.reshape(-1, part_logits.shape[-1]), part_labels.reshape(-1))
    return nce + part_weight * part


def train_surrogates(*, n_scenes: int = 2000, steps: int = 1200, batch_size: int = 48,
                     image_size: int = 32, lr: float = 1e-3, seed: int = 0,
                     logger=None):
    """Train the toy CLIP (ViT + text table) with the part-classification
    auxiliary. Returns (vit, text_encoder, train_result)."""
    from .training import run_training

    if n_scenes < 1000:
        import warnings

        warnings.warn(f"surrogate corpus of {n_scenes} scenes is small (<1k); expect weak encoders")
    images, prompts, part_labels, _ = build_surrogate_corpus(n_scenes, seed, image_size)
    images_t = torch.from_numpy(images)
    labels_t = torch.from_numpy(part_labels)
    torch.manual_seed(seed)
    vocab = vocabulary()
    vit = ViTEncoder(image_size=image_size)
    text = TextEncoder(vocab)
    joint = nn.ModuleList([vit, text])

    def loss_fn(step, gen):
        idx = torch.randint(0, len(prompts), (batch_size,), generator=gen)
        batch_prompts = [prompts[i] for i in idx.tolist()]
        return contrastive_loss(vit, text, images_t[idx], batch_prompts, labels_t[idx])

    result = run_training(joint, loss_fn, steps=steps, lr=lr, weight_decay=1e-4, seed=seed,
                          logger=logger, label="surrogates")
    vit.eval()
    text.eval()
    return vit, text, result


@torch.no_grad()
def prompt_retrieval_accuracy(vit: ViTEncoder, text: TextEncoder, images: np.ndarray,
                              prompts: list[str], n_distractors: int = 16,
                              seed: int = 0) -> float:
    """Top-1 accuracy retrieving each image's prompt among distractors."""
    rng = np.random.default_rng(seed)
    img_emb = vit.clip_embed(vit(torch.from_numpy(images))).numpy()
    txt_emb = np.stack([text.global_embed(p).numpy() for p in prompts])
    hits = 0
    n = len(prompts)
    for i in range(n):
        others = rng.choice([j for j in range(n) if j != i], size=n_distractors, replace=False)
        cand = np.concatenate([[i], others])
        sims = img_emb[i] @ txt_emb[cand].T
        hits += int(np.argmax(sims) == 0)
    return hits / n
