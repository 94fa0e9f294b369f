"""Toy image/text encoders and pixel decoder.

These stand in for large pretrained backbones. They only have to deliver
tensors of the right shapes: an (H*W, C) image feature, an (N_t, C) word
feature and an (H*W, C) mask feature on the same grid as the image feature.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import numcore as nc
from .errors import InputError

PAD_ID = 0
UNK_ID = 1
_PUNCT = re.compile(r"[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace."""
    return _PUNCT.sub(" ", text.lower()).split()


@dataclass
class Vocabulary:
    tokens: list[str] = field(default_factory=list)

    def __post_init__(self):
        self._ids = {tok: i + 2 for i, tok in enumerate(self.tokens)}
        if len(self._ids) != len(self.tokens):
            raise InputError("vocabulary tokens must be unique")

    @classmethod
    def build(cls, corpus: Iterable[str]) -> "Vocabulary":
        seen: set[str] = set()
        for text in corpus:
            seen.update(tokenize(text))
        return cls(sorted(seen))

    def __len__(self) -> int:
        return len(self.tokens) + 2

    def lookup(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def encode(self, text: str) -> list[int]:
        return [self.lookup(t) for t in tokenize(text)]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln for ln in lines if ln])


@dataclass
class ImageFeature:
    tensor: nc.Tensor
    h: int
    w: int

    @property
    def c(self) -> int:
        return self.tensor.shape[1]


@dataclass
class TextFeature:
    tensor: nc.Tensor
    token_ids: list[int]


@dataclass
class MaskFeature:
    tensor: nc.Tensor
    h: int
    w: int


def init_encoder_params(
    params: nc.ParamSet,
    rng: np.random.Generator,
    *,
    channels: int,
    grid_h: int,
    grid_w: int,
    vocab_size: int,
    max_tokens: int,
    patch: int = 4,
) -> None:
    c = channels
    params.weight("img.patch_w", (patch * patch * 3, c), rng)
    params.bias("img.patch_b", c)
    params.weight("img.pos_row", (grid_h, c), rng)
    params.weight("img.pos_col", (grid_w, c), rng)
    for k in range(2):
        params.weight(f"img.block{k}.w1", (c, c), rng)
        params.bias(f"img.block{k}.b1", c)
        params.weight(f"img.block{k}.w2", (c, c), rng)
        params.bias(f"img.block{k}.b2", c)

    params.weight("txt.embed", (vocab_size, c), rng)
    params.weight("txt.pos", (max_tokens, c), rng)
    for n in ("wq", "wk", "wv"):
        params.weight(f"txt.{n}", (c, c), rng)

    for k in range(2):
        params.weight(f"pix.block{k}.w", (c, c), rng)
        params.bias(f"pix.block{k}.b", c)


def image_patches(pixels: np.ndarray, patch: int = 4) -> np.ndarray:
    """Cut an (h0, w0, 3) byte image into (H*W, patch*patch*3) rows scaled to [0, 1]."""
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise InputError(f"expected an h x w x 3 image, got shape {pixels.shape}")
    h0, w0, _ = pixels.shape
    if h0 % patch or w0 % patch:
        raise InputError(f"image size {h0}x{w0} is not divisible by patch size {patch}")
    hh, ww = h0 // patch, w0 // patch
    x = pixels.astype(np.float64) / 255.0
    x = x.reshape(hh, patch, ww, patch, 3).transpose(0, 2, 1, 3, 4)
    return x.reshape(hh * ww, patch * patch * 3)


def patch_embed(pixels: np.ndarray, params: nc.ParamSet, patch: int = 4) -> nc.Tensor:
    """First projection layer: linear map of each patch plus bias, before positions."""
    rows = nc.Tensor(image_patches(pixels, patch))
    return nc.add_row(nc.matmul(rows, params["img.patch_w"]), params["img.patch_b"])


def _mlp_residual(x: nc.Tensor, params: nc.ParamSet, prefix: str) -> nc.Tensor:
    h = nc.gelu(nc.add_row(nc.matmul(x, params[prefix + ".w1"]), params[prefix + ".b1"]))
    h = nc.add_row(nc.matmul(h, params[prefix + ".w2"]), params[prefix + ".b2"])
    return nc.add(x, h)


def positional_embedding(params: nc.ParamSet, hh: int, ww: int) -> nc.Tensor:
    """Separable 2-D table: row embedding plus column embedding, one row per grid position."""
    rows, cols = params["img.pos_row"], params["img.pos_col"]
    if rows.shape[0] != hh or cols.shape[0] != ww:
        raise InputError(f"image grid {hh}x{ww} does not match positional tables {rows.shape[0]}x{cols.shape[0]}")
    grid_r, grid_c = np.divmod(np.arange(hh * ww), ww)
    return nc.add(nc.embed(rows, grid_r.tolist()), nc.embed(cols, grid_c.tolist()))


def encode_image(pixels: np.ndarray, params: nc.ParamSet, patch: int = 4) -> ImageFeature:
    h0, w0 = pixels.shape[:2]
    x = patch_embed(pixels, params, patch)
    x = nc.add(x, positional_embedding(params, h0 // patch, w0 // patch))
    for k in range(2):
        x = _mlp_residual(x, params, f"img.block{k}")
    return ImageFeature(x, h0 // patch, w0 // patch)


def encode_text(expression: str, vocab: Vocabulary, params: nc.ParamSet) -> TextFeature:
    ids = vocab.encode(expression)
    if not ids:
        raise InputError("expression is empty after tokenization")
    max_tokens = params["txt.pos"].shape[0]
    if len(ids) > max_tokens:
        raise InputError(f"expression has {len(ids)} tokens; the model supports at most {max_tokens}")
    x = nc.add(nc.embed(params["txt.embed"], ids), nc.embed(params["txt.pos"], range(len(ids))))
    c = x.shape[1]
    q = nc.matmul(x, params["txt.wq"])
    k = nc.matmul(x, params["txt.wk"])
    v = nc.matmul(x, params["txt.wv"])
    att = nc.softmax_rows(nc.scale(nc.matmul(q, nc.transpose(k)), 1.0 / math.sqrt(c)))
    x = nc.add(x, nc.matmul(att, v))
    return TextFeature(x, ids)


def pixel_decode(f_i: ImageFeature, params: nc.ParamSet) -> MaskFeature:
    x = f_i.tensor
    for k in range(2):
        x = nc.gelu(nc.add_row(nc.matmul(x, params[f"pix.block{k}.w"]), params[f"pix.block{k}.b"]))
    return MaskFeature(nc.add(f_i.tensor, x), f_i.h, f_i.w)
