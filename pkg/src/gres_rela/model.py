"""Full model: toy encoders, pixel decoder and the relationship block."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import encoders as enc
from . import numcore as nc
from . import rela
from .config import Config
from .errors import CompatibilityError


class GresModel:
    def __init__(self, config: Config, vocab: enc.Vocabulary, seed: int | None = None):
        self.config = config
        self.vocab = vocab
        self.variant = config.variant()
        self.params = nc.ParamSet()
        rng = np.random.default_rng(config.seed if seed is None else seed)
        enc.init_encoder_params(
            self.params,
            rng,
            channels=config.channels,
            grid_h=config.grid,
            grid_w=config.grid,
            vocab_size=len(vocab),
            max_tokens=config.max_tokens,
            patch=config.patch,
        )
        rela.init_rela_params(self.params, rng, channels=config.channels, regions=config.regions)

    def encode(self, image: np.ndarray, expression: str):
        f_i = enc.encode_image(image, self.params, self.config.patch)
        f_t = enc.encode_text(expression, self.vocab, self.params)
        f_m = enc.pixel_decode(f_i, self.params)
        return f_i, f_t, f_m

    def forward(self, image: np.ndarray, expression: str) -> rela.RelaOutput:
        f_i, f_t, f_m = self.encode(image, expression)
        return rela.forward(f_i, f_t, f_m, self.params, self.variant)

    def predict(self, image: np.ndarray, expression: str, mode: str | None = None) -> tuple[np.ndarray, bool]:
        out = self.forward(image, expression)
        h0, w0 = image.shape[:2]
        return rela.predict(
            out,
            h0,
            w0,
            mode or self.config.nt_mode,
            self.config.mask_threshold,
            self.config.nt_threshold,
        )

    def save(self, path: str | Path) -> None:
        nc.write_checkpoint(path, self.params.state())

    def load(self, path: str | Path) -> None:
        state = nc.read_checkpoint(path)
        table = state.get("txt.embed")
        if table is not None and table.shape[0] != len(self.vocab):
            raise CompatibilityError(
                f"checkpoint embeds {table.shape[0]} token ids but the vocabulary has {len(self.vocab)}"
            )
        self.params.load_state(state)
