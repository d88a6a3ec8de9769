"""Transformer encoder-decoder layers for simile interpolation.

Pre-norm residual blocks throughout. The encoder produces one hidden row
per input token (CLS in slot 0); a single projection of those rows scores
every insertion gap, and the hidden row at the chosen gap is projected into
an insertion-bias vector that is added to every decoder input embedding.
Output logits reuse the word-embedding table (weight tying).
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import PAD, UNK, CLS, BOS, EOS

MASK_BIAS = -1e9


@dataclass(frozen=True)
class SpecialTokens:
    cls: int = CLS
    bos: int = BOS
    eos: int = EOS
    pad: int = PAD
    unk: int = UNK

    def __post_init__(self):
        ids = [self.cls, self.bos, self.eos, self.pad, self.unk]
        if len(set(ids)) != len(ids):
            raise ValueError("special token ids must be pairwise distinct")


@dataclass
class ModelConfig:
    """Hyperparameters; embed size always equals hidden size."""

    vocab_size: int
    hidden_size: int = 64
    embed_size: int | None = None
    encoder_layers: int = 2
    decoder_layers: int = 2
    attention_heads: int = 4
    ffn_size: int = 256
    dropout_rate: float = 0.1
    max_context_len: int = 64
    max_simile_len: int = 16
    use_insertion_bias: bool = True
    epsilon_ls: float = 0.1
    precision: int = 32

    def __post_init__(self):
        if self.embed_size is None:
            self.embed_size = self.hidden_size
        if self.embed_size != self.hidden_size:
            raise ValueError("embed size must equal hidden size")
        if self.hidden_size % self.attention_heads != 0:
            raise ValueError("hidden size must be divisible by attention heads")
        if self.max_context_len < 2 or self.max_simile_len < 2:
            raise ValueError("max lengths must be >= 2")
        if self.vocab_size <= EOS:
            raise ValueError("vocabulary must contain all special tokens")
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")

    @property
    def dtype(self):
        return np.float32 if self.precision == 32 else np.float64

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class EncoderOutput:
    """Per-token hidden rows (CLS first) plus the padding mask (True = real)."""

    hidden: Tensor            # (B, L, H)
    attention_mask: np.ndarray  # (B, L) bool
    lengths: np.ndarray       # (B,) number of real rows incl. CLS

    def __post_init__(self):
        if self.hidden.data.shape[:2] != self.attention_mask.shape:
            raise ValueError("mask shape must match hidden rows")


def init_params(config: ModelConfig, seed: int) -> dict[str, Tensor]:
    """normal(0, 0.02) weights, zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(seed)
    dt = config.dtype
    h, f, v = config.hidden_size, config.ffn_size, config.vocab_size
    params: dict[str, Tensor] = {}

    def weight(name, shape):
        params[name] = Tensor(rng.normal(0.0, 0.02, shape).astype(dt), requires_grad=True)

    def zeros(name, shape):
        params[name] = Tensor(np.zeros(shape, dtype=dt), requires_grad=True)

    def ones(name, shape):
        params[name] = Tensor(np.ones(shape, dtype=dt), requires_grad=True)

    weight("word_emb", (v, h))
    weight("enc_pos", (config.max_context_len, h))
    weight("dec_pos", (config.max_simile_len, h))
    weight("seg_emb", (2, h))

    def attention(prefix):
        for part in ("wq", "wk", "wv", "wo"):
            weight(f"{prefix}.{part}", (h, h))
        for part in ("bq", "bk", "bv", "bo"):
            zeros(f"{prefix}.{part}", (h,))

    def ffn(prefix):
        weight(f"{prefix}.w1", (h, f))
        zeros(f"{prefix}.b1", (f,))
        weight(f"{prefix}.w2", (f, h))
        zeros(f"{prefix}.b2", (h,))

    def norm(prefix):
        ones(f"{prefix}.g", (h,))
        zeros(f"{prefix}.b", (h,))

    for i in range(config.encoder_layers):
        attention(f"enc.{i}.attn")
        ffn(f"enc.{i}.ffn")
        norm(f"enc.{i}.ln1")
        norm(f"enc.{i}.ln2")
    norm("enc.final_ln")

    for i in range(config.decoder_layers):
        attention(f"dec.{i}.self")
        attention(f"dec.{i}.cross")
        ffn(f"dec.{i}.ffn")
        norm(f"dec.{i}.ln1")
        norm(f"dec.{i}.ln2")
        norm(f"dec.{i}.ln3")
    norm("dec.final_ln")

    weight("w_ins", (h, 1))
    weight("w_ib", (h, h))
    return params


class TransformerCore:
    """Forward passes shared by the simile generator and the match scorer."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor] | None = None,
                 seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)

    # -- embeddings --

    def embed(self, token_ids: np.ndarray, position_offset: int = 0,
              table: str = "enc_pos", segment_ids: np.ndarray | None = None) -> Tensor:
        """word + learned-position + segment embedding rows."""
        ids = np.asarray(token_ids)
        length = ids.shape[-1]
        pos_table = self.params[table]
        if position_offset + length > pos_table.data.shape[0]:
            raise ValueError(
                f"sequence of length {length} at offset {position_offset} "
                f"exceeds the {table} table"
            )
        if ids.size and ids.max() >= self.config.vocab_size:
            raise ValueError("token id out of range")
        word = ad.embedding(self.params["word_emb"], ids)
        pos_rows = np.arange(position_offset, position_offset + length)
        pos = ad.embedding(pos_table, pos_rows)
        if segment_ids is None:
            seg = ad.embedding(self.params["seg_emb"], np.zeros(length, dtype=int))
        else:
            seg = ad.embedding(self.params["seg_emb"], np.asarray(segment_ids))
        return ad.add(ad.add(word, pos), seg)

    # -- attention --

    def _split_heads(self, x: Tensor, batch: int, length: int) -> Tensor:
        nh = self.config.attention_heads
        dh = self.config.hidden_size // nh
        return ad.transpose(ad.reshape(x, (batch, length, nh, dh)), (0, 2, 1, 3))

    def _attention(self, prefix: str, x_q: Tensor, x_kv: Tensor,
                   mask_bias: Tensor | None, training: bool,
                   rng: np.random.Generator | None) -> Tensor:
        p = self.params
        b, lq = x_q.data.shape[0], x_q.data.shape[1]
        lk = x_kv.data.shape[1]
        nh = self.config.attention_heads
        dh = self.config.hidden_size // nh

        q = self._split_heads(ad.add(ad.matmul(x_q, p[f"{prefix}.wq"]), p[f"{prefix}.bq"]), b, lq)
        k = self._split_heads(ad.add(ad.matmul(x_kv, p[f"{prefix}.wk"]), p[f"{prefix}.bk"]), b, lk)
        v = self._split_heads(ad.add(ad.matmul(x_kv, p[f"{prefix}.wv"]), p[f"{prefix}.bv"]), b, lk)

        scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
        if mask_bias is not None:
            scores = ad.add(scores, mask_bias)
        attn = ad.softmax_lastdim(scores)
        attn = self._dropout(attn, training, rng)
        ctx = ad.matmul(attn, v)
        merged = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, lq, self.config.hidden_size))
        out = ad.add(ad.matmul(merged, p[f"{prefix}.wo"]), p[f"{prefix}.bo"])
        return self._dropout(out, training, rng)

    def _ffn(self, prefix: str, x: Tensor, training: bool,
             rng: np.random.Generator | None) -> Tensor:
        p = self.params
        inner = ad.gelu(ad.add(ad.matmul(x, p[f"{prefix}.w1"]), p[f"{prefix}.b1"]))
        out = ad.add(ad.matmul(inner, p[f"{prefix}.w2"]), p[f"{prefix}.b2"])
        return self._dropout(out, training, rng)

    def _norm(self, prefix: str, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.params[f"{prefix}.g"], self.params[f"{prefix}.b"])

    def _dropout(self, x: Tensor, training: bool, rng) -> Tensor:
        if not training or self.config.dropout_rate <= 0.0:
            return x
        return ad.dropout(x, self.config.dropout_rate, rng)

    # -- encoder --

    def encode(self, context_ids: np.ndarray, training: bool = False,
               rng: np.random.Generator | None = None,
               segment_ids: np.ndarray | None = None) -> EncoderOutput:
        """Run the encoder stack over CLS-prefixed, PAD-padded token rows."""
        ids = np.atleast_2d(np.asarray(context_ids))
        b, length = ids.shape
        if length > self.config.max_context_len:
            raise ValueError("context longer than max_context_len")
        if not np.all(ids[:, 0] == CLS):
            raise ValueError("context must start with CLS")

        mask = ids != PAD
        mask[:, 0] = True
        bias = ad.constant(
            np.where(mask, 0.0, MASK_BIAS)[:, None, None, :].astype(self.config.dtype)
        )

        x = self.embed(ids, table="enc_pos", segment_ids=segment_ids)
        x = self._dropout(x, training, rng)
        for i in range(self.config.encoder_layers):
            normed = self._norm(f"enc.{i}.ln1", x)
            x = ad.add(x, self._attention(f"enc.{i}.attn", normed, normed, bias, training, rng))
            x = ad.add(x, self._ffn(f"enc.{i}.ffn", self._norm(f"enc.{i}.ln2", x), training, rng))
        x = self._norm("enc.final_ln", x)
        return EncoderOutput(hidden=x, attention_mask=mask,
                             lengths=mask.sum(axis=1))

    # -- pointer head --

    def pointer_logits(self, enc: EncoderOutput) -> Tensor:
        """(B, L) gap scores with padded slots pushed to -inf."""
        b, length, _ = enc.hidden.data.shape
        raw = ad.reshape(ad.matmul(enc.hidden, self.params["w_ins"]), (b, length))
        bias = ad.constant(
            np.where(enc.attention_mask, 0.0, MASK_BIAS).astype(self.config.dtype)
        )
        return ad.add(raw, bias)

    def pointer_distribution(self, enc: EncoderOutput) -> Tensor:
        """Softmax over real positions; padded slots get probability 0."""
        if not enc.attention_mask.any():
            raise ValueError("all positions are masked")
        return ad.softmax_lastdim(self.pointer_logits(enc))

    # -- insertion bias --

    def insertion_bias(self, enc: EncoderOutput, positions: np.ndarray) -> Tensor:
        """(B, H) bias vectors: the chosen hidden row projected by w_ib.
        Zero when the ablation switch turns the mechanism off."""
        idx = np.atleast_1d(np.asarray(positions))
        b = enc.hidden.data.shape[0]
        if idx.shape != (b,):
            raise ValueError("one position per batch row required")
        if np.any(idx < 0) or np.any(idx >= enc.lengths):
            raise ValueError("insertion position indexes a padded or missing row")
        if not self.config.use_insertion_bias:
            return ad.constant(np.zeros((b, self.config.hidden_size), dtype=self.config.dtype))
        rows = ad.select_position(enc.hidden, idx)
        return ad.matmul(rows, self.params["w_ib"])

    # -- decoder --

    def decoder_logits(self, enc: EncoderOutput, prev_ids: np.ndarray, k: Tensor,
                       training: bool = False,
                       rng: np.random.Generator | None = None) -> Tensor:
        """(B, T, V) next-token logits for BOS-prefixed decoder inputs.

        The insertion bias k (B, H) joins every input embedding; output
        logits share storage with the word-embedding table.
        """
        ids = np.atleast_2d(np.asarray(prev_ids))
        b, t = ids.shape
        if not np.all(ids[:, 0] == BOS):
            raise ValueError("decoder input must start with BOS")
        if t > self.config.max_simile_len:
            raise ValueError("decoder prefix longer than max_simile_len")

        x = self.embed(ids, table="dec_pos")
        x = ad.add(x, ad.reshape(k, (b, 1, self.config.hidden_size)))
        x = self._dropout(x, training, rng)

        causal = np.triu(np.full((t, t), MASK_BIAS, dtype=self.config.dtype), k=1)
        causal_bias = ad.constant(causal[None, None, :, :])
        cross_bias = ad.constant(
            np.where(enc.attention_mask, 0.0, MASK_BIAS)[:, None, None, :]
            .astype(self.config.dtype)
        )

        for i in range(self.config.decoder_layers):
            normed = self._norm(f"dec.{i}.ln1", x)
            x = ad.add(x, self._attention(f"dec.{i}.self", normed, normed,
                                          causal_bias, training, rng))
            x = ad.add(x, self._attention(f"dec.{i}.cross", self._norm(f"dec.{i}.ln2", x),
                                          enc.hidden, cross_bias, training, rng))
            x = ad.add(x, self._ffn(f"dec.{i}.ffn", self._norm(f"dec.{i}.ln3", x), training, rng))
        x = self._norm("dec.final_ln", x)
        return ad.matmul(x, ad.transpose(self.params["word_emb"], (1, 0)))


def select_insertion(pointer_probs) -> int:
    """Argmax gap index; ties break to the lowest index."""
    probs = pointer_probs.data if isinstance(pointer_probs, Tensor) else np.asarray(pointer_probs)
    return int(np.argmax(probs))
