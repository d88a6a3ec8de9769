"""End-to-end Locate&Gen: joint loss, teacher-forced training, greedy and
beam decoding, and the automatic / semi-automatic polishing modes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import PAD, UNK, CLS, BOS, EOS, CorpusRecord, Vocabulary
from .nn import EncoderOutput, ModelConfig, TransformerCore, select_insertion


@dataclass
class SimileSample:
    """One training/eval record in token space."""

    context_ids: list[int]   # CLS-prefixed characters
    gold_position: int       # pointer index == char offset; 0 = before first char
    simile_ids: list[int]    # BOS ... EOS

    def __post_init__(self):
        if not self.context_ids or self.context_ids[0] != CLS:
            raise ValueError("context_ids must be CLS-prefixed")
        if not 0 <= self.gold_position <= len(self.context_ids) - 1:
            raise ValueError("gold_position outside the context")
        if len(self.simile_ids) < 3 or self.simile_ids[0] != BOS or self.simile_ids[-1] != EOS:
            raise ValueError("simile_ids must be BOS ... EOS with a non-empty body")


@dataclass
class BeamHypothesis:
    token_ids: list[int]     # BOS-prefixed
    log_prob: float
    finished: bool

    @property
    def simile_ids(self) -> list[int]:
        body = self.token_ids[1:]
        if body and body[-1] == EOS:
            body = body[:-1]
        return body


@dataclass
class PolishResult:
    position: int
    pointer_probs: list[float]
    simile_text: str
    candidates: list[tuple[str, float]]
    polished_text: str


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int, cause: str):
        super().__init__(f"non-finite loss at step {step}: {cause}")
        self.step = step


@dataclass
class TrainConfig:
    learning_rate: float = 5e-5
    batch_size: int = 128
    max_steps: int = 2000
    eval_every: int = 100
    patience: int = 3
    pretrain_steps: int = 0
    pretrain_mask_rate: float = 0.15


def encode_record(record: CorpusRecord, vocab: Vocabulary,
                  config: ModelConfig) -> SimileSample | None:
    """Token-space view of a corpus record; None when it exceeds the
    configured context/simile budgets."""
    context_ids = [CLS] + vocab.encode_chars(record.context)
    simile_ids = [BOS] + vocab.encode_chars(record.simile) + [EOS]
    if len(context_ids) > config.max_context_len:
        return None
    if len(simile_ids) > config.max_simile_len:
        return None
    return SimileSample(context_ids=context_ids, gold_position=record.position,
                        simile_ids=simile_ids)


def encode_records(records: list[CorpusRecord], vocab: Vocabulary,
                   config: ModelConfig) -> list[SimileSample]:
    samples = [encode_record(r, vocab, config) for r in records]
    return [s for s in samples if s is not None]


def _pad_batch(rows: list[list[int]], width: int | None = None) -> np.ndarray:
    width = width or max(len(r) for r in rows)
    out = np.full((len(rows), width), PAD, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return out


class LocateGenModel:
    """Two-stage simile interpolator over one immutable parameter set."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary,
                 params: dict[str, Tensor] | None = None, seed: int = 0):
        if vocab.size != config.vocab_size:
            raise ValueError("config vocab_size must match the vocabulary")
        self.config = config
        self.vocab = vocab
        self.core = TransformerCore(config, params=params, seed=seed)

    @property
    def params(self) -> dict[str, Tensor]:
        return self.core.params

    # -- forward pieces --

    def encode(self, context_ids, training=False, rng=None) -> EncoderOutput:
        return self.core.encode(context_ids, training=training, rng=rng)

    def encode_text(self, text: str) -> EncoderOutput:
        if len(text) > self.config.max_context_len - 1:
            raise ValueError(
                f"text longer than {self.config.max_context_len - 1} characters"
            )
        ids = np.asarray([[CLS] + self.vocab.encode_chars(text)])
        return self.encode(ids)

    def pointer_distribution(self, enc: EncoderOutput) -> Tensor:
        return self.core.pointer_distribution(enc)

    def insertion_bias(self, enc: EncoderOutput, positions) -> Tensor:
        return self.core.insertion_bias(enc, positions)

    def decode_step(self, enc: EncoderOutput, prev_tokens, k: Tensor) -> Tensor:
        """(T, V) logits over the whole prefix for a single sequence."""
        logits = self.core.decoder_logits(enc, np.asarray([prev_tokens]), k)
        return ad.reshape(logits, logits.data.shape[1:])

    # -- loss --

    def joint_loss(self, batch: list[SimileSample], training: bool = True,
                   rng: np.random.Generator | None = None):
        """(total, positioning, generation) cross-entropy tensors.

        Generation is teacher-forced: it conditions on the gold position's
        insertion bias and the gold previous tokens; label smoothing applies
        to the generation term only.
        """
        if not batch:
            raise ValueError("empty batch")
        ctx = _pad_batch([s.context_ids for s in batch])
        gold_pos = np.asarray([s.gold_position for s in batch])
        dec_in = _pad_batch([s.simile_ids[:-1] for s in batch])
        targets = _pad_batch([s.simile_ids[1:] for s in batch])
        target_mask = targets != PAD

        enc = self.encode(ctx, training=training, rng=rng)
        pos_loss = ad.cross_entropy_smoothed(self.core.pointer_logits(enc), gold_pos)

        k = self.insertion_bias(enc, gold_pos)
        logits = self.core.decoder_logits(enc, dec_in, k, training=training, rng=rng)
        gen_loss = ad.cross_entropy_smoothed(logits, targets, self.config.epsilon_ls,
                                             mask=target_mask)
        return ad.add(pos_loss, gen_loss), pos_loss, gen_loss

    def teacher_forced_accuracy(self, samples: list[SimileSample],
                                batch_size: int = 64) -> tuple[float, float]:
        """(positioning exact-match, per-token argmax accuracy), no dropout."""
        pos_hits = tok_hits = tok_total = 0
        with ad.no_grad():
            for start in range(0, len(samples), batch_size):
                batch = samples[start : start + batch_size]
                ctx = _pad_batch([s.context_ids for s in batch])
                gold_pos = np.asarray([s.gold_position for s in batch])
                dec_in = _pad_batch([s.simile_ids[:-1] for s in batch])
                targets = _pad_batch([s.simile_ids[1:] for s in batch])
                mask = targets != PAD

                enc = self.encode(ctx)
                probs = self.pointer_distribution(enc).data
                pos_hits += int((probs.argmax(axis=1) == gold_pos).sum())

                k = self.insertion_bias(enc, gold_pos)
                logits = self.core.decoder_logits(enc, dec_in, k).data
                pred = logits.argmax(axis=-1)
                tok_hits += int(((pred == targets) & mask).sum())
                tok_total += int(mask.sum())
        return pos_hits / len(samples), tok_hits / tok_total

    # -- decoding --

    def _next_log_probs(self, enc: EncoderOutput, prefix: list[int], k: Tensor) -> np.ndarray:
        logits = self.core.decoder_logits(enc, np.asarray([prefix]), k).data[0, -1]
        shifted = logits - logits.max()
        return shifted - np.log(np.exp(shifted).sum())

    def greedy_decode(self, enc: EncoderOutput, i_ins: int,
                      with_log_prob: bool = False):
        """Argmax decoding (ties to the lowest token id) until EOS or the
        length budget runs out. Returns simile token ids (no BOS/EOS);
        with_log_prob additionally returns the accumulated log-probability
        of the chosen tokens and whether EOS terminated the sequence."""
        with ad.no_grad():
            k = self.insertion_bias(enc, [i_ins])
            prefix = [BOS]
            total_lp = 0.0
            finished = False
            while len(prefix) < self.config.max_simile_len:
                lp = self._next_log_probs(enc, prefix, k)
                token = int(lp.argmax())
                total_lp += float(lp[token])
                prefix.append(token)
                if token == EOS:
                    finished = True
                    break
        ids = [t for t in prefix[1:] if t != EOS]
        if with_log_prob:
            return ids, total_lp, finished
        return ids

    def beam_search(self, enc: EncoderOutput, i_ins: int,
                    beam_size: int) -> list[BeamHypothesis]:
        """Length-unnormalized beam search; finished hypotheses retire into
        the candidate pool. Sorted by log-prob descending, ties by token ids."""
        if beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        with ad.no_grad():
            k = self.insertion_bias(enc, [i_ins])
            active = [BeamHypothesis(token_ids=[BOS], log_prob=0.0, finished=False)]
            pool: list[BeamHypothesis] = []
            while active:
                candidates = []
                for hyp in active:
                    if len(hyp.token_ids) >= self.config.max_simile_len:
                        pool.append(hyp)
                        continue
                    lp = self._next_log_probs(enc, hyp.token_ids, k)
                    order = np.argsort(-lp, kind="stable")[:beam_size]
                    for token in order:
                        candidates.append(
                            BeamHypothesis(
                                token_ids=hyp.token_ids + [int(token)],
                                log_prob=hyp.log_prob + float(lp[token]),
                                finished=int(token) == EOS,
                            )
                        )
                candidates.sort(key=lambda h: (-h.log_prob, h.token_ids))
                active = []
                for hyp in candidates[:beam_size]:
                    if hyp.finished:
                        pool.append(hyp)
                    else:
                        active.append(hyp)
        pool.sort(key=lambda h: (-h.log_prob, h.token_ids))
        return pool

    def sequence_log_prob(self, enc: EncoderOutput, i_ins: int,
                          simile_ids: list[int]) -> float:
        """Teacher-forced log-probability of BOS-prefixed ids ending in EOS."""
        with ad.no_grad():
            k = self.insertion_bias(enc, [i_ins])
            logits = self.core.decoder_logits(enc, np.asarray([simile_ids[:-1]]), k).data[0]
        shifted = logits - logits.max(axis=-1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        targets = simile_ids[1:]
        return float(sum(logp[t, tok] for t, tok in enumerate(targets)))

    # -- polishing --

    def _decode_candidates(self, enc: EncoderOutput, position: int,
                           beam_size: int, top_n: int = 5) -> list[tuple[str, float]]:
        if beam_size <= 1:
            ids, lp, _ = self.greedy_decode(enc, position, with_log_prob=True)
            return [(self.vocab.decode_chars(ids), lp)]
        hyps = self.beam_search(enc, position, beam_size)
        return [(self.vocab.decode_chars(h.simile_ids), h.log_prob) for h in hyps[:top_n]]

    def _polish(self, text: str, position: int | None, beam_size: int) -> PolishResult:
        enc = self.encode_text(text)
        with ad.no_grad():
            probs = self.pointer_distribution(enc).data[0]
        if position is None:
            position = select_insertion(probs)
        elif not 0 <= position <= len(text):
            raise ValueError(f"position must lie in [0, {len(text)}]")
        candidates = self._decode_candidates(enc, position, beam_size)
        simile = candidates[0][0]
        return PolishResult(
            position=position,
            pointer_probs=[float(p) for p in probs],
            simile_text=simile,
            candidates=candidates,
            polished_text=text[:position] + simile + text[position:],
        )

    def polish_automatic(self, text: str, beam_size: int = 1) -> PolishResult:
        """Model chooses the insertion gap, then generates there."""
        return self._polish(text, None, beam_size)

    def polish_semi_automatic(self, text: str, forced_position: int,
                              beam_size: int = 1) -> PolishResult:
        """Caller supplies the gap; the pointer distribution is still
        reported for display."""
        return self._polish(text, forced_position, beam_size)


# --- training loop ---

@dataclass
class LossCurvePoint:
    step: int
    total: float
    positioning: float
    generation: float
    dev_total: float | None = None


def loss_curve_csv(curve: list[LossCurvePoint]) -> str:
    lines = ["step,total,positioning,generation,dev_total"]
    for p in curve:
        dev = "" if p.dev_total is None else f"{p.dev_total:.6f}"
        lines.append(f"{p.step},{p.total:.6f},{p.positioning:.6f},{p.generation:.6f},{dev}")
    return "\n".join(lines) + "\n"


def _dev_loss(model: LocateGenModel, samples: list[SimileSample],
              batch_size: int) -> float:
    total = 0.0
    count = 0
    with ad.no_grad():
        for start in range(0, len(samples), batch_size):
            batch = samples[start : start + batch_size]
            loss, _, _ = model.joint_loss(batch, training=False)
            total += loss.item() * len(batch)
            count += len(batch)
    return total / count


def pretrain_masked(model: LocateGenModel, samples: list[SimileSample],
                    steps: int, mask_rate: float, batch_size: int,
                    learning_rate: float, rng: np.random.Generator) -> list[float]:
    """Masked-token warm start for the encoder: random context characters are
    replaced by UNK and predicted back through the tied embedding table.
    Only encoder-side parameters are updated."""
    losses = []
    params = {name: p for name, p in model.params.items()
              if name.startswith("enc") or name in ("word_emb", "seg_emb")}
    state = ad.AdamState(params, learning_rate=learning_rate)
    for _ in range(steps):
        idx = rng.integers(0, len(samples), batch_size)
        rows = [samples[i].context_ids for i in idx]
        ctx = _pad_batch(rows)
        targets = ctx.copy()
        maskable = (ctx != PAD) & (ctx != CLS)
        chosen = maskable & (rng.random(ctx.shape) < mask_rate)
        if not chosen.any():
            continue
        corrupted = np.where(chosen, UNK, ctx)
        enc = model.encode(corrupted, training=True, rng=rng)
        logits = ad.matmul(enc.hidden, ad.transpose(params["word_emb"], (1, 0)))
        loss = ad.cross_entropy_smoothed(logits, targets, mask=chosen)
        ad.zero_grads(params)
        ad.backward(loss)
        ad.adam_step(params, state)
        losses.append(loss.item())
    return losses


def train(train_records: list[CorpusRecord], dev_records: list[CorpusRecord],
          model_config: ModelConfig, train_config: TrainConfig,
          vocab: Vocabulary, seed: int):
    """Adam training with early stopping on dev total loss.

    Returns (model, loss curve). Deterministic for a fixed seed: batch
    order, dropout masks, and parameter init all derive from it.
    """
    train_samples = encode_records(train_records, vocab, model_config)
    dev_samples = encode_records(dev_records, vocab, model_config)
    if not train_samples or not dev_samples:
        raise ValueError("train and dev splits must both be non-empty")

    model = LocateGenModel(model_config, vocab, seed=seed)
    rng = np.random.default_rng(seed + 1)
    params = model.params

    if train_config.pretrain_steps > 0:
        pretrain_masked(model, train_samples, train_config.pretrain_steps,
                        train_config.pretrain_mask_rate, train_config.batch_size,
                        train_config.learning_rate, rng)

    state = ad.AdamState(params, learning_rate=train_config.learning_rate)
    curve: list[LossCurvePoint] = []
    best_dev = float("inf")
    best_params = None
    stale = 0
    order = rng.permutation(len(train_samples))
    cursor = 0

    for step in range(1, train_config.max_steps + 1):
        if cursor + train_config.batch_size > len(order):
            order = rng.permutation(len(train_samples))
            cursor = 0
        idx = order[cursor : cursor + train_config.batch_size]
        cursor += train_config.batch_size
        batch = [train_samples[i] for i in idx]

        try:
            total, pos_loss, gen_loss = model.joint_loss(batch, training=True, rng=rng)
            ad.zero_grads(params)
            ad.backward(total)
        except ad.NonFiniteError as e:
            raise TrainingDivergedError(step, str(e)) from e
        ad.adam_step(params, state)

        point = LossCurvePoint(step=step, total=total.item(),
                               positioning=pos_loss.item(), generation=gen_loss.item())
        if step % train_config.eval_every == 0 or step == train_config.max_steps:
            dev = _dev_loss(model, dev_samples, train_config.batch_size)
            point.dev_total = dev
            if dev < best_dev:
                best_dev = dev
                best_params = {k: p.data.copy() for k, p in params.items()}
                stale = 0
            else:
                stale += 1
            curve.append(point)
            if stale >= train_config.patience:
                break
        else:
            curve.append(point)

    if best_params is not None:
        for k, p in params.items():
            p.data = best_params[k]
    return model, curve
