"""Automatic evaluation: positioning accuracy, corpus BLEU, perplexity,
distinct-n diversity, and embedding-based context similarity.

All text metrics operate on character tokens, matching the char-level
tokenization used everywhere else.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .corpus import PAD, CorpusRecord
from .model import LocateGenModel, encode_records, _pad_batch


@dataclass
class MetricsReport:
    positioning_accuracy: float
    ppl: float
    bleu1: float
    bleu2: float
    bleu3: float
    mean_length: float
    ea: float
    gm: float
    ve: float
    dist1: float
    dist2: float
    distS: float
    sample_count: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def positioning_accuracy(predictions, golds) -> float:
    """Fraction of predictions exactly matching the gold insertion index."""
    if len(predictions) != len(golds):
        raise ValueError("predictions and golds must have equal length")
    if not predictions:
        raise ValueError("empty prediction list")
    return sum(int(p == g) for p, g in zip(predictions, golds)) / len(predictions)


def _ngrams(tokens, n):
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def bleu_n(hypotheses: list[str], references: list[str], n: int) -> float:
    """Corpus-level BLEU-n on character tokens, 0-100 scale.

    Uniform weights over orders 1..n, multiplicative brevity penalty, no
    smoothing: any zero modified precision gives score 0.
    """
    if n not in (1, 2, 3):
        raise ValueError("n must be 1, 2 or 3")
    if not hypotheses or len(hypotheses) != len(references):
        raise ValueError("need equally many non-empty hypothesis/reference lists")
    matched = [0] * n
    total = [0] * n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        h, r = list(hyp), list(ref)
        hyp_len += len(h)
        ref_len += len(r)
        for order in range(1, n + 1):
            h_counts = Counter(_ngrams(h, order))
            r_counts = Counter(_ngrams(r, order))
            total[order - 1] += sum(h_counts.values())
            matched[order - 1] += sum(
                min(c, r_counts[g]) for g, c in h_counts.items()
            )
    if hyp_len == 0:
        return 0.0
    log_precision = 0.0
    for order in range(n):
        if total[order] == 0 or matched[order] == 0:
            return 0.0
        log_precision += math.log(matched[order] / total[order]) / n
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_precision)


def perplexity(model: LocateGenModel, records: list[CorpusRecord],
               batch_size: int = 64) -> float:
    """exp(mean unsmoothed negative log-likelihood per gold simile token),
    teacher-forced at the gold positions. EOS counts as a predicted token."""
    samples = encode_records(records, model.vocab, model.config)
    if not samples:
        raise ValueError("no evaluable records")
    total_nll = 0.0
    token_count = 0
    with ad.no_grad():
        for start in range(0, len(samples), batch_size):
            batch = samples[start : start + batch_size]
            ctx = _pad_batch([s.context_ids for s in batch])
            gold_pos = np.asarray([s.gold_position for s in batch])
            dec_in = _pad_batch([s.simile_ids[:-1] for s in batch])
            targets = _pad_batch([s.simile_ids[1:] for s in batch])
            mask = targets != PAD

            enc = model.encode(ctx)
            k = model.insertion_bias(enc, gold_pos)
            logits = model.core.decoder_logits(enc, dec_in, k).data
            shifted = logits - logits.max(axis=-1, keepdims=True)
            logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
            gold_lp = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
            total_nll += float(-(gold_lp * mask).sum())
            token_count += int(mask.sum())
    return float(np.exp(total_nll / token_count))


def distinct(hypotheses: list[str]) -> tuple[float, float, float]:
    """(dist-1, dist-2, dist-S): unique/total unigrams, bigrams, sentences."""
    if not hypotheses:
        raise ValueError("empty hypothesis list")
    unigrams = []
    bigrams = []
    for hyp in hypotheses:
        toks = list(hyp)
        unigrams.extend(toks)
        bigrams.extend(_ngrams(toks, 2))
    dist1 = len(set(unigrams)) / len(unigrams) if unigrams else 0.0
    dist2 = len(set(bigrams)) / len(bigrams) if bigrams else 0.0
    dist_s = len(set(hypotheses)) / len(hypotheses)
    return dist1, dist2, dist_s


def _known_vectors(text: str, table) -> list[np.ndarray]:
    return [table[ch] for ch in text if ch in table]


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def embedding_similarity(simile: str, context: str, table) -> tuple[float, float, float]:
    """(EA, GM, VE) between the simile and its context.

    EA: cosine of mean vectors. GM: greedy match, averaged over both
    directions. VE: cosine of per-dimension extrema (the value with the
    largest magnitude in each dimension; the positive one on magnitude
    ties). Unknown tokens are skipped; a side with no known token is an
    error.
    """
    sv = _known_vectors(simile, table)
    cv = _known_vectors(context, table)
    if not sv or not cv:
        raise ValueError("no known tokens on one side")
    s = np.stack(sv)
    c = np.stack(cv)

    ea = _cosine(s.mean(axis=0), c.mean(axis=0))

    sims = np.zeros((len(sv), len(cv)))
    for i, a in enumerate(sv):
        for j, b in enumerate(cv):
            sims[i, j] = _cosine(a, b)
    gm = 0.5 * (sims.max(axis=1).mean() + sims.max(axis=0).mean())

    def extrema(mat):
        hi = mat.max(axis=0)
        lo = mat.min(axis=0)
        return np.where(np.abs(hi) >= np.abs(lo), hi, lo)

    ve = _cosine(extrema(s), extrema(c))
    return float(ea), float(gm), float(ve)


def _mean_similarity(pairs, table):
    vals = []
    for simile, context in pairs:
        try:
            vals.append(embedding_similarity(simile, context, table))
        except ValueError:
            continue
    if not vals:
        return 0.0, 0.0, 0.0
    arr = np.asarray(vals)
    return tuple(float(x) for x in arr.mean(axis=0))


def evaluate(predicted_positions: list[int], predicted_similes: list[str],
             golds: list[CorpusRecord], model: LocateGenModel | None = None,
             table=None) -> dict:
    """Aggregate every metric for one run; the returned dict carries the
    model row plus a ground-truth row (the gold similes scored against
    their own contexts) for calibration."""
    if not (len(predicted_positions) == len(predicted_similes) == len(golds)):
        raise ValueError("misaligned predictions and golds")
    gold_positions = [g.position for g in golds]
    gold_similes = [g.simile for g in golds]

    acc = positioning_accuracy(predicted_positions, gold_positions)
    d1, d2, ds = distinct(predicted_similes)
    ppl = perplexity(model, golds) if model is not None else float("nan")
    if table is not None:
        ea, gm, ve = _mean_similarity(
            [(s, g.context) for s, g in zip(predicted_similes, golds)], table
        )
        gt_ea, gt_gm, gt_ve = _mean_similarity(
            [(g.simile, g.context) for g in golds], table
        )
    else:
        ea = gm = ve = gt_ea = gt_gm = gt_ve = float("nan")

    report = MetricsReport(
        positioning_accuracy=acc,
        ppl=ppl,
        bleu1=bleu_n(predicted_similes, gold_similes, 1),
        bleu2=bleu_n(predicted_similes, gold_similes, 2),
        bleu3=bleu_n(predicted_similes, gold_similes, 3),
        mean_length=sum(len(s) for s in predicted_similes) / len(predicted_similes),
        ea=ea, gm=gm, ve=ve,
        dist1=d1, dist2=d2, distS=ds,
        sample_count=len(golds),
    )
    gt_d1, gt_d2, gt_ds = distinct(gold_similes)
    ground_truth = {
        "mean_length": sum(len(s) for s in gold_similes) / len(gold_similes),
        "ea": gt_ea, "gm": gt_gm, "ve": gt_ve,
        "dist1": gt_d1, "dist2": gt_d2, "distS": gt_ds,
    }
    return {"model": report.to_dict(), "ground_truth": ground_truth}


def format_report_table(result: dict) -> str:
    m = result["model"]
    g = result["ground_truth"]
    rows = [
        ("samples", f"{m['sample_count']}", ""),
        ("accuracy", f"{m['positioning_accuracy']:.3f}", ""),
        ("ppl", f"{m['ppl']:.3f}", ""),
        ("bleu1/2/3", f"{m['bleu1']:.2f} / {m['bleu2']:.2f} / {m['bleu3']:.2f}", ""),
        ("length", f"{m['mean_length']:.2f}", f"{g['mean_length']:.2f}"),
        ("ea/gm/ve",
         f"{m['ea']:.3f} / {m['gm']:.3f} / {m['ve']:.3f}",
         f"{g['ea']:.3f} / {g['gm']:.3f} / {g['ve']:.3f}"),
        ("dist-1/2/S",
         f"{m['dist1']:.3f} / {m['dist2']:.3f} / {m['distS']:.3f}",
         f"{g['dist1']:.3f} / {g['dist2']:.3f} / {g['distS']:.3f}"),
    ]
    out = [f"{'metric':<14}{'model':<28}{'ground truth':<28}"]
    out.append("-" * 64)
    for name, model_val, gt_val in rows:
        out.append(f"{name:<14}{model_val:<28}{gt_val:<28}")
    return "\n".join(out)
