"""Retrieve-then-rerank baselines: BM25 over local context windows,
mean-embedding cosine rerank, and a trained cross-matching reranker that
reuses the transformer encoder.

All baselines consume insertion positions predicted elsewhere; they never
locate on their own.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import CLS, BOS, EOS, CorpusRecord, Vocabulary
from .nn import ModelConfig, TransformerCore

BM25_K1 = 1.2
BM25_B = 0.75
WINDOW_CHARS = 16


def context_window(context: str, position: int, width: int = WINDOW_CHARS) -> str:
    """Up to `width` characters around the insertion offset, half on each
    side, truncated at text boundaries."""
    half = width // 2
    return context[max(0, position - half) : position] + context[position : position + half]


class InvertedIndex:
    """Character-unigram postings over training context windows; each
    indexed window carries its gold simile."""

    def __init__(self, windows: list[str], similes: list[str],
                 k1: float = BM25_K1, b: float = BM25_B):
        if len(windows) != len(similes):
            raise ValueError("windows and similes must align")
        self.windows = list(windows)
        self.similes = list(similes)
        self.k1 = k1
        self.b = b
        self.lengths = np.asarray([len(w) for w in windows], dtype=np.int32)
        self.doc_count = len(windows)
        self.avg_len = float(self.lengths.mean()) if len(windows) else 0.0
        self.postings: dict[str, list[tuple[int, int]]] = {}
        for rid, window in enumerate(windows):
            for term, tf in sorted(self._count(window).items()):
                self.postings.setdefault(term, []).append((rid, tf))

    @staticmethod
    def _count(text: str) -> dict[str, int]:
        counts: dict[str, int] = {}
        for ch in text:
            counts[ch] = counts.get(ch, 0) + 1
        return counts

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        if df == 0:
            return 0.0
        return math.log(1.0 + (self.doc_count - df + 0.5) / (df + 0.5))

    def scores(self, query: str) -> np.ndarray:
        """Okapi BM25 score of every indexed window against the query;
        query terms contribute with their multiplicity."""
        if not query:
            raise ValueError("empty query")
        out = np.zeros(self.doc_count)
        for term, qtf in self._count(query).items():
            postings = self.postings.get(term)
            if not postings:
                continue
            idf = self.idf(term)
            for rid, tf in postings:
                denom = tf + self.k1 * (1 - self.b + self.b * self.lengths[rid] / self.avg_len)
                out[rid] += qtf * idf * tf * (self.k1 + 1) / denom
        return out


def index_similes(records: list[CorpusRecord],
                  window_chars: int = WINDOW_CHARS) -> InvertedIndex:
    """Index the <=16-character window around each record's insertion point."""
    if not records:
        raise ValueError("empty training corpus")
    windows = [context_window(r.context, r.position, window_chars) for r in records]
    return InvertedIndex(windows, [r.simile for r in records])


def bm25_retrieve(index: InvertedIndex, query: str,
                  topk: int = 100) -> list[tuple[str, float]]:
    """Top-k (simile, score) by BM25, descending; ties break by record id."""
    scores = index.scores(query)
    order = sorted(range(index.doc_count), key=lambda rid: (-scores[rid], rid))
    return [(index.similes[rid], float(scores[rid])) for rid in order[:topk]]


# --- CBOW embeddings and rerank ---

@dataclass
class EmbeddingTable:
    """token -> dense vector, uniform dimension."""

    vectors: dict[str, np.ndarray]
    dim: int
    source: str = "trained-on-corpus"

    def __post_init__(self):
        for tok, vec in self.vectors.items():
            if vec.shape != (self.dim,):
                raise ValueError(f"vector for {tok!r} has wrong dimension")
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"non-finite vector for {tok!r}")

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def __getitem__(self, token: str) -> np.ndarray:
        return self.vectors[token]

    def save_text(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for tok, vec in self.vectors.items():
                f.write(tok + " " + " ".join(f"{x:.8g}" for x in vec) + "\n")

    @classmethod
    def load_text(cls, path) -> "EmbeddingTable":
        vectors = {}
        dim = None
        with open(path, encoding="utf-8") as f:
            for line in f:
                parts = line.rstrip("\n").split(" ")
                if len(parts) < 2:
                    continue
                vec = np.asarray([float(x) for x in parts[1:]])
                if dim is None:
                    dim = len(vec)
                vectors[parts[0]] = vec
        if dim is None:
            raise ValueError("empty embedding file")
        return cls(vectors=vectors, dim=dim, source="external file")


def train_cbow(records: list[CorpusRecord], dim: int = 16, window: int = 2,
               steps: int = 2000, batch_size: int = 64, learning_rate: float = 0.05,
               seed: int = 0) -> EmbeddingTable:
    """Desk-scale CBOW: predict a character from the mean embedding of its
    neighbors, full softmax over the corpus alphabet."""
    texts = [r.context[: r.position] + r.simile + r.context[r.position :] for r in records]
    chars = sorted({ch for t in texts for ch in t})
    if not chars:
        raise ValueError("no characters to train on")
    char_to_id = {ch: i for i, ch in enumerate(chars)}
    encoded = [np.asarray([char_to_id[ch] for ch in t]) for t in texts if len(t) > 2 * window]
    if not encoded:
        raise ValueError("corpus too short for the context window")

    rng = np.random.default_rng(seed)
    v = len(chars)
    table = Tensor(rng.normal(0, 0.1, (v, dim)).astype(np.float32), requires_grad=True)
    out_proj = Tensor(rng.normal(0, 0.1, (dim, v)).astype(np.float32), requires_grad=True)
    params = {"table": table, "out": out_proj}
    state = ad.AdamState(params, learning_rate=learning_rate)

    for _ in range(steps):
        ctx_rows = np.empty((batch_size, 2 * window), dtype=np.int64)
        targets = np.empty(batch_size, dtype=np.int64)
        for i in range(batch_size):
            seq = encoded[rng.integers(0, len(encoded))]
            center = int(rng.integers(window, len(seq) - window))
            targets[i] = seq[center]
            ctx_rows[i] = np.concatenate(
                [seq[center - window : center], seq[center + 1 : center + 1 + window]]
            )
        ctx_vecs = ad.embedding(table, ctx_rows)          # (B, 2w, D)
        mean = ad.scale(ad.matmul(ad.constant(np.ones((1, 2 * window), dtype=np.float32)),
                                  ctx_vecs), 1.0 / (2 * window))  # (B, 1, D)
        logits = ad.reshape(ad.matmul(mean, out_proj), (batch_size, v))
        loss = ad.cross_entropy_smoothed(logits, targets)
        ad.zero_grads(params)
        ad.backward(loss)
        ad.adam_step(params, state)

    vectors = {ch: table.data[i].astype(np.float64) for ch, i in char_to_id.items()}
    return EmbeddingTable(vectors=vectors, dim=dim)


def _mean_vector(text: str, table: EmbeddingTable) -> np.ndarray | None:
    vecs = [table[ch] for ch in text if ch in table]
    if not vecs:
        return None
    return np.stack(vecs).mean(axis=0)


def cbow_rerank(candidates: list[str], context: str,
                table: EmbeddingTable) -> list[tuple[str, float]]:
    """Rank candidate similes by cosine between mean token vectors of the
    candidate and the full original writing. Candidates with no known
    token score -1 and sink to the bottom."""
    if not candidates:
        raise ValueError("need at least one candidate")
    ctx_vec = _mean_vector(context, table)
    if ctx_vec is None:
        raise ValueError("context has no known tokens")
    scored = []
    for i, cand in enumerate(candidates):
        vec = _mean_vector(cand, table)
        if vec is None:
            scored.append((cand, -1.0, i))
            continue
        na, nb = np.linalg.norm(vec), np.linalg.norm(ctx_vec)
        cos = float(vec @ ctx_vec / (na * nb)) if na > 0 and nb > 0 else 0.0
        scored.append((cand, cos, i))
    scored.sort(key=lambda t: (-t[1], t[2]))
    return [(cand, score) for cand, score, _ in scored]


# --- trained cross-matching reranker ---

class MatchReranker:
    """Binary context/simile match scorer: the shared encoder runs over
    [CLS] context [BOS] simile [EOS] with segment ids 0/1, and the CLS row
    is projected to a single matching logit."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary,
                 params: dict[str, Tensor] | None = None, seed: int = 0):
        self.config = config
        self.vocab = vocab
        self.core = TransformerCore(config, params=params, seed=seed)
        if params is None:
            # encoder-only model: drop decoder and pointer parameters
            unused = [name for name in self.core.params
                      if name.startswith("dec") or name in ("w_ins", "w_ib")]
            for name in unused:
                del self.core.params[name]
        if "match.w" not in self.core.params:
            rng = np.random.default_rng(seed + 7)
            self.core.params["match.w"] = Tensor(
                rng.normal(0, 0.02, (config.hidden_size, 1)).astype(config.dtype),
                requires_grad=True,
            )
            self.core.params["match.b"] = Tensor(
                np.zeros((1,), dtype=config.dtype), requires_grad=True
            )

    @property
    def params(self) -> dict[str, Tensor]:
        return self.core.params

    def _pair_tokens(self, context: str, simile: str) -> tuple[list[int], list[int]]:
        ctx_ids = self.vocab.encode_chars(context)
        sim_ids = self.vocab.encode_chars(simile)
        ids = [CLS] + ctx_ids + [BOS] + sim_ids + [EOS]
        segs = [0] * (1 + len(ctx_ids)) + [1] * (2 + len(sim_ids))
        budget = self.config.max_context_len
        return ids[:budget], segs[:budget]

    def _logits(self, pairs: list[tuple[str, str]], training: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        rows = []
        seg_rows = []
        for context, simile in pairs:
            ids, segs = self._pair_tokens(context, simile)
            rows.append(ids)
            seg_rows.append(segs)
        width = max(len(r) for r in rows)
        ids_arr = np.zeros((len(rows), width), dtype=np.int64)
        segs_arr = np.zeros((len(rows), width), dtype=np.int64)
        for i, (r, s) in enumerate(zip(rows, seg_rows)):
            ids_arr[i, : len(r)] = r
            segs_arr[i, : len(s)] = s
        enc = self.core.encode(ids_arr, training=training, rng=rng,
                               segment_ids=segs_arr)
        cls_rows = ad.select_position(enc.hidden, np.zeros(len(rows), dtype=int))
        raw = ad.add(ad.matmul(cls_rows, self.params["match.w"]), self.params["match.b"])
        return ad.reshape(raw, (len(rows),))

    def score(self, context: str, similes: list[str]) -> list[float]:
        """Sigmoid match probability for each candidate, in (0, 1)."""
        with ad.no_grad():
            logits = self._logits([(context, s) for s in similes])
        return [float(x) for x in 1.0 / (1.0 + np.exp(-logits.data))]


def match_rerank_train(records: list[CorpusRecord], config: ModelConfig,
                       vocab: Vocabulary, seed: int, negatives: int = 5,
                       steps: int = 300, batch_pairs: int = 8,
                       learning_rate: float = 1e-3) -> MatchReranker:
    """Train the matching scorer with random negative sampling: each gold
    (context, simile) pair is opposed by `negatives` similes drawn from
    other records."""
    if len(records) <= negatives:
        raise ValueError("corpus smaller than the negative-sample requirement")
    model = MatchReranker(config, vocab, seed=seed)
    params = model.params
    state = ad.AdamState(params, learning_rate=learning_rate)
    rng = np.random.default_rng(seed)

    for _ in range(steps):
        pairs = []
        labels = []
        for _ in range(batch_pairs):
            i = int(rng.integers(0, len(records)))
            rec = records[i]
            pairs.append((rec.context, rec.simile))
            labels.append(1.0)
            drawn = 0
            while drawn < negatives:
                j = int(rng.integers(0, len(records)))
                if records[j].simile == rec.simile:
                    continue
                pairs.append((rec.context, records[j].simile))
                labels.append(0.0)
                drawn += 1
        logits = model._logits(pairs, training=True, rng=rng)
        loss = ad.sigmoid_bce(logits, np.asarray(labels, dtype=np.float32))
        ad.zero_grads(params)
        ad.backward(loss)
        ad.adam_step(params, state)
    return model


def match_rerank(candidates: list[str], context: str,
                 model: MatchReranker) -> list[tuple[str, float]]:
    """Rank candidates by the trained matching score, descending;
    ties keep input order."""
    if not candidates:
        raise ValueError("need at least one candidate")
    scores = model.score(context, candidates)
    order = sorted(range(len(candidates)), key=lambda i: (-scores[i], i))
    return [(candidates[i], scores[i]) for i in order]


# --- persistence ---

def save_index(path, index: InvertedIndex) -> None:
    from .checkpoint import write_container

    metadata = {
        "format_version": 1,
        "kind": "bm25_index",
        "k1": index.k1,
        "b": index.b,
        "windows": index.windows,
        "similes": index.similes,
    }
    write_container(path, metadata, {})


def load_index(path) -> InvertedIndex:
    from .checkpoint import read_container

    metadata, _ = read_container(path)
    if metadata.get("kind") != "bm25_index":
        raise ValueError("not a bm25 index container")
    return InvertedIndex(metadata["windows"], metadata["similes"],
                         k1=metadata["k1"], b=metadata["b"])


def save_match_checkpoint(path, model: MatchReranker) -> None:
    from .checkpoint import write_container, FORMAT_VERSION

    metadata = {
        "format_version": FORMAT_VERSION,
        "kind": "match_rerank",
        "model_config": model.config.to_dict(),
        "vocab_checksum": model.vocab.checksum(),
        "vocab_tokens": model.vocab.tokens,
    }
    write_container(path, metadata, {n: p.data for n, p in model.params.items()})


def load_match_checkpoint(path) -> MatchReranker:
    from .checkpoint import read_container, FORMAT_VERSION
    from .corpus import SPECIAL_TOKEN_STRINGS

    metadata, arrays = read_container(path)
    if metadata.get("kind") != "match_rerank":
        raise ValueError("not a match reranker checkpoint")
    if metadata.get("format_version") != FORMAT_VERSION:
        raise ValueError("unsupported checkpoint format")
    tokens = metadata["vocab_tokens"]
    vocab = Vocabulary(tokens[len(SPECIAL_TOKEN_STRINGS) :])
    config = ModelConfig.from_dict(metadata["model_config"])
    params = {n: Tensor(a, requires_grad=True) for n, a in arrays.items()}
    return MatchReranker(config, vocab, params=params)
