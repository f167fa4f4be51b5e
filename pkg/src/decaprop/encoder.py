"""Token featurization: word vectors, char-level BiRNN states, match and
frequency indicators.

Each position becomes a row of width ``word_dim + char_hidden + 2``.  Word
vectors are frozen; the char embedding and char RNN train normally.  Padding
rows come out exactly zero.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DataError
from .numerics import ParamStore, Tensor, concat, embedding_init, gather_rows, mul, narrow, reshape
from .recurrent import BiRNN

PAD = "<pad>"
UNK = "<unk>"


class Vocab:
    """Token <-> index map with PAD at 0 (all-zero embedding) and UNK at 1."""

    def __init__(self, tokens):
        self.tokens = [PAD, UNK] + list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ConfigError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def encode(self, token: str) -> int:
        return self.index.get(token, 1)

    def encode_all(self, tokens) -> np.ndarray:
        return np.array([self.encode(t) for t in tokens], dtype=np.int64)

    @classmethod
    def build(cls, token_lists) -> "Vocab":
        seen: dict[str, None] = {}
        for tokens in token_lists:
            for t in tokens:
                seen.setdefault(t, None)
        return cls(sorted(seen))


def load_glove(path: str, expected_dim: int | None = None) -> tuple[Vocab, np.ndarray]:
    """Read a whitespace-separated embedding text file: token v1 ... vd per line.

    Returns a Vocab and a matrix aligned with it.  PAD stays zero; UNK gets
    the mean of all loaded vectors.
    """
    tokens: list[str] = []
    rows: list[np.ndarray] = []
    dim = expected_dim
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                raise DataError(f"{path}:{lineno}: malformed embedding line")
            vec = np.asarray(parts[1:], dtype=np.float64)
            if dim is None:
                dim = vec.size
            if vec.size != dim:
                raise DataError(f"{path}:{lineno}: expected {dim} values, got {vec.size}")
            tokens.append(parts[0])
            rows.append(vec)
    if not rows:
        raise DataError(f"{path}: empty embedding file")
    vocab = Vocab(tokens)
    matrix = np.zeros((len(vocab), dim))
    matrix[1] = np.mean(rows, axis=0)
    matrix[2:] = np.stack(rows)
    return vocab, matrix


def random_embeddings(rng: np.random.Generator, vocab: Vocab, dim: int) -> np.ndarray:
    """Frozen random word vectors for desk-scale runs; PAD row is zero."""
    matrix = embedding_init(rng, len(vocab), dim)
    matrix[0] = 0.0
    return matrix


def binary_match(tokens: list[str], other: list[str]) -> np.ndarray:
    """1.0 where the (lowercased) token also occurs in the other sequence."""
    pool = {t.lower() for t in other}
    return np.array([1.0 if t.lower() in pool else 0.0 for t in tokens])


def norm_frequency(tokens: list[str]) -> np.ndarray:
    """Occurrence count of each token within its own sequence, divided by length."""
    if not tokens:
        return np.zeros(0)
    counts: dict[str, int] = {}
    for t in tokens:
        key = t.lower()
        counts[key] = counts.get(key, 0) + 1
    n = len(tokens)
    return np.array([counts[t.lower()] / n for t in tokens])


class Featurizer:
    """Turns token lists into the integer/float arrays the model consumes."""

    def __init__(self, vocab: Vocab, char_vocab: Vocab, max_word_len: int = 16):
        self.vocab = vocab
        self.char_vocab = char_vocab
        self.max_word_len = max_word_len

    def char_ids(self, token: str) -> tuple[np.ndarray, np.ndarray]:
        ids = np.zeros(self.max_word_len, dtype=np.int64)
        mask = np.zeros(self.max_word_len)
        for i, ch in enumerate(token[: self.max_word_len]):
            ids[i] = self.char_vocab.encode(ch)
            mask[i] = 1.0
        return ids, mask

    def side(self, tokens: list[str], other: list[str]) -> dict:
        n = len(tokens)
        chars = np.zeros((n, self.max_word_len), dtype=np.int64)
        cmask = np.zeros((n, self.max_word_len))
        for i, t in enumerate(tokens):
            chars[i], cmask[i] = self.char_ids(t)
        return {
            "word": self.vocab.encode_all(tokens),
            "chars": chars,
            "char_mask": cmask,
            "match": binary_match(tokens, other),
            "freq": norm_frequency(tokens),
        }

    def example(self, ex) -> dict:
        feat = {
            "p": self.side(ex.passage_tokens, ex.question_tokens),
            "q": self.side(ex.question_tokens, ex.passage_tokens),
            "y1": ex.answer_start,
            "y2": ex.answer_end,
        }
        return feat

    @classmethod
    def build(cls, examples, max_word_len: int = 16) -> "Featurizer":
        token_lists = [ex.passage_tokens for ex in examples] + [ex.question_tokens for ex in examples]
        vocab = Vocab.build(token_lists)
        chars: dict[str, None] = {}
        for tokens in token_lists:
            for t in tokens:
                for ch in t[:max_word_len]:
                    chars.setdefault(ch, None)
        return cls(vocab, Vocab(sorted(chars)), max_word_len)


class InputEncoder:
    """Builds the per-position representation [word; char; match; freq]."""

    def __init__(self, store: ParamStore, name: str, word_matrix: np.ndarray,
                 char_vocab_size: int, char_dim: int, char_hidden: int,
                 cell: str, rng: np.random.Generator, char_pool: str = "final"):
        if char_pool not in ("final", "max"):
            raise ConfigError(f"char_pool must be 'final' or 'max', got {char_pool!r}")
        self.word_dim = word_matrix.shape[1]
        self.char_hidden = char_hidden
        self.char_pool = char_pool
        self.word_emb = store.register(f"{name}.word_emb", word_matrix, trainable=False)
        char_matrix = embedding_init(rng, char_vocab_size, char_dim)
        char_matrix[0] = 0.0
        self.char_emb = store.register(f"{name}.char_emb", char_matrix)
        self.char_rnn = BiRNN(store, f"{name}.char_rnn", char_dim, char_hidden, cell, rng)

    @property
    def output_dim(self) -> int:
        return self.word_dim + self.char_hidden + 2

    def _encode_char_block(self, ids: np.ndarray, mask: np.ndarray) -> Tensor:
        """(rows, max_word_len) char ids -> (rows, char_hidden) states."""
        emb = gather_rows(self.char_emb, ids)
        if self.char_pool == "max":
            pooled = self.char_rnn.pooled_states(emb, mask)
            # squash rows with no characters at all (pad tokens) back to zero
            alive = (mask.sum(axis=-1, keepdims=True) > 0).astype(np.float64)
            return mul(pooled, Tensor(alive))
        return self.char_rnn.final_states(emb, mask)

    def encode_chars(self, token: str, featurizer: Featurizer) -> Tensor:
        """Character encoding of one token; the empty token maps to zeros."""
        ids, mask = featurizer.char_ids(token)
        out = self._encode_char_block(ids.reshape(1, -1), mask.reshape(1, -1))
        return reshape(out, (self.char_hidden,))

    def __call__(self, batch: dict) -> tuple[Tensor, Tensor]:
        """Embed both sides of a collated batch -> (passage, question) tensors."""
        bsz, lp = batch["p_word"].shape
        lq = batch["q_word"].shape[1]
        wl = batch["p_chars"].shape[-1]

        # one char-RNN run across every token of both sides
        all_ids = np.concatenate(
            [batch["p_chars"].reshape(-1, wl), batch["q_chars"].reshape(-1, wl)])
        all_mask = np.concatenate(
            [batch["p_char_mask"].reshape(-1, wl), batch["q_char_mask"].reshape(-1, wl)])
        ch = self._encode_char_block(all_ids, all_mask)
        ch_p = reshape(narrow(ch, 0, 0, bsz * lp), (bsz, lp, self.char_hidden))
        ch_q = reshape(narrow(ch, 0, bsz * lp, bsz * lq), (bsz, lq, self.char_hidden))

        sides = []
        for prefix, ch_side in (("p", ch_p), ("q", ch_q)):
            word = gather_rows(self.word_emb, batch[f"{prefix}_word"])
            match = Tensor(batch[f"{prefix}_match"][..., None])
            freq = Tensor(batch[f"{prefix}_freq"][..., None])
            x = concat([word, ch_side, match, freq], -1)
            # zero out padding rows entirely
            x = mul(x, Tensor(batch[f"{prefix}_mask"][..., None]))
            sides.append(x)
        return sides[0], sides[1]


def build_input(encoder: InputEncoder, featurizer: Featurizer, example) -> tuple[Tensor, Tensor]:
    """Single-example convenience wrapper: returns 2-d (len, width) tensors."""
    from .training import collate  # local import: training owns batching

    feat = featurizer.example(example)
    batch = collate([feat])
    p, q = encoder(batch)
    return reshape(p, p.shape[1:]), reshape(q, q.shape[1:])
