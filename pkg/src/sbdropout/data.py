"""Synthetic correlated datasets and a plain-text classification loader."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import RngState


class DatasetFormatError(ValueError):
    pass


@dataclass
class RegressionDataset:
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    w_true: np.ndarray
    seed: int
    rho: float
    decorrelate_test: bool

    @property
    def dim(self) -> int:
        return self.X_train.shape[1]


@dataclass
class TextDataset:
    ids_train: np.ndarray
    y_train: np.ndarray
    ids_test: np.ndarray
    y_test: np.ndarray
    vocab_size: int
    seed: int
    rho: float
    decorrelate_test: bool = True
    cues: np.ndarray | None = None
    companions: np.ndarray | None = None

    @property
    def seq_len(self) -> int:
        return self.ids_train.shape[1]


def _paired_features(rng: RngState, n: int, dim: int, rho: float) -> np.ndarray:
    """Unit-variance features where columns (2k, 2k+1) have correlation ``rho``."""
    base = rng.normal((n, dim // 2))
    other = rng.normal((n, dim // 2))
    X = np.empty((n, dim))
    X[:, 0::2] = base
    X[:, 1::2] = rho * base + np.sqrt(1.0 - rho * rho) * other
    return X


def generate_correlated_regression(seed: int, n_train: int, dim: int, rho: float,
                                   noise_sigma: float, n_test: int | None = None,
                                   decorrelate_test: bool = True,
                                   feature_mean: float = 1.0,
                                   signal: float = 1.0) -> RegressionDataset:
    """Regression data whose feature pairs (2k, 2k+1) are correlated at ``rho``.

    The hidden weights load on feature 2k of each pair only, so any weight the
    model puts on feature 2k+1 is co-adaptation.  Every feature is shifted by
    ``feature_mean``.  With ``decorrelate_test`` the test features are drawn
    with independent pair members.
    """
    if dim < 2 or dim % 2:
        raise ValueError(f"dim must be a positive even number, got {dim}")
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be nonnegative, got {noise_sigma}")
    if n_train < 1:
        raise ValueError(f"n_train must be positive, got {n_train}")
    n_test = n_train if n_test is None else n_test
    rng_w, rng_train, rng_test = RngState(seed).split(3)

    w_true = np.zeros(dim)
    w_true[0::2] = signal * np.where(rng_w.random(dim // 2) < 0.5, -1.0, 1.0)

    X_train = _paired_features(rng_train, n_train, dim, rho) + feature_mean
    y_train = X_train @ w_true + noise_sigma * rng_train.normal(n_train)
    test_rho = 0.0 if decorrelate_test else rho
    X_test = _paired_features(rng_test, n_test, dim, test_rho) + feature_mean
    y_test = X_test @ w_true + noise_sigma * rng_test.normal(n_test)
    return RegressionDataset(X_train, y_train, X_test, y_test, w_true, seed, rho, decorrelate_test)


def _text_split(rng: RngState, n: int, seq_len: int, cues: np.ndarray, companions: np.ndarray,
                filler: np.ndarray, rho: float) -> tuple[np.ndarray, np.ndarray]:
    n_cues_per_class = cues.shape[1]
    labels = (rng.random(n) < 0.5).astype(np.int64)
    ids = filler[rng.integers(0, len(filler), (n, seq_len))]
    cue_idx = rng.integers(0, n_cues_per_class, n)
    cue_tok = cues[labels, cue_idx]
    own_companion = companions[labels, cue_idx]
    random_companion = companions.reshape(-1)[rng.integers(0, companions.size, n)]
    tied = rng.random(n) < rho
    comp_tok = np.where(tied, own_companion, random_companion)
    # two distinct positions per sequence
    pos_cue = rng.integers(0, seq_len, n)
    pos_comp = (pos_cue + rng.integers(1, seq_len, n)) % seq_len
    rows = np.arange(n)
    ids[rows, pos_cue] = cue_tok
    ids[rows, pos_comp] = comp_tok
    return ids, labels


def generate_synthetic_text(seed: int, vocab_size: int, n_samples: int, seq_len: int,
                            rho: float, n_test: int | None = None) -> TextDataset:
    """Binary token-sequence task with label cues and correlated companion tokens.

    Each sequence holds one class cue token and one companion token among random
    filler.  In training the companion is the cue's own partner with probability
    ``rho`` (otherwise uniform over all companions); in test it is always
    uniform, so companions carry no label information there.  Chance
    co-occurrence of a cue with its own partner is ``1 / n_companions``.
    """
    if vocab_size < 8:
        raise ValueError(f"vocab_size must be at least 8, got {vocab_size}")
    if seq_len < 3:
        raise ValueError(f"seq_len must be at least 3, got {seq_len}")
    if n_samples < 1:
        raise ValueError(f"n_samples must be positive, got {n_samples}")
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    n_test = n_samples if n_test is None else n_test
    per_class = max(1, vocab_size // 16)
    cues = np.arange(2 * per_class).reshape(2, per_class)
    companions = (2 * per_class + np.arange(2 * per_class)).reshape(2, per_class)
    filler = np.arange(4 * per_class, vocab_size)
    rng_train, rng_test = RngState(seed).split(2)
    ids_train, y_train = _text_split(rng_train, n_samples, seq_len, cues, companions, filler, rho)
    ids_test, y_test = _text_split(rng_test, n_test, seq_len, cues, companions, filler, 0.0)
    return TextDataset(ids_train, y_train, ids_test, y_test, vocab_size, seed, rho,
                       True, cues, companions)


def companion_cooccurrence(ids: np.ndarray, labels: np.ndarray, cues: np.ndarray,
                           companions: np.ndarray) -> float:
    """Fraction of sequences containing the partner of their own cue."""
    hits = 0
    for row, label in zip(ids, labels):
        present = np.isin(cues[label], row)
        partners = companions[label][present]
        hits += bool(np.isin(partners, row).any())
    return hits / len(labels)


def load_text_dataset(path: str | Path, min_len: int = 3) -> tuple[np.ndarray, np.ndarray, dict[str, int]]:
    """Read ``label<TAB>text`` lines into padded id sequences.

    Labels may be any strings; they are mapped to 0..C-1 in sorted order.  Token
    id 0 is reserved for padding.  Returns ``(ids, labels, vocab)``.
    """
    raw_labels: list[str] = []
    tokens: list[list[str]] = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        label, sep, body = line.partition("\t")
        if not sep or not label.strip() or not body.split():
            raise DatasetFormatError(f"{path}:{lineno}: expected 'label<TAB>text', got {line!r}")
        raw_labels.append(label.strip())
        tokens.append(body.split())
    if not tokens:
        raise DatasetFormatError(f"{path}: no examples found")

    vocab = {"<pad>": 0}
    for toks in tokens:
        for tok in toks:
            vocab.setdefault(tok, len(vocab))
    label_ids = {lab: i for i, lab in enumerate(sorted(set(raw_labels)))}
    length = max(min_len, max(len(t) for t in tokens))
    ids = np.zeros((len(tokens), length), dtype=np.int64)
    for i, toks in enumerate(tokens):
        ids[i, :len(toks)] = [vocab[t] for t in toks]
    labels = np.array([label_ids[lab] for lab in raw_labels], dtype=np.int64)
    return ids, labels, vocab
