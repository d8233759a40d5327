"""Calibration token sets: a seeded synthetic corpus or a token file."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from src.errors import ArgumentError, FormatError

logger = logging.getLogger(__name__)

SYNTHETIC = "synthetic"
NOISE_RATE = 0.5
MOTIF_MIN, MOTIF_MAX = 3, 8
MOTIF_BANK_SEED = 1234


@dataclass(frozen=True)
class CalibrationSet:
    """B token sequences of identical length L."""

    sequences: np.ndarray = field(repr=False)
    seed: int
    source: str

    def __post_init__(self):
        seqs = np.array(self.sequences, dtype=np.int64, copy=True)
        if seqs.ndim != 2 or seqs.shape[0] < 1 or seqs.shape[1] < 1:
            raise ArgumentError(f"calibration set must be a non-empty B×L array, got shape {seqs.shape}")
        if seqs.min() < 0:
            raise ArgumentError("token ids must be non-negative")
        seqs.setflags(write=False)
        object.__setattr__(self, "sequences", seqs)

    @property
    def nsamples(self) -> int:
        return self.sequences.shape[0]

    @property
    def seqlen(self) -> int:
        return self.sequences.shape[1]

    def tokens(self) -> np.ndarray:
        return self.sequences

    def subset(self, indices) -> "CalibrationSet":
        return CalibrationSet(self.sequences[np.asarray(indices)], self.seed, self.source)


def make_synthetic_corpus(seed: int, vocab_size: int, nsamples: int, seqlen: int) -> CalibrationSet:
    """Sequences of recurring motifs interleaved with uniform noise tokens.

    The motif bank depends only on the vocabulary size, so every seed
    samples the same language; `seed` drives which motifs and noise tokens
    are drawn. Noise tokens keep the vocabulary well covered.
    """
    if vocab_size < 2:
        raise ArgumentError(f"vocab_size must be >= 2, got {vocab_size}")
    if nsamples < 1 or seqlen < 1:
        raise ArgumentError(f"nsamples and seqlen must be >= 1, got {nsamples}, {seqlen}")
    bank = np.random.default_rng([MOTIF_BANK_SEED, vocab_size])
    n_motifs = max(4, vocab_size // 8)
    motifs: List[np.ndarray] = [
        bank.integers(0, vocab_size, size=int(bank.integers(MOTIF_MIN, MOTIF_MAX + 1)))
        for _ in range(n_motifs)
    ]

    rng = np.random.default_rng(seed)
    sequences = np.empty((nsamples, seqlen), dtype=np.int64)
    for b in range(nsamples):
        row: List[int] = []
        while len(row) < seqlen:
            if rng.random() < NOISE_RATE:
                row.append(int(rng.integers(0, vocab_size)))
            else:
                row.extend(int(t) for t in motifs[int(rng.integers(0, n_motifs))])
        sequences[b] = row[:seqlen]
    return CalibrationSet(sequences, seed, SYNTHETIC)


def _read_token_lines(path: Path) -> List[np.ndarray]:
    lines = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            try:
                ids = np.array([int(p) for p in parts], dtype=np.int64)
            except ValueError as e:
                raise FormatError(f"{path}:{lineno}: tokens must be integers") from e
            if ids.min() < 0:
                raise FormatError(f"{path}:{lineno}: tokens must be unsigned")
            lines.append(ids)
    return lines


def load_token_file(path: Union[str, Path], nsamples: int, seqlen: int, seed: int,
                    vocab_size: Optional[int] = None) -> CalibrationSet:
    """Sample `nsamples` random contiguous segments of length `seqlen`.

    The file holds whitespace-separated token ids, one sequence per line;
    only lines at least `seqlen` long are sampled from.
    """
    path = Path(path)
    if nsamples < 1 or seqlen < 1:
        raise ArgumentError(f"nsamples and seqlen must be >= 1, got {nsamples}, {seqlen}")
    try:
        lines = _read_token_lines(path)
    except FileNotFoundError as e:
        raise ArgumentError(f"token file not found: {path}") from e
    usable = [ids for ids in lines if ids.size >= seqlen]
    if not usable:
        raise ArgumentError(f"{path}: no sequence has at least {seqlen} tokens")
    if vocab_size is not None:
        top = max(int(ids.max()) for ids in usable)
        if top >= vocab_size:
            raise ArgumentError(f"{path}: token id {top} out of range for vocab_size={vocab_size}")

    rng = np.random.default_rng(seed)
    sequences = np.empty((nsamples, seqlen), dtype=np.int64)
    for b in range(nsamples):
        ids = usable[int(rng.integers(0, len(usable)))]
        start = int(rng.integers(0, ids.size - seqlen + 1))
        sequences[b] = ids[start:start + seqlen]
    logger.info("sampled %d segments of %d tokens from %s", nsamples, seqlen, path)
    return CalibrationSet(sequences, seed, str(path))


def load_calibration(source: str, vocab_size: int, nsamples: int, seqlen: int, seed: int) -> CalibrationSet:
    """`synthetic` or a token-file path."""
    if source == SYNTHETIC:
        return make_synthetic_corpus(seed, vocab_size, nsamples, seqlen)
    return load_token_file(source, nsamples, seqlen, seed, vocab_size=vocab_size)
