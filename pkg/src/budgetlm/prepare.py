"""End-to-end corpus preparation: text directory in, shard directories out."""

from __future__ import annotations

from pathlib import Path
from typing import Any

from .pipeline import global_shuffle, mask_instances, pack_sequences, split_validation
from .shards import write_shards
from .util import RNG_ALGORITHM, fingerprint_u64
from .vocab import Vocab, read_documents, tokenize


def pipeline_fingerprint(
    seed: int, copies: int, mask_prob: float, seq_len: int, val_fraction: float
) -> int:
    """Stable 64-bit id of the RNG algorithm plus every pipeline knob."""
    return fingerprint_u64(
        f"{RNG_ALGORITHM}|seed={seed}|copies={copies}|mask_prob={mask_prob!r}"
        f"|seq_len={seq_len}|val_fraction={val_fraction!r}"
    )


def adjacent_same_copy_fraction(instances) -> float:
    if len(instances) < 2:
        return 0.0
    same = sum(
        1 for a, b in zip(instances, instances[1:]) if a.copy_index == b.copy_index
    )
    return same / (len(instances) - 1)


def prepare_corpus(
    input_dir: str | Path,
    vocab: Vocab,
    out_dir: str | Path,
    seq_len: int = 128,
    copies: int = 10,
    mask_prob: float = 0.15,
    val_fraction: float = 0.005,
    seed: int = 0,
    shard_size: int = 65536,
) -> dict[str, Any]:
    """Tokenize, pack, split, pre-mask, shuffle, and write shards.

    Output layout: <out_dir>/train/shard_*.bin and <out_dir>/valid/shard_*.bin.
    The validation side is masked once (a single static copy) on a stream
    disjoint from all training copies.
    """
    out_dir = Path(out_dir)
    docs = read_documents(input_dir)
    streams = list(tokenize(docs, vocab))
    instances = pack_sequences(streams, seq_len, vocab)
    train_inst, val_inst = split_validation(instances, val_fraction, seed)

    masked_train = mask_instances(
        train_inst, copies, mask_prob, seed, vocab, seq_len
    )
    masked_val = mask_instances(
        val_inst, 1, mask_prob, seed, vocab, seq_len, copy_offset=copies
    )
    shuffled = global_shuffle(masked_train, seed)
    adjacency = adjacent_same_copy_fraction(shuffled)

    fingerprint = pipeline_fingerprint(seed, copies, mask_prob, seq_len, val_fraction)
    train_paths = write_shards(
        shuffled, shard_size, out_dir / "train", seq_len, vocab.size, fingerprint
    )
    val_paths = write_shards(
        masked_val, shard_size, out_dir / "valid", seq_len, vocab.size, fingerprint
    )
    return {
        "documents": len(docs),
        "sequence_instances": len(instances),
        "train_instances": len(train_inst),
        "val_instances": len(val_inst),
        "masked_train_instances": len(shuffled),
        "masked_val_instances": len(masked_val),
        "adjacent_same_copy_fraction": adjacency,
        "seed_fingerprint": fingerprint,
        "train_shards": [str(p) for p in train_paths],
        "valid_shards": [str(p) for p in val_paths],
    }
