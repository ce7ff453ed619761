"""Deterministic pre-masking pipeline: pack, split, mask, shuffle.

Every stochastic choice draws from a stream keyed by logical indices
(seed, copy, instance), so the output is a pure function of
(corpus, vocab, seed, config) no matter how the work is scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .util import LANE_MASK, LANE_SHUFFLE, hash_u64, round_half_up, rng_stream
from .vocab import Vocab

# Default corruption policy for selected positions: mask / random / keep.
CORRUPTION_SPLIT = (0.8, 0.1, 0.1)


@dataclass
class SequenceInstance:
    """One packed single-sequence training example before masking.

    token_ids starts with CLS and ends with SEP; no pair segment exists.
    """

    token_ids: list[int]
    doc_id: int

    @property
    def true_length(self) -> int:
        return len(self.token_ids)


@dataclass(eq=False)
class MaskedInstance:
    """A pre-masked example, padded to seq_len and ready to serialize.

    copy_index records which corpus copy produced the instance. It is
    pipeline metadata, not part of the serialized record, so equality
    covers only the four on-disk fields.
    """

    input_ids: np.ndarray  # (seq_len,) uint16
    true_length: int
    mask_positions: np.ndarray  # (k,) uint16, strictly increasing
    labels: np.ndarray  # (k,) uint16, originals at mask_positions
    copy_index: int = 0

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MaskedInstance):
            return NotImplemented
        return (
            self.true_length == other.true_length
            and np.array_equal(self.input_ids, other.input_ids)
            and np.array_equal(self.mask_positions, other.mask_positions)
            and np.array_equal(self.labels, other.labels)
        )


def pack_sequences(
    token_streams: "list[list[int]] | list[tuple[int, list[int]]]",
    seq_len: int,
    vocab: Vocab,
) -> list[SequenceInstance]:
    """Greedily fill seq_len-2 content positions per instance, one document at a time.

    Packing never crosses document boundaries; the final fragment of a
    document is emitted even when short. Streams may be bare token lists
    (doc ids assigned by position) or (doc_id, tokens) pairs.
    """
    if seq_len < 8:
        raise ConfigError(f"seq_len must be >= 8, got {seq_len}")
    content = seq_len - 2
    out: list[SequenceInstance] = []
    for i, stream in enumerate(token_streams):
        if isinstance(stream, tuple):
            doc_id, tokens = stream
        else:
            doc_id, tokens = i, stream
        for start in range(0, len(tokens), content):
            chunk = tokens[start : start + content]
            if not chunk:
                continue
            ids = [vocab.cls_id, *chunk, vocab.sep_id]
            out.append(SequenceInstance(token_ids=ids, doc_id=doc_id))
    return out


def split_validation(
    instances: list[SequenceInstance], val_fraction: float, seed: int
) -> tuple[list[SequenceInstance], list[SequenceInstance]]:
    """Hold out a document-keyed validation slice.

    The side of the split is decided by a seeded hash of doc_id, so every
    instance of a document lands on the same side and near-duplicates never
    leak across the boundary.
    """
    if not 0 < val_fraction < 0.5:
        raise ConfigError(f"val_fraction must be in (0, 0.5), got {val_fraction}")
    doc_ids = {inst.doc_id for inst in instances}
    if len(doc_ids) < 2:
        raise DataError(f"cannot split validation from {len(doc_ids)} document(s)")
    threshold = val_fraction * 2.0**64
    val_docs = {d for d in doc_ids if hash_u64(seed, d) < threshold}
    train = [inst for inst in instances if inst.doc_id not in val_docs]
    val = [inst for inst in instances if inst.doc_id in val_docs]
    return train, val


def mask_count(true_length: int, mask_prob: float) -> int:
    """Number of positions to corrupt: round(mask_prob * content), floored at 1."""
    return max(1, round_half_up(mask_prob * (true_length - 2)))


def mask_instances(
    instances: list[SequenceInstance],
    copies: int,
    mask_prob: float,
    seed: int,
    vocab: Vocab,
    seq_len: int,
    copy_offset: int = 0,
    corruption: tuple[float, float, float] = CORRUPTION_SPLIT,
) -> list[MaskedInstance]:
    """Produce `copies` statically masked variants of every instance.

    Per instance, k = max(1, round(mask_prob * content)) positions are chosen
    uniformly without replacement among content positions whose original token
    is not special; each chosen position becomes MASK / a uniform random
    non-special token / its original, per `corruption`. The RNG stream is
    keyed by (seed, lane, copy, instance), so output is independent of any
    worker parallelism. `copy_offset` shifts the copy key so separate calls
    (e.g. the validation pass) use disjoint streams.
    """
    if copies < 1:
        raise ConfigError(f"copies must be >= 1, got {copies}")
    if not 0 < mask_prob < 0.5:
        raise ConfigError(f"mask_prob must be in (0, 0.5), got {mask_prob}")
    if abs(sum(corruption) - 1.0) > 1e-9 or any(c < 0 for c in corruption):
        raise ConfigError(f"corruption split must be nonnegative and sum to 1, got {corruption}")

    p_mask, p_random, _ = corruption
    non_special = np.asarray(vocab.non_special_ids(), dtype=np.uint16)
    special = set(vocab.special_ids())

    out: list[MaskedInstance] = []
    for copy in range(copies):
        for idx, inst in enumerate(instances):
            L = inst.true_length
            if L > seq_len:
                raise DataError(f"instance {idx} longer ({L}) than seq_len {seq_len}")
            candidates = [p for p in range(1, L - 1) if inst.token_ids[p] not in special]
            if not candidates:
                # All-unk fragment: nothing maskable, nothing to predict.
                continue
            k = min(mask_count(L, mask_prob), len(candidates))

            rng = rng_stream(seed, LANE_MASK, copy_offset + copy, idx)
            chosen = np.sort(rng.choice(len(candidates), size=k, replace=False))
            positions = np.asarray([candidates[c] for c in chosen], dtype=np.uint16)

            input_ids = np.full(seq_len, vocab.pad_id, dtype=np.uint16)
            input_ids[:L] = np.asarray(inst.token_ids, dtype=np.uint16)
            labels = input_ids[positions].copy()

            rolls = rng.random(k)
            randoms = non_special[rng.integers(0, len(non_special), size=k)]
            for j, pos in enumerate(positions):
                if rolls[j] < p_mask:
                    input_ids[pos] = vocab.mask_id
                elif rolls[j] < p_mask + p_random:
                    input_ids[pos] = randoms[j]
                # else: keep the original token

            out.append(
                MaskedInstance(
                    input_ids=input_ids,
                    true_length=L,
                    mask_positions=positions,
                    labels=labels,
                    copy_index=copy_offset + copy,
                )
            )
    return out


def global_shuffle(instances: list[MaskedInstance], seed: int) -> list[MaskedInstance]:
    """Uniform seeded permutation of the whole masked dataset.

    Shuffling after masking breaks up the copy blocks, so adjacent examples
    rarely come from the same corpus copy.
    """
    rng = rng_stream(seed, LANE_SHUFFLE)
    order = rng.permutation(len(instances))
    return [instances[i] for i in order]
