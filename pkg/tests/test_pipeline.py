import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from budgetlm.errors import ConfigError, DataError
from budgetlm.pipeline import (
    SequenceInstance,
    global_shuffle,
    mask_count,
    mask_instances,
    pack_sequences,
    split_validation,
)
from budgetlm.util import round_half_up


def oracle_pack(tokens: list[int], content: int) -> list[list[int]]:
    """Brute-force packer: chop one document into content-sized pieces."""
    return [tokens[i : i + content] for i in range(0, len(tokens), content)]


# --- pack_sequences ---------------------------------------------------------


def test_pack_exact_fill(toy_vocab):
    out = pack_sequences([[5] * 252], 128, toy_vocab)
    assert [inst.true_length for inst in out] == [128, 128]
    for inst in out:
        assert inst.token_ids[0] == toy_vocab.cls_id
        assert inst.token_ids[-1] == toy_vocab.sep_id
        assert len(inst.token_ids) == inst.true_length


def test_pack_short_document(toy_vocab):
    out = pack_sequences([[5] * 10], 128, toy_vocab)
    assert len(out) == 1 and out[0].true_length == 12


def test_pack_two_documents_never_mix(toy_vocab):
    docs = [[5] * 200, [6] * 200]
    out = pack_sequences(docs, 128, toy_vocab)
    assert len(out) == 4
    expected = []
    for doc_id, doc in enumerate(docs):
        for chunk in oracle_pack(doc, 126):
            expected.append((doc_id, chunk))
    got = [(inst.doc_id, inst.token_ids[1:-1]) for inst in out]
    assert got == expected


def test_pack_rejects_tiny_seq_len(toy_vocab):
    with pytest.raises(ConfigError):
        pack_sequences([[5]], 7, toy_vocab)


@settings(max_examples=50, deadline=None)
@given(lengths=st.lists(st.integers(min_value=0, max_value=400), min_size=1, max_size=8),
       seq_len=st.integers(min_value=8, max_value=64))
def test_pack_reassembles_documents(lengths, seq_len):
    from budgetlm.vocab import Vocab

    vocab = Vocab(entries=["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "w"],
                  pad_id=0, unk_id=1, cls_id=2, sep_id=3, mask_id=4)
    docs = []
    counter = 10
    for n in lengths:
        docs.append(list(range(counter, counter + n)))
        counter += n
    out = pack_sequences(docs, seq_len, vocab)
    rebuilt: dict[int, list[int]] = {}
    for inst in out:
        assert 3 <= inst.true_length <= seq_len
        rebuilt.setdefault(inst.doc_id, []).extend(inst.token_ids[1:-1])
    for doc_id, doc in enumerate(docs):
        assert rebuilt.get(doc_id, []) == doc


# --- split_validation -------------------------------------------------------


def _doc_instances(n_docs: int) -> list[SequenceInstance]:
    return [SequenceInstance(token_ids=[2, 5, 3], doc_id=d) for d in range(n_docs)]


def test_split_fraction_bound_rejected():
    with pytest.raises(ConfigError):
        split_validation(_doc_instances(10), 0.5, seed=1)


def test_split_requires_two_documents():
    with pytest.raises(DataError):
        split_validation(_doc_instances(1), 0.005, seed=1)


def test_split_deterministic():
    insts = _doc_instances(500)
    a = split_validation(insts, 0.1, seed=42)
    b = split_validation(insts, 0.1, seed=42)
    assert [i.doc_id for i in a[1]] == [i.doc_id for i in b[1]]


def test_split_document_granularity():
    insts = []
    for d in range(200):
        insts.extend(SequenceInstance(token_ids=[2, 5, 3], doc_id=d) for _ in range(3))
    train, val = split_validation(insts, 0.2, seed=9)
    train_docs = {i.doc_id for i in train}
    val_docs = {i.doc_id for i in val}
    assert not (train_docs & val_docs)
    assert len(train) + len(val) == len(insts)
    assert len(val) % 3 == 0  # whole documents only


def test_split_share_binomial_bound():
    # 100k uniform one-instance documents; expected share 0.005 +/- 20% rel.
    insts = _doc_instances(100_000)
    _, val = split_validation(insts, 0.005, seed=3)
    share = len(val) / len(insts)
    assert 0.004 <= share <= 0.006


# --- mask_instances ---------------------------------------------------------


def _packed(toy_vocab, lengths: list[int], seq_len: int = 128) -> list[SequenceInstance]:
    docs = [[5] * (L - 2) for L in lengths]
    return pack_sequences(docs, seq_len, toy_vocab)


def test_mask_count_arithmetic():
    assert mask_count(128, 0.15) == round_half_up(0.15 * 126) == 19
    assert mask_count(3, 0.15) == 1


def test_mask_output_size_and_copy_indices(toy_vocab):
    insts = _packed(toy_vocab, [128, 60, 3])
    out = mask_instances(insts, 4, 0.15, seed=0, vocab=toy_vocab, seq_len=128)
    assert len(out) == 4 * len(insts)
    assert sorted({m.copy_index for m in out}) == [0, 1, 2, 3]


def test_mask_positions_and_labels(toy_vocab):
    insts = _packed(toy_vocab, [128])
    out = mask_instances(insts, 1, 0.15, seed=1, vocab=toy_vocab, seq_len=128)
    (m,) = out
    assert len(m.mask_positions) == 19
    assert all(1 <= p <= m.true_length - 2 for p in m.mask_positions)
    assert list(m.mask_positions) == sorted(set(int(p) for p in m.mask_positions))
    specials = set(toy_vocab.special_ids())
    assert not (set(int(t) for t in m.labels) & specials)
    for pos, label in zip(m.mask_positions, m.labels):
        tok = int(m.input_ids[pos])
        assert tok == toy_vocab.mask_id or tok == label or not toy_vocab.is_special(tok)


def test_mask_copies_not_identical(toy_vocab):
    insts = _packed(toy_vocab, [128])
    out = mask_instances(insts, 10, 0.15, seed=2, vocab=toy_vocab, seq_len=128)
    position_sets = {tuple(int(p) for p in m.mask_positions) for m in out}
    assert len(position_sets) > 1


def test_mask_param_validation(toy_vocab):
    insts = _packed(toy_vocab, [10])
    with pytest.raises(ConfigError):
        mask_instances(insts, 0, 0.15, seed=0, vocab=toy_vocab, seq_len=128)
    with pytest.raises(ConfigError):
        mask_instances(insts, 1, 0.6, seed=0, vocab=toy_vocab, seq_len=128)
    with pytest.raises(ConfigError):
        mask_instances(insts, 1, 0.15, seed=0, vocab=toy_vocab, seq_len=128,
                       corruption=(0.5, 0.1, 0.1))


def test_mask_streams_independent_of_call_grouping(toy_vocab):
    # Masking copy-by-copy must equal one call over all copies: streams are
    # keyed by logical indices, not execution order.
    insts = _packed(toy_vocab, [128, 90, 40])
    full = mask_instances(insts, 3, 0.15, seed=5, vocab=toy_vocab, seq_len=128)
    by_copy = []
    for c in range(3):
        by_copy.extend(
            mask_instances(insts, 1, 0.15, seed=5, vocab=toy_vocab, seq_len=128, copy_offset=c)
        )
    assert full == by_copy


def test_mask_statistics_80_10_10():
    # A wide vocab keeps random-replacement collisions with the original
    # token negligible, so outcome counting reflects the policy split.
    from budgetlm.vocab import Vocab

    entries = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"] + [f"w{i}" for i in range(500)]
    vocab = Vocab(entries=entries, pad_id=0, unk_id=1, cls_id=2, sep_id=3, mask_id=4)
    rng = np.random.default_rng(0)
    docs = [list(rng.integers(5, vocab.size, size=126)) for _ in range(60)]
    insts = pack_sequences(docs, 128, vocab)
    out = mask_instances(insts, 10, 0.15, seed=7, vocab=vocab, seq_len=128)
    n_mask = n_keep = n_random = 0
    for m in out:
        for pos, label in zip(m.mask_positions, m.labels):
            tok = int(m.input_ids[pos])
            if tok == vocab.mask_id:
                n_mask += 1
            elif tok == label:
                n_keep += 1
            else:
                n_random += 1
    total = n_mask + n_keep + n_random
    assert total >= 10_000
    assert abs(n_mask / total - 0.8) < 0.015
    assert abs(n_random / total - 0.1) < 0.015
    assert abs(n_keep / total - 0.1) < 0.015


# --- global_shuffle ---------------------------------------------------------


def _key(m) -> tuple:
    return (m.true_length, m.copy_index, m.input_ids.tobytes(),
            m.mask_positions.tobytes(), m.labels.tobytes())


def test_shuffle_is_permutation(toy_vocab):
    insts = _packed(toy_vocab, [128] * 20)
    masked = mask_instances(insts, 3, 0.15, seed=0, vocab=toy_vocab, seq_len=128)
    shuffled = global_shuffle(masked, seed=1)
    assert sorted(map(_key, masked)) == sorted(map(_key, shuffled))


def test_shuffle_deterministic(toy_vocab):
    insts = _packed(toy_vocab, [128] * 5)
    masked = mask_instances(insts, 2, 0.15, seed=0, vocab=toy_vocab, seq_len=128)
    a = global_shuffle(masked, seed=3)
    b = global_shuffle(masked, seed=3)
    assert list(map(_key, a)) == list(map(_key, b))


def test_shuffle_breaks_copy_blocks():
    from budgetlm.pipeline import MaskedInstance

    instances = []
    for copy in range(10):
        for _ in range(10_000):
            instances.append(
                MaskedInstance(
                    input_ids=np.zeros(4, dtype=np.uint16),
                    true_length=4,
                    mask_positions=np.array([1], dtype=np.uint16),
                    labels=np.array([5], dtype=np.uint16),
                    copy_index=copy,
                )
            )
    shuffled = global_shuffle(instances, seed=2)
    same = sum(1 for a, b in zip(shuffled, shuffled[1:]) if a.copy_index == b.copy_index)
    frac = same / (len(shuffled) - 1)
    assert 0.08 <= frac <= 0.12
