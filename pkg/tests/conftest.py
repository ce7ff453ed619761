import numpy as np
import pytest

from budgetlm.prepare import prepare_corpus
from budgetlm.synthcorpus import generate_corpus
from budgetlm.vocab import Vocab, load_vocab


@pytest.fixture(scope="session")
def toy_vocab() -> Vocab:
    """Ten entries: the five structural tokens plus a handful of pieces."""
    entries = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "cat", "##s", "##t", "ca", "r"]
    return Vocab(entries=entries, pad_id=0, unk_id=1, cls_id=2, sep_id=3, mask_id=4)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A few dozen tiny documents plus their vocab; fast to prepare."""
    root = tmp_path_factory.mktemp("small_corpus")
    corpus_dir, vocab_path = generate_corpus(
        root, n_docs=60, seed=5, n_words=400, doc_words=80, n_files=4
    )
    return corpus_dir, vocab_path, load_vocab(vocab_path)


@pytest.fixture(scope="session")
def small_shards(tmp_path_factory, small_corpus):
    """Prepared shards for the small corpus (seq_len 64, 3 copies)."""
    corpus_dir, _, vocab = small_corpus
    out = tmp_path_factory.mktemp("small_shards")
    summary = prepare_corpus(
        corpus_dir, vocab, out,
        seq_len=64, copies=3, mask_prob=0.15, val_fraction=0.1, seed=7, shard_size=512,
    )
    return out, vocab, summary


@pytest.fixture(scope="session")
def sample_corpus(tmp_path_factory):
    """The ~5MB synthetic corpus used by the heavier acceptance checks."""
    root = tmp_path_factory.mktemp("sample_corpus")
    corpus_dir, vocab_path = generate_corpus(
        root, n_docs=2000, seed=11, n_words=7500, doc_words=430
    )
    return corpus_dir, vocab_path, load_vocab(vocab_path)


def random_masked_instances(
    rng: np.random.Generator,
    vocab_size: int,
    seq_len: int,
    count: int,
    mask_id: int = 4,
    pad_id: int = 0,
    cls_id: int = 2,
    sep_id: int = 3,
    min_len: int | None = None,
    max_len: int | None = None,
):
    """Synthetic MaskedInstance list for model-level tests (ids 5.. are content)."""
    from budgetlm.pipeline import MaskedInstance
    from budgetlm.util import round_half_up

    out = []
    for _ in range(count):
        low = min_len if min_len is not None else max(5, seq_len // 2)
        high = max_len if max_len is not None else seq_len
        L = int(rng.integers(low, high + 1))
        ids = np.full(seq_len, pad_id, dtype=np.uint16)
        ids[0] = cls_id
        ids[L - 1] = sep_id
        ids[1 : L - 1] = rng.integers(5, vocab_size, size=L - 2)
        k = max(1, round_half_up(0.15 * (L - 2)))
        positions = np.sort(rng.choice(np.arange(1, L - 1), size=k, replace=False)).astype(np.uint16)
        labels = ids[positions].copy()
        for p in positions:
            u = rng.random()
            if u < 0.8:
                ids[p] = mask_id
            elif u < 0.9:
                ids[p] = int(rng.integers(5, vocab_size))
        out.append(
            MaskedInstance(
                input_ids=ids, true_length=L, mask_positions=positions, labels=labels
            )
        )
    return out
