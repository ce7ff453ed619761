"""Subword vocabulary and the uncased greedy longest-match tokenizer.

Vocab file format: one token per line, line number = id. Special tokens are
declared in a sidecar header file (``<vocab>.specials`` by default) holding
``role=token`` lines for pad/unk/cls/sep/mask. When the sidecar is absent the
conventional bracketed names are looked up in the vocabulary itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import ConfigError, DataError

CONTINUATION = "##"

_SPECIAL_ROLES = ("pad", "unk", "cls", "sep", "mask")
_CONVENTIONAL = {"pad": "[PAD]", "unk": "[UNK]", "cls": "[CLS]", "sep": "[SEP]", "mask": "[MASK]"}

# Token ids serialize as 16-bit unsigned in shard files.
MAX_VOCAB_SIZE = 65536


@dataclass
class Vocab:
    """Dense id space over subword strings plus the five structural tokens."""

    entries: list[str]
    pad_id: int
    unk_id: int
    cls_id: int
    sep_id: int
    mask_id: int
    id_of: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not self.entries:
            raise ConfigError("vocabulary is empty")
        if len(self.entries) >= MAX_VOCAB_SIZE:
            raise ConfigError(
                f"vocabulary has {len(self.entries)} entries; ids must fit in uint16"
            )
        if not self.id_of:
            self.id_of = {tok: i for i, tok in enumerate(self.entries)}
        if len(self.id_of) != len(self.entries):
            raise ConfigError("vocabulary contains duplicate entries")
        specials = self.special_ids()
        if len(set(specials)) != 5:
            raise ConfigError(f"special token ids must be mutually distinct, got {specials}")
        for sid in specials:
            if not 0 <= sid < len(self.entries):
                raise ConfigError(f"special token id {sid} out of range")

    @property
    def size(self) -> int:
        return len(self.entries)

    def special_ids(self) -> tuple[int, int, int, int, int]:
        return (self.pad_id, self.unk_id, self.cls_id, self.sep_id, self.mask_id)

    def is_special(self, token_id: int) -> bool:
        return token_id in self.special_ids()

    def non_special_ids(self) -> list[int]:
        specials = set(self.special_ids())
        return [i for i in range(self.size) if i not in specials]


def load_vocab(path: str | Path, specials_path: str | Path | None = None) -> Vocab:
    """Load a vocabulary file plus its special-token header."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"vocab file not found: {path}")
    entries = path.read_text(encoding="utf-8").splitlines()
    while entries and entries[-1] == "":
        entries.pop()

    if specials_path is None:
        candidate = path.with_name(path.name + ".specials")
        specials_path = candidate if candidate.exists() else None

    if specials_path is not None:
        roles: dict[str, str] = {}
        for lineno, line in enumerate(Path(specials_path).read_text(encoding="utf-8").splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{specials_path}:{lineno}: expected role=token, got {line!r}")
            role, tok = line.split("=", 1)
            roles[role.strip().lower()] = tok.strip()
        missing = [r for r in _SPECIAL_ROLES if r not in roles]
        if missing:
            raise DataError(f"{specials_path}: missing special roles {missing}")
    else:
        roles = dict(_CONVENTIONAL)

    id_of = {tok: i for i, tok in enumerate(entries)}
    ids = {}
    for role in _SPECIAL_ROLES:
        tok = roles[role]
        if tok not in id_of:
            raise DataError(f"special token {tok!r} ({role}) not present in vocabulary {path}")
        ids[role] = id_of[tok]

    return Vocab(
        entries=entries,
        pad_id=ids["pad"],
        unk_id=ids["unk"],
        cls_id=ids["cls"],
        sep_id=ids["sep"],
        mask_id=ids["mask"],
        id_of=id_of,
    )


def save_vocab(vocab: Vocab, path: str | Path) -> None:
    path = Path(path)
    path.write_text("\n".join(vocab.entries) + "\n", encoding="utf-8")
    roles = {
        "pad": vocab.entries[vocab.pad_id],
        "unk": vocab.entries[vocab.unk_id],
        "cls": vocab.entries[vocab.cls_id],
        "sep": vocab.entries[vocab.sep_id],
        "mask": vocab.entries[vocab.mask_id],
    }
    sidecar = path.with_name(path.name + ".specials")
    sidecar.write_text("".join(f"{r}={t}\n" for r, t in roles.items()), encoding="utf-8")


def wordpiece_word(word: str, vocab: Vocab) -> list[int]:
    """Split one lowercased word into the longest matching vocabulary pieces.

    Continuation pieces carry the ``##`` prefix. A word with no matching
    prefix at any point collapses to a single unk id.
    """
    if word in vocab.id_of:
        return [vocab.id_of[word]]
    pieces: list[int] = []
    start = 0
    n = len(word)
    while start < n:
        end = n
        found = -1
        while start < end:
            piece = word[start:end]
            if start > 0:
                piece = CONTINUATION + piece
            pid = vocab.id_of.get(piece)
            if pid is not None:
                found = pid
                break
            end -= 1
        if found < 0:
            return [vocab.unk_id]
        pieces.append(found)
        start = end
    return pieces


def tokenize(documents: Iterable[str], vocab: Vocab) -> Iterator[list[int]]:
    """Tokenize a document stream into per-document token-id lists.

    Text is lowercased before matching (uncased convention) and split on
    whitespace; each word then goes through greedy longest-match WordPiece.
    """
    if vocab.size == 0:
        raise ConfigError("cannot tokenize with an empty vocabulary")
    for doc in documents:
        ids: list[int] = []
        for word in doc.lower().split():
            ids.extend(wordpiece_word(word, vocab))
        yield ids


def read_documents(input_dir: str | Path) -> list[str]:
    """Collect documents from every .txt file in a directory.

    Files are visited in sorted name order; within a file, documents are
    blank-line separated blocks with their lines joined by spaces.
    """
    input_dir = Path(input_dir)
    files = sorted(input_dir.glob("*.txt"))
    if not files:
        raise DataError(f"no .txt files under {input_dir}")
    docs: list[str] = []
    for f in files:
        block: list[str] = []
        for line in f.read_text(encoding="utf-8").splitlines():
            if line.strip():
                block.append(line.strip())
            elif block:
                docs.append(" ".join(block))
                block = []
        if block:
            docs.append(" ".join(block))
    return docs
