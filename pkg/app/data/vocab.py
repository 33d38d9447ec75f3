import re
from pathlib import Path
from typing import Iterable, Sequence

from app.errors import DataError, FeatureIOError

PAD, SOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<sos>", "<eos>", "<unk>")

_PUNCTUATION = re.compile(r"[^\w\s]")


def normalize_caption(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace."""
    return _PUNCTUATION.sub("", text.lower()).split()


class Vocabulary:
    def __init__(self, words: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {token: index for index, token in enumerate(RESERVED)}
        for word in words:
            self.add(word)

    def add(self, word: str) -> int:
        if word not in self.stoi:
            self.stoi[word] = len(self.itos)
            self.itos.append(word)
        return self.stoi[word]

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    @property
    def words(self) -> list[str]:
        return self.itos[len(RESERVED):]

    def encode(self, text: str) -> list[int]:
        return [self.stoi.get(word, UNK) for word in normalize_caption(text)]

    def decode(self, ids: Sequence[int]) -> str:
        words = []
        for index in ids:
            if index == EOS:
                break
            if index in (PAD, SOS):
                continue
            words.append(self.itos[index])
        return " ".join(words)

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(self.words) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: Path) -> "Vocabulary":
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise FeatureIOError(f"cannot read vocabulary {path}: {exc}") from exc
        words = [line for line in lines if line]
        if len(set(words)) != len(words) or set(words) & set(RESERVED):
            raise DataError(f"{path}: vocabulary words must be unique and not reserved")
        return cls(words)


def build_vocab(records) -> Vocabulary:
    """Vocabulary of every caption word in the records, ordered by first occurrence."""
    records = list(records)
    if not records:
        raise DataError("cannot build a vocabulary from an empty manifest")
    vocab = Vocabulary()
    for record in records:
        for word in normalize_caption(record.caption_text):
            vocab.add(word)
    return vocab
