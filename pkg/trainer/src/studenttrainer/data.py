"""Loading exported role subsets and word-level tokenization.

The subset JSONL schema ({"input", "target", "role", "problem_id",
"path_index"}) is the only contract with the data-producing side.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence


class DataSchemaMismatch(Exception):
    """Subset file is missing, empty, or not in the exported schema."""


REQUIRED_FIELDS = {"input", "target", "role", "problem_id", "path_index"}

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIALS = [PAD, BOS, EOS, UNK]


@dataclass(frozen=True)
class Example:
    input: str
    target: str
    role: str


def load_subsets(paths: Sequence[str | Path]) -> list[Example]:
    """Read one or more exported subset files; order follows the input files."""
    if not paths:
        raise DataSchemaMismatch("no subset files given")
    examples: list[Example] = []
    for path in paths:
        path = Path(path)
        if not path.exists():
            raise DataSchemaMismatch(f"subset file not found: {path}")
        with path.open("r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataSchemaMismatch(f"{path}:{lineno}: invalid JSON: {exc}") from exc
                missing = REQUIRED_FIELDS - set(row)
                if missing:
                    raise DataSchemaMismatch(
                        f"{path}:{lineno}: missing fields {sorted(missing)}"
                    )
                examples.append(
                    Example(input=str(row["input"]), target=str(row["target"]), role=str(row["role"]))
                )
    if not examples:
        raise DataSchemaMismatch(f"subset files contain no examples: {list(map(str, paths))}")
    return examples


def tokenize(text: str) -> list[str]:
    return text.split()


class Vocab:
    """Word-level vocabulary built from training text."""

    def __init__(self, tokens: Sequence[str]):
        self.itos = list(tokens)
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocab":
        seen = dict.fromkeys(SPECIALS)
        for text in texts:
            for token in tokenize(text):
                seen.setdefault(token)
        return cls(list(seen))

    def __len__(self) -> int:
        return len(self.itos)

    @property
    def pad_id(self) -> int:
        return self.stoi[PAD]

    @property
    def bos_id(self) -> int:
        return self.stoi[BOS]

    @property
    def eos_id(self) -> int:
        return self.stoi[EOS]

    def encode(self, text: str, max_len: int) -> list[int]:
        unk = self.stoi[UNK]
        ids = [self.stoi.get(tok, unk) for tok in tokenize(text)]
        return ids[:max_len]

    def decode(self, ids: Sequence[int]) -> str:
        words = []
        for i in ids:
            token = self.itos[i]
            if token == EOS:
                break
            if token in (PAD, BOS):
                continue
            words.append(token)
        return " ".join(words)
