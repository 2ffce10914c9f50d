"""Closed-vocabulary instructions and their designed reward specifications."""

from __future__ import annotations

from dataclasses import dataclass

VOCAB = ("<pad>", "touch", "the", "blue", "red", "green", "cube", ".", "<unk>", "<bos>")
PAD, UNK, BOS = 0, 8, 9
PERIOD = 7
MAX_LEN = 8

_WORD_TO_ID = {w: i for i, w in enumerate(VOCAB)}


def tokenize(text: str, max_len: int = MAX_LEN) -> list[int]:
    """Word-level ids over the fixed vocabulary, bos-prefixed, padded.

    Case-insensitive; a trailing period becomes its own token; any word
    outside the vocabulary maps to <unk>. Sequences that do not fit in
    max_len raise ValueError.
    """
    text = text.strip().lower()
    words: list[str] = []
    if text:
        if text.endswith("."):
            words = text[:-1].split() + ["."]
        else:
            words = text.split()
    ids = [BOS] + [_WORD_TO_ID.get(w, UNK) for w in words]
    if len(ids) > max_len:
        raise ValueError(f"instruction needs {len(ids)} tokens, max_len is {max_len}")
    return ids + [PAD] * (max_len - len(ids))


def detokenize(ids) -> str:
    """Inverse of tokenize for canonical sequences (lowercased text)."""
    words = [VOCAB[i] for i in ids if i not in (PAD, BOS)]
    out = ""
    for w in words:
        if w == ".":
            out += "."
        else:
            out += (" " if out else "") + w
    return out


@dataclass(frozen=True)
class Instruction:
    id: int
    text: str
    tokens: tuple[int, ...]

    @classmethod
    def make(cls, idx: int, text: str) -> "Instruction":
        return cls(id=idx, text=text, tokens=tuple(tokenize(text)))


@dataclass(frozen=True)
class RewardSpec:
    """Designed reward for one instruction.

    touch_binary: 1.0 if any fingertip touches the target cube, else 0.0.
    per_finger: +correct_gain per fingertip on the target, wrong_penalty per
    fingertip/wrong-cube contact pair.
    """

    kind: str  # "touch_binary" or "per_finger"
    target_color: str
    correct_gain: float = 1.0
    wrong_penalty: float = 0.0

    def __post_init__(self):
        if self.kind not in ("touch_binary", "per_finger"):
            raise ValueError(f"unknown reward kind {self.kind!r}")


@dataclass(frozen=True)
class InstructionSet:
    instructions: tuple[Instruction, ...]
    reward_specs: tuple[RewardSpec, ...]

    def __post_init__(self):
        if len(self.instructions) != len(self.reward_specs):
            raise ValueError("instructions and reward specs must be parallel lists")
        if not self.instructions:
            raise ValueError("instruction set is empty")
        ids = [inst.id for inst in self.instructions]
        if len(set(ids)) != len(ids):
            raise ValueError("instruction ids must be unique")

    def __len__(self) -> int:
        return len(self.instructions)
