"""Serialization of records into knowledge-triple notes, and back.

Each feature becomes one sentence "<display name> is <bin>." so the note
is unambiguous and reversible. Token counting defaults to whitespace
runs; a different tokenizer can be plugged in.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable

from .dataset import FeatureSpec, PatientRecord

Tokenizer = Callable[[str], list[str]]

# Lazy name group: backtracking lets display names contain " is " as long
# as the earlier split does not itself form a valid sentence.
_SENTENCE = re.compile(r"(.+?) is ([^\s.]+)\.")


def whitespace_tokens(text: str) -> list[str]:
    return text.split()


def token_count(text: str, tokenizer: Tokenizer | None = None) -> int:
    """Number of tokens under the given tokenizer (default: whitespace runs)."""
    return len((tokenizer or whitespace_tokens)(text))


@dataclass(frozen=True)
class Note:
    record_id: str
    text: str
    token_count: int


def serialize(record: PatientRecord, schema: list[FeatureSpec], tokenizer: Tokenizer | None = None) -> Note:
    """Render a record as one "<display name> is <bin>." sentence per feature."""
    sentences = [f"{spec.display_name} is {record.bins[spec.name]}." for spec in schema]
    text = " ".join(sentences)
    return Note(record_id=record.id, text=text, token_count=token_count(text, tokenizer))


def parse(note: Note, schema: list[FeatureSpec]) -> PatientRecord:
    """Recover the bins from a serialized note (label is not carried)."""
    by_display = {spec.display_name: spec for spec in schema}
    bins: dict[str, int] = {}
    pos = 0
    text = note.text
    while pos < len(text):
        match = _SENTENCE.match(text, pos)
        if match is None:
            raise ValueError(f"note {note.record_id!r}: malformed sentence at offset {pos}")
        name, value = match.group(1), match.group(2)
        spec = by_display.get(name)
        if spec is None:
            raise ValueError(f"note {note.record_id!r}: unknown feature {name!r}")
        try:
            b = int(value)
        except ValueError as exc:
            raise ValueError(f"note {note.record_id!r}: non-integer bin {value!r} for {name!r}") from exc
        if not 1 <= b <= spec.bin_count:
            raise ValueError(f"note {note.record_id!r}: bin {b} out of range for {name!r}")
        if spec.name in bins:
            raise ValueError(f"note {note.record_id!r}: feature {name!r} appears twice")
        bins[spec.name] = b
        pos = match.end()
        if pos < len(text):
            if text[pos] != " ":
                raise ValueError(f"note {note.record_id!r}: malformed separator at offset {pos}")
            pos += 1
    missing = [spec.name for spec in schema if spec.name not in bins]
    if missing:
        raise ValueError(f"note {note.record_id!r}: incomplete note, missing {missing}")
    return PatientRecord(id=note.record_id, bins=bins, label=None)
