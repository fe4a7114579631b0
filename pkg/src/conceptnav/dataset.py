"""Position/word training records and their CSV/JSON files."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from conceptnav.errors import ValidationError

CSV_COLUMNS = ("x", "y", "words")


@dataclass(frozen=True)
class TrainingRecord:
    position: Tuple[float, float]
    words: Tuple[str, ...]
    concept_id: Optional[int] = None
    position_id: Optional[int] = None

    def __post_init__(self):
        x, y = (float(v) for v in self.position)
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ValidationError(f"non-finite training position {self.position!r}")
        object.__setattr__(self, "position", (x, y))
        object.__setattr__(self, "words", tuple(self.words))


TrainingSet = List[TrainingRecord]


def has_assignments(records: Sequence[TrainingRecord]) -> bool:
    return bool(records) and all(
        r.concept_id is not None and r.position_id is not None for r in records
    )


def vocabulary_of(records: Sequence[TrainingRecord]) -> Tuple[str, ...]:
    """Words in first-seen order."""
    seen = {}
    for rec in records:
        for w in rec.words:
            seen.setdefault(w, None)
    return tuple(seen)


def _opt_int(value, column: str, line: int) -> Optional[int]:
    if value is None or str(value).strip() == "":
        return None
    try:
        return int(value)
    except ValueError:
        raise ValidationError(f"line {line}: column {column!r} is not an integer: {value!r}") from None


def read_training_csv(text: str) -> TrainingSet:
    """Columns ``x,y,words[,c_id,i_id]``; ``words`` is space-separated."""
    reader = csv.DictReader(io.StringIO(text))
    missing = [c for c in CSV_COLUMNS if c not in (reader.fieldnames or [])]
    if missing:
        raise ValidationError(f"training CSV missing column(s): {', '.join(missing)}")
    records = []
    for line, row in enumerate(reader, start=2):
        try:
            pos = (float(row["x"]), float(row["y"]))
        except (TypeError, ValueError):
            raise ValidationError(f"line {line}: bad position {row['x']!r}, {row['y']!r}") from None
        records.append(TrainingRecord(
            pos,
            tuple((row["words"] or "").split()),
            _opt_int(row.get("c_id"), "c_id", line),
            _opt_int(row.get("i_id"), "i_id", line),
        ))
    if not records:
        raise ValidationError("training data is empty")
    return records


def write_training_csv(records: Sequence[TrainingRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["x", "y", "words", "c_id", "i_id"])
    for r in records:
        writer.writerow([
            repr(r.position[0]), repr(r.position[1]), " ".join(r.words),
            "" if r.concept_id is None else r.concept_id,
            "" if r.position_id is None else r.position_id,
        ])
    return buf.getvalue()


def read_training_json(text: str) -> TrainingSet:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"training JSON invalid: {exc}") from None
    if isinstance(doc, dict):
        doc = doc.get("records")
    if not isinstance(doc, list) or not doc:
        raise ValidationError("training JSON must be a non-empty list of records")
    records = []
    for n, item in enumerate(doc):
        for key in CSV_COLUMNS:
            if key not in item:
                raise ValidationError(f"record {n}: missing field {key!r}")
        words = item["words"]
        if isinstance(words, str):
            words = words.split()
        records.append(TrainingRecord(
            (item["x"], item["y"]), tuple(words), item.get("c_id"), item.get("i_id"),
        ))
    return records


def read_training(path) -> TrainingSet:
    with open(path, encoding="utf-8") as f:
        text = f.read()
    if str(path).lower().endswith(".json"):
        return read_training_json(text)
    return read_training_csv(text)
