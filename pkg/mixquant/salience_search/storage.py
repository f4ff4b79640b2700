"""Assignment JSON: {percent, N_largebit, per-layer sorted channel index lists}."""

from __future__ import annotations

import json
from pathlib import Path

from pydantic import ValidationError

from mixquant.errors import DataError
from mixquant.salience_search.models import PrecisionAssignment


def assignment_to_json(assignment: PrecisionAssignment) -> str:
    payload = assignment.model_dump(mode="json", exclude={"n_largebit"})
    payload["N_largebit"] = assignment.n_largebit
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def save_assignment(assignment: PrecisionAssignment, path: str | Path) -> None:
    Path(path).write_text(assignment_to_json(assignment), encoding="utf-8")


def load_assignment(path: str | Path) -> PrecisionAssignment:
    file_path = Path(path)
    if not file_path.is_file():
        raise DataError(f"Missing assignment file: {file_path}")
    try:
        payload = json.loads(file_path.read_text(encoding="utf-8"))
        payload["n_largebit"] = payload.pop("N_largebit")
        return PrecisionAssignment.model_validate(payload)
    except (ValueError, KeyError, ValidationError) as exc:
        raise DataError(f"Invalid assignment {file_path}: {exc}") from exc
