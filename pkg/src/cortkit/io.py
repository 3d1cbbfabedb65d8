"""JSON envelopes for every model kind."""

from __future__ import annotations

import json
from pathlib import Path


def _registry() -> dict:
    from cortkit.baselines import CheckerboardCopula, EmpiricalBetaCopula, EmpiricalCopula
    from cortkit.cort import Cort
    from cortkit.forest import CopulaForest
    from cortkit.plc import PiecewiseLinearCopula

    return {
        cls.kind: cls
        for cls in (PiecewiseLinearCopula, Cort, CheckerboardCopula, EmpiricalCopula, EmpiricalBetaCopula, CopulaForest)
    }


def model_from_dict(doc: dict):
    """Rebuild a model from the dictionary written by its ``to_dict``."""
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ValueError("model document has no 'kind' tag")
    registry = _registry()
    if doc["kind"] not in registry:
        raise ValueError(f"unknown model kind {doc['kind']!r}; expected one of {sorted(registry)}")
    return registry[doc["kind"]].from_dict(doc)


def load_model(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON ({exc})") from exc
    return model_from_dict(doc)


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()) + "\n", encoding="utf-8")
