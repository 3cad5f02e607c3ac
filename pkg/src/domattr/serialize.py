"""JSON serialization of model parameters and train reports.

Output is deterministic (sorted keys, fixed float repr), so identical runs
produce byte-identical files.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import DataError
from .solver import ModelParams, TrainReport


def _mat_obj(arr: np.ndarray) -> dict:
    return {"rows": arr.shape[0], "cols": arr.shape[1], "data": arr.tolist()}


def _obj_mat(obj, name: str) -> np.ndarray:
    try:
        arr = np.asarray(obj["data"], dtype=np.float64)
        rows, cols = int(obj["rows"]), int(obj["cols"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"params file: malformed matrix {name!r}") from exc
    if arr.shape != (rows, cols):
        raise DataError(
            f"params file: matrix {name!r} data is {arr.shape}, header says {(rows, cols)}"
        )
    return arr


def dumps_canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def params_to_obj(params: ModelParams) -> dict:
    return {
        "alpha": params.alpha,
        "attr_filters": _mat_obj(params.attr_filters),
        "shared_filters": _mat_obj(params.shared_filters),
        "domain_filters": [_mat_obj(W) for W in params.domain_filters],
        "attr_head": _mat_obj(params.attr_head),
        "shared_head": _mat_obj(params.shared_head),
        "domain_heads": [_mat_obj(U) for U in params.domain_heads],
        "attr_map": _mat_obj(params.attr_map),
    }


def save_params(params: ModelParams, path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(dumps_canonical(params_to_obj(params)))
    except OSError as exc:
        raise DataError(f"cannot write params file {path}: {exc}") from exc


def load_params(path) -> ModelParams:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read params file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"params file {path}: parse error: {exc}") from exc
    try:
        return ModelParams(
            alpha=int(obj["alpha"]),
            attr_filters=_obj_mat(obj["attr_filters"], "attr_filters"),
            shared_filters=_obj_mat(obj["shared_filters"], "shared_filters"),
            domain_filters=[
                _obj_mat(o, f"domain_filters[{i}]")
                for i, o in enumerate(obj["domain_filters"])
            ],
            attr_head=_obj_mat(obj["attr_head"], "attr_head"),
            shared_head=_obj_mat(obj["shared_head"], "shared_head"),
            domain_heads=[
                _obj_mat(o, f"domain_heads[{i}]")
                for i, o in enumerate(obj["domain_heads"])
            ],
            attr_map=_obj_mat(obj["attr_map"], "attr_map"),
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"params file {path}: missing field {exc}") from exc


def save_report(report: TrainReport, path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(dumps_canonical(report.as_dict()))
    except OSError as exc:
        raise DataError(f"cannot write report file {path}: {exc}") from exc
