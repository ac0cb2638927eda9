"""Versioned model files.

A model file is UTF-8 JSON::

    {"magic": "OCTXAI-MODEL", "version": 1, "kind": "forest" | "boosted" | "ebm",
     "params": {...}, "model": {...}}

Floats are written with ``repr`` precision, so a save/load round trip
reproduces predictions bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .ebm import EbmModel, EbmParams
from .ensembles import BoostedModel, BoostingParams, ForestModel, ForestParams
from .trees import Tree

MAGIC = "OCTXAI-MODEL"
VERSION = 1


class ModelFileError(Exception):
    pass


class CorruptModelError(ModelFileError):
    pass


class ModelVersionError(ModelFileError):
    pass


def _arr(a) -> list:
    return np.asarray(a).tolist()


def model_to_dict(model) -> dict:
    if isinstance(model, ForestModel):
        body = {"n_features": model.n_features, "trees": [t.to_dict() for t in model.trees]}
    elif isinstance(model, BoostedModel):
        body = {
            "n_features": model.n_features,
            "base_score": model.base_score,
            "trees": [t.to_dict() for t in model.trees],
            "train_loss": list(model.train_loss),
        }
    elif isinstance(model, EbmModel):
        body = {
            "intercept": model.intercept,
            "feature_names": list(model.feature_names),
            "cuts": [_arr(c) for c in model.cuts],
            "main_terms": [_arr(t) for t in model.main_terms],
            "main_counts": [_arr(c) for c in model.main_counts],
            "pairs": [list(p) for p in model.pairs],
            "pair_cuts": [[_arr(a), _arr(b)] for a, b in model.pair_cuts],
            "pair_terms": [_arr(t) for t in model.pair_terms],
            "pair_counts": [_arr(c) for c in model.pair_counts],
            "train_loss": list(model.train_loss),
        }
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    params = asdict(model.params)
    if params.get("feature_order") is not None:
        params["feature_order"] = list(params["feature_order"])
    return {"magic": MAGIC, "version": VERSION, "kind": model.kind, "params": params, "model": body}


def model_from_dict(doc: dict):
    if not isinstance(doc, dict) or doc.get("magic") != MAGIC:
        raise CorruptModelError("missing model file header")
    if doc.get("version") != VERSION:
        raise ModelVersionError(f"unsupported model file version {doc.get('version')!r}")
    kind, params, body = doc.get("kind"), doc.get("params", {}), doc.get("model", {})
    try:
        if kind == "forest":
            trees = tuple(Tree.from_dict(t) for t in body["trees"])
            return ForestModel(trees, ForestParams(**params), body["n_features"])
        if kind == "boosted":
            trees = tuple(Tree.from_dict(t) for t in body["trees"])
            return BoostedModel(body["base_score"], trees, BoostingParams(**params), body["n_features"],
                                tuple(body.get("train_loss", ())))
        if kind == "ebm":
            if params.get("feature_order") is not None:
                params["feature_order"] = tuple(params["feature_order"])
            a = lambda xs: tuple(np.array(x, dtype=float) for x in xs)  # noqa: E731
            return EbmModel(
                body["intercept"],
                a(body["cuts"]),
                a(body["main_terms"]),
                a(body["main_counts"]),
                EbmParams(**params),
                tuple(body["feature_names"]),
                tuple(tuple(p) for p in body["pairs"]),
                tuple((np.array(x, dtype=float), np.array(y, dtype=float)) for x, y in body["pair_cuts"]),
                a(body["pair_terms"]),
                a(body["pair_counts"]),
                tuple(body.get("train_loss", ())),
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptModelError(f"malformed {kind} model: {exc}") from exc
    raise ModelVersionError(f"unknown model kind {kind!r}")


def save_model(model, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path: str | Path):
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptModelError(f"{path}: not a valid model file ({exc})") from exc
    return model_from_dict(doc)
