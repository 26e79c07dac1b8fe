"""JSON checkpoints for the predictor and the generator/critic pair."""

from __future__ import annotations

import hashlib
import json
import warnings

import numpy as np

from .autodiff import ParamStore
from .data import Normalizer
from .encoders import Encoder
from .model import PiWadModel
from .wgan import GanModel

FORMAT_MODEL = "piwad-model"
FORMAT_GAN = "piwad-gan"
VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, truncated or incompatible checkpoint."""


def fingerprint(config: dict) -> str:
    """sha256 over the canonical JSON form of a configuration dict."""
    text = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def model_schema(model: PiWadModel) -> dict:
    spec = model.encoder.spec
    return {
        "names": list(spec.names),
        "encoder": model.encoder.kind,
        "gammas": list(spec.gammas),
        "toggles": dict(sorted(model.toggles.items())),
        "layers": model.layers,
        "width": model.width,
        "embed_dim": model.embed_dim,
    }


def _store_to_dict(store: ParamStore) -> dict:
    return {k: {"shape": list(v.shape), "values": v.reshape(-1).tolist()} for k, v in store.items()}


def _store_from_dict(d: dict) -> ParamStore:
    store = ParamStore()
    for k, rec in d.items():
        store.add(k, np.array(rec["values"], dtype=float).reshape(rec["shape"]))
    return store


def _write(path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def _read(path, fmt: str) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: truncated or malformed checkpoint ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != fmt:
        raise CheckpointError(f"{path}: not a {fmt} checkpoint")
    if doc.get("version") != VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {doc.get('version')!r} is not supported (expected {VERSION})"
        )
    return doc


def save_model(path, model: PiWadModel) -> None:
    schema = model_schema(model)
    doc = {
        "format": FORMAT_MODEL,
        "version": VERSION,
        "fingerprint": model.fingerprint or fingerprint(schema),
        "schema": schema,
        "encoder": model.encoder.to_dict(),
        "normalizer": model.normalizer.to_dict(),
        "binary": None if model.binary is None else [bool(b) for b in model.binary],
        "params": _store_to_dict(model.store),
        "meta": model.meta,
    }
    _write(path, doc)


def load_model(path, expect_fingerprint: str | None = None, expect_names=None) -> PiWadModel:
    """Read a predictor; a fingerprint or feature-name mismatch is reported as a warning."""
    doc = _read(path, FORMAT_MODEL)
    try:
        schema = doc["schema"]
        model = PiWadModel(
            encoder=Encoder.from_dict(doc["encoder"]),
            normalizer=Normalizer.from_dict(doc["normalizer"]),
            store=_store_from_dict(doc["params"]),
            toggles=dict(schema["toggles"]),
            layers=int(schema["layers"]),
            width=int(schema["width"]),
            embed_dim=schema["embed_dim"],
            binary=None if doc["binary"] is None else np.array(doc["binary"], dtype=bool),
            fingerprint=doc["fingerprint"],
            meta=doc.get("meta", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: incomplete checkpoint ({exc})") from None
    if expect_fingerprint is not None and expect_fingerprint != model.fingerprint:
        warnings.warn(
            f"{path}: config fingerprint {model.fingerprint[:12]} differs from the requested {expect_fingerprint[:12]}",
            stacklevel=2,
        )
    if expect_names is not None and list(expect_names) != model.names:
        warnings.warn(f"{path}: checkpoint features {model.names} differ from data columns {list(expect_names)}", stacklevel=2)
    return model


def save_gan(path, gan: GanModel) -> None:
    doc = {
        "format": FORMAT_GAN,
        "version": VERSION,
        "names": list(gan.names),
        "normalizer": gan.normalizer.to_dict(),
        "latent_dim": gan.latent_dim,
        "hidden": gan.hidden,
        "penalty": gan.penalty,
        "n_critic": gan.n_critic,
        "steps": gan.steps,
        "embedding_pool": None if gan.embedding_pool is None else gan.embedding_pool.tolist(),
        "params": _store_to_dict(gan.store),
    }
    _write(path, doc)


def load_gan(path, expect_names=None) -> GanModel:
    doc = _read(path, FORMAT_GAN)
    try:
        pool = doc["embedding_pool"]
        gan = GanModel(
            store=_store_from_dict(doc["params"]),
            names=list(doc["names"]),
            normalizer=Normalizer.from_dict(doc["normalizer"]),
            latent_dim=int(doc["latent_dim"]),
            hidden=int(doc["hidden"]),
            penalty=float(doc["penalty"]),
            n_critic=int(doc["n_critic"]),
            steps=int(doc["steps"]),
            embedding_pool=None if pool is None else np.array(pool, dtype=float),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: incomplete checkpoint ({exc})") from None
    if expect_names is not None and list(expect_names) != gan.names:
        warnings.warn(f"{path}: generator features {gan.names} differ from {list(expect_names)}", stacklevel=2)
    return gan
