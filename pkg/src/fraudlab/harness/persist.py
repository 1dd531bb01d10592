"""Versioned, checksummed JSON envelopes for fitted artifacts.

Envelope: ``{"schema_version", "kind", "checksum", "payload"}`` where the
checksum is the SHA-256 of the canonical (sorted-key, compact) payload JSON.
Floats go through ``repr`` so every value round-trips bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from ..arf import ArfWeights
from ..autoencoder import AutoencoderModel
from ..cluster_map import KMeansModel, PcaModel
from ..features import StandardizationParams
from ..iforest import IsolationForestModel
from ..ocsvm import OcsvmModel

SCHEMA_VERSION = 1


class ChecksumError(ValueError):
    pass


class UnsupportedVersionError(ValueError):
    pass


def _weights_to_dict(w: ArfWeights):
    return {"w": list(w.w), "update_count": w.update_count, "context_group": w.context_group}


def _weights_from_dict(d):
    return ArfWeights(tuple(float(x) for x in d["w"]), int(d["update_count"]), d["context_group"])


KINDS = {
    "iforest": (IsolationForestModel, lambda m: m.to_dict(), IsolationForestModel.from_dict),
    "ocsvm": (OcsvmModel, lambda m: m.to_dict(), OcsvmModel.from_dict),
    "autoencoder": (AutoencoderModel, lambda m: m.to_dict(), AutoencoderModel.from_dict),
    "kmeans": (KMeansModel, lambda m: m.to_dict(), KMeansModel.from_dict),
    "pca": (PcaModel, lambda m: m.to_dict(), PcaModel.from_dict),
    "standardization": (StandardizationParams, lambda m: m.to_dict(), StandardizationParams.from_dict),
    "arf_weights": (ArfWeights, _weights_to_dict, _weights_from_dict),
}


def _canonical(payload) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False)


def kind_of(model) -> str:
    for kind, (klass, _, _) in KINDS.items():
        if isinstance(model, klass):
            return kind
    raise TypeError(f"no persistence format for {type(model).__name__}")


def dumps(model, meta: dict | None = None) -> str:
    kind = kind_of(model)
    payload = {"model": KINDS[kind][1](model), "meta": meta or {}}
    body = _canonical(payload)
    return json.dumps({
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "checksum": hashlib.sha256(body.encode()).hexdigest(),
        "payload": payload,
    }, sort_keys=True) + "\n"


def loads(text: str):
    """Returns ``(model, meta)``."""
    env = json.loads(text)
    version = env.get("schema_version")
    if version != SCHEMA_VERSION:
        raise UnsupportedVersionError(f"unsupported schema_version {version!r} (this build reads {SCHEMA_VERSION})")
    kind = env.get("kind")
    if kind not in KINDS:
        raise ValueError(f"unknown artifact kind {kind!r}")
    payload = env["payload"]
    digest = hashlib.sha256(_canonical(payload).encode()).hexdigest()
    if digest != env.get("checksum"):
        raise ChecksumError(f"checksum mismatch for {kind} artifact")
    return KINDS[kind][2](payload["model"]), payload.get("meta", {})


def save_model(path, model, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(model, meta), encoding="utf-8")
    return path


def load_model(path):
    return loads(Path(path).read_text(encoding="utf-8"))
