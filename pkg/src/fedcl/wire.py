"""Versioned binary checkpoint format for client reports and broadcasts.

Layout (all integers little-endian)::

    b"FEDCL1" | u8 kind | u32 section_count | section*
    section  = u16 name_len | name (utf-8) | u64 payload_len | payload
    payload  = u8 dtype ('d' float64, 'q' int64) | u8 ndim | u32 dim* | data

``kind`` is 1 for a ClientReport and 2 for a Broadcast. Optional fields that
are absent (no mixture, no generator, no pool) are simply omitted. Section
names are dotted, e.g. ``model.layer.0.W``. See docs/formats.md.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .generator import LabelPrior
from .gmm import GmmParams
from .nn import GeneratorParams, ModelParams
from .sync import GlobalPool

MAGIC = b"FEDCL1"
KIND_REPORT = 1
KIND_BROADCAST = 2
_DTYPES = {b"d": np.dtype("<f8"), b"q": np.dtype("<i8")}


class WireError(ValueError):
    pass


def _encode_array(a) -> bytes:
    a = np.asarray(a)
    if a.dtype.kind == "f":
        code, a = b"d", a.astype("<f8")
    elif a.dtype.kind in "iub":
        code, a = b"q", a.astype("<i8")
    else:
        raise WireError(f"cannot encode dtype {a.dtype}")
    head = code + struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + np.ascontiguousarray(a).tobytes()


def _decode_array(payload: bytes) -> np.ndarray:
    if len(payload) < 2 or payload[:1] not in _DTYPES:
        raise WireError("bad array payload header")
    dtype = _DTYPES[payload[:1]]
    ndim = payload[1]
    off = 2 + 4 * ndim
    if len(payload) < off:
        raise WireError("array shape cut short")
    shape = struct.unpack(f"<{ndim}I", payload[2:off])
    count = int(np.prod(shape)) if ndim else 1
    if len(payload) - off != count * dtype.itemsize:
        raise WireError("array data length does not match its shape")
    return np.frombuffer(payload, dtype=dtype, count=count, offset=off).reshape(shape).copy()


def encode_sections(kind: int, sections: dict) -> bytes:
    out = [MAGIC, struct.pack("<BI", kind, len(sections))]
    for name, value in sections.items():
        raw = name.encode("utf-8")
        payload = _encode_array(value)
        out += [struct.pack("<H", len(raw)), raw, struct.pack("<Q", len(payload)), payload]
    return b"".join(out)


def decode_sections(blob: bytes):
    """Return ``(kind, {name: ndarray})``; raises WireError on malformed input."""
    if blob[:6] != MAGIC:
        raise WireError("missing FEDCL1 magic")
    if len(blob) < 11:
        raise WireError("header cut short")
    kind, count = struct.unpack("<BI", blob[6:11])
    pos, sections = 11, {}
    for _ in range(count):
        try:
            (nlen,) = struct.unpack_from("<H", blob, pos)
            name = blob[pos + 2:pos + 2 + nlen].decode("utf-8")
            (plen,) = struct.unpack_from("<Q", blob, pos + 2 + nlen)
        except struct.error:
            raise WireError("section header cut short") from None
        start = pos + 10 + nlen
        if start + plen > len(blob):
            raise WireError(f"section {name!r} cut short")
        sections[name] = _decode_array(blob[start:start + plen])
        pos = start + plen
    if pos != len(blob):
        raise WireError("trailing bytes after last section")
    return kind, sections


# -- field groups -------------------------------------------------------------

def _put_layers(out, prefix, layers):
    out[f"{prefix}.depth"] = np.int64(len(layers))
    for i, (w, b) in enumerate(layers):
        out[f"{prefix}.layer.{i}.W"] = w
        out[f"{prefix}.layer.{i}.b"] = b


def _get_layers(sec, prefix):
    depth = int(sec[f"{prefix}.depth"])
    return [(sec[f"{prefix}.layer.{i}.W"], sec[f"{prefix}.layer.{i}.b"]) for i in range(depth)]


def _put_model(out, prefix, model: ModelParams):
    _put_layers(out, prefix, model.layers)
    out[f"{prefix}.split"] = np.int64(model.split_index)


def _get_model(sec, prefix) -> ModelParams:
    return ModelParams(_get_layers(sec, prefix), int(sec[f"{prefix}.split"]))


def _require(sec, *names):
    missing = [n for n in names if n not in sec]
    if missing:
        raise WireError(f"missing sections: {', '.join(missing)}")


def encode_report(report) -> bytes:
    out = {
        "client_id": np.int64(report.client_id),
        "local_steps_run": np.int64(report.local_steps_run),
        "mean_local_loss": np.float64(report.mean_local_loss),
        "label_counter": np.asarray(report.label_counter, dtype=np.int64),
    }
    _put_model(out, "model", report.model_params)
    if report.gmm is not None:
        out["gmm.weights"] = report.gmm.weights
        out["gmm.means"] = report.gmm.means
        out["gmm.variances"] = report.gmm.variances
    return encode_sections(KIND_REPORT, out)


def decode_report(blob: bytes):
    from .federation import ClientReport

    kind, sec = decode_sections(blob)
    if kind != KIND_REPORT:
        raise WireError(f"expected a client report, found kind {kind}")
    _require(sec, "client_id", "local_steps_run", "mean_local_loss", "label_counter", "model.depth")
    mixture = None
    if "gmm.weights" in sec:
        mixture = GmmParams(sec["gmm.weights"], sec["gmm.means"], sec["gmm.variances"])
    return ClientReport(int(sec["client_id"]), _get_model(sec, "model"), mixture, sec["label_counter"],
                        int(sec["local_steps_run"]), float(sec["mean_local_loss"]))


def encode_broadcast(bc) -> bytes:
    out = {
        "round": np.int64(bc.round),
        "state_index": np.int64(bc.state_index),
        "prior.counts": np.asarray(bc.prior.counts, dtype=np.int64),
        "prior.probabilities": np.asarray(bc.prior.probabilities, dtype=np.float64),
    }
    _put_model(out, "model", bc.model)
    if bc.threshold is not None:
        out["threshold"] = np.float64(bc.threshold)
    if bc.generator is not None:
        _put_layers(out, "generator", bc.generator.layers)
        out["generator.num_classes"] = np.int64(bc.generator.num_classes)
    if bc.pool is not None:
        out["pool.sorted"] = bc.pool.sorted_samples
        out["pool.counts"] = np.asarray(bc.pool.per_client_counts, dtype=np.int64)
        ids = sorted(bc.pool.client_samples)
        out["pool.client_ids"] = np.asarray(ids, dtype=np.int64)
        for k in ids:
            out[f"pool.client.{k}"] = bc.pool.client_samples[k]
    return encode_sections(KIND_BROADCAST, out)


def decode_broadcast(blob: bytes):
    from .federation import Broadcast

    kind, sec = decode_sections(blob)
    if kind != KIND_BROADCAST:
        raise WireError(f"expected a broadcast, found kind {kind}")
    _require(sec, "round", "state_index", "prior.counts", "prior.probabilities", "model.depth")
    gen = None
    if "generator.depth" in sec:
        gen = GeneratorParams(_get_layers(sec, "generator"), int(sec["generator.num_classes"]))
    pool = None
    if "pool.sorted" in sec:
        ids = [int(k) for k in sec["pool.client_ids"]]
        pool = GlobalPool(sec["pool.sorted"], tuple(int(c) for c in sec["pool.counts"]),
                          {k: sec[f"pool.client.{k}"] for k in ids})
    return Broadcast(
        model=_get_model(sec, "model"),
        generator=gen,
        prior=LabelPrior(sec["prior.counts"], sec["prior.probabilities"]),
        pool=pool,
        state_index=int(sec["state_index"]),
        threshold=float(sec["threshold"]) if "threshold" in sec else None,
        round=int(sec["round"]),
    )


def save(obj, path):
    from .federation import Broadcast

    blob = encode_broadcast(obj) if isinstance(obj, Broadcast) else encode_report(obj)
    Path(path).write_bytes(blob)


def load(path):
    blob = Path(path).read_bytes()
    kind, _ = decode_sections(blob)
    if kind == KIND_REPORT:
        return decode_report(blob)
    if kind == KIND_BROADCAST:
        return decode_broadcast(blob)
    raise WireError(f"unknown message kind {kind}")
