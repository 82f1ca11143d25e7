"""Versioned binary network snapshots with per-section checksums.

Layout: ``b"GSNN"``, ``u32`` format version, ``u32`` section count, then for
each section ``u16`` name length, name (utf-8), ``u64`` payload length,
``u32`` crc32 of the payload, payload. All integers are little-endian.
Array sections are ``.npz`` archives (no pickling); text sections are JSON.
"""

from __future__ import annotations

import io
import json
import os
import struct
import tempfile
import zlib
from pathlib import Path
from typing import Any

import numpy as np

from .config import Config, from_mapping
from .engram import EngramRegistry
from .neuro import NetworkState
from .network import Network
from .plasticity import SynapseTable

MAGIC = b"GSNN"
FORMAT_VERSION = 1
SECTIONS = ("config", "registry", "weights", "state", "meta")


class SnapshotError(ValueError):
    def __init__(self, message: str, section: str | None = None):
        super().__init__(f"[{section}] {message}" if section else message)
        self.section = section


def _npz(**arrays: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    return buf.getvalue()


def _unnpz(data: bytes, section: str) -> dict[str, np.ndarray]:
    try:
        with np.load(io.BytesIO(data), allow_pickle=False) as z:
            return {k: z[k] for k in z.files}
    except Exception as exc:  # malformed archive
        raise SnapshotError(f"unreadable array payload ({exc})", section) from None


def _json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode_sections(net: Network) -> dict[str, bytes]:
    st = net.state
    rows = net.synapses.arrays()
    return {
        "config": _json(net.cfg.to_dict()),
        "registry": _json(net.registry.to_json()),
        "weights": _npz(polarity=net.registry.polarity, pre=rows["pre"], post=rows["post"],
                        weight=rows["weight"], eligibility=rows["eligibility"]),
        "state": _npz(v=st.v, refractory=st.refractory, last_spike=st.last_spike,
                      prev_fired=st.prev_fired, step=np.array([st.step], dtype=np.int64)),
        "meta": _json({"stim_counter": net.stim_counter}),
    }


def to_bytes(net: Network) -> bytes:
    sections = encode_sections(net)
    out = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(sections))]
    for name, payload in sections.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<QI", len(payload), zlib.crc32(payload)))
        out.append(payload)
    return b"".join(out)


def save_snapshot(net: Network, path) -> Path:
    """Write atomically: a temporary file in the target directory, then rename."""
    path = Path(path)
    data = to_bytes(net)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_sections(data: bytes) -> tuple[int, dict[str, bytes]]:
    """Split and checksum a snapshot; returns ``(version, {name: payload})``."""
    if len(data) < 12 or data[:4] != MAGIC:
        raise SnapshotError("not a snapshot file (bad magic)", "header")
    version, count = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise SnapshotError(f"unsupported format version {version} "
                            f"(this build reads {FORMAT_VERSION})", "header")
    pos = 12
    sections: dict[str, bytes] = {}
    for k in range(count):
        where = f"section {k}"
        try:
            (n,) = struct.unpack_from("<H", data, pos)
            name = data[pos + 2:pos + 2 + n].decode("utf-8")
            pos += 2 + n
            length, crc = struct.unpack_from("<QI", data, pos)
        except (struct.error, UnicodeDecodeError):
            raise SnapshotError("truncated section header", where) from None
        pos += 12
        payload = data[pos:pos + length]
        if len(payload) != length:
            raise SnapshotError("truncated payload", name)
        if zlib.crc32(payload) != crc:
            raise SnapshotError("checksum mismatch", name)
        sections[name] = payload
        pos += length
    if pos != len(data):
        raise SnapshotError("trailing bytes after the last section", "header")
    missing = [s for s in SECTIONS if s not in sections]
    if missing:
        raise SnapshotError(f"missing sections {missing}", "header")
    return version, sections


def from_bytes(data: bytes) -> Network:
    _, sec = read_sections(data)
    try:
        cfg = from_mapping(json.loads(sec["config"]))
    except Exception as exc:
        raise SnapshotError(str(exc), "config") from None
    w = _unnpz(sec["weights"], "weights")
    try:
        registry = EngramRegistry.from_json(json.loads(sec["registry"]), w["polarity"])
    except Exception as exc:
        raise SnapshotError(str(exc), "registry") from None
    synapses = SynapseTable.from_arrays(registry.polarity, w, cfg.w_exc_max, cfg.w_inh_min)
    s = _unnpz(sec["state"], "state")
    state = NetworkState(v=s["v"].copy(), refractory=s["refractory"].copy(),
                         last_spike=s["last_spike"].copy(), prev_fired=s["prev_fired"].copy(),
                         polarity=registry.polarity.copy(), step=int(s["step"][0]),
                         dt_ms=cfg.dt_ms)
    meta = json.loads(sec["meta"])
    return Network(cfg, registry, synapses, state, stim_counter=int(meta["stim_counter"]))


def load_snapshot(path) -> Network:
    return from_bytes(Path(path).read_bytes())


def snapshot_info(path) -> dict:
    """Header summary: version, section sizes, symbol counts, synapse count."""
    data = Path(path).read_bytes()
    version, sec = read_sections(data)
    reg = json.loads(sec["registry"])
    w = _unnpz(sec["weights"], "weights")
    return {
        "version": version,
        "bytes": len(data),
        "sections": {k: len(v) for k, v in sec.items()},
        "n_neurons": reg["n_neurons"],
        "engrams": len(reg["engrams"]),
        "synapses": int(w["pre"].shape[0]),
        "stim_counter": json.loads(sec["meta"])["stim_counter"],
    }


def export_json(net: Network, path) -> Path:
    """Lossless human-readable dump (floats written with full repr precision)."""
    st = net.state
    rows = net.synapses.arrays()
    doc = {
        "format_version": FORMAT_VERSION,
        "config": net.cfg.to_dict(),
        "registry": net.registry.to_json(),
        "polarity": net.registry.polarity.tolist(),
        "synapses": {k: v.tolist() for k, v in rows.items()},
        "state": {"v": st.v.tolist(), "refractory": st.refractory.tolist(),
                  "last_spike": st.last_spike.tolist(), "prev_fired": st.prev_fired.tolist(),
                  "step": st.step},
        "stim_counter": net.stim_counter,
    }
    path = Path(path)
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def import_json(path) -> Network:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    cfg = from_mapping(doc["config"])
    pol = np.asarray(doc["polarity"], dtype=np.int8)
    registry = EngramRegistry.from_json(doc["registry"], pol)
    syn = doc["synapses"]
    rows = {"pre": np.asarray(syn["pre"], dtype=np.int64),
            "post": np.asarray(syn["post"], dtype=np.int64),
            "weight": np.asarray(syn["weight"], dtype=np.float64),
            "eligibility": np.asarray(syn["eligibility"], dtype=np.float64)}
    synapses = SynapseTable.from_arrays(pol, rows, cfg.w_exc_max, cfg.w_inh_min)
    s = doc["state"]
    state = NetworkState(v=np.asarray(s["v"], dtype=np.float64),
                         refractory=np.asarray(s["refractory"], dtype=np.int64),
                         last_spike=np.asarray(s["last_spike"], dtype=np.int64),
                         prev_fired=np.asarray(s["prev_fired"], dtype=np.int64),
                         polarity=pol.copy(), step=int(s["step"]), dt_ms=cfg.dt_ms)
    return Network(cfg, registry, synapses, state, stim_counter=int(doc["stim_counter"]))
