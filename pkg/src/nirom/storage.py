"""On-disk formats.

Binary container (trajectories, bases, trained networks)::

    offset  size  content
    0       8     magic b"NIROMBIN"
    8       4     format version, uint32 little-endian (currently 1)
    12      4     header length H, uint32 little-endian
    16      H     UTF-8 JSON header, keys sorted, no whitespace
    16+H    ...   payload: every array in header order, row-major,
                  float64 little-endian

The header records ``kind``, the ``arrays`` table (name, shape, byte
offset into the payload), free-form ``meta`` and ``payload_sha256``. Files
are written to a temporary name and renamed into place.

CSV files use ``repr`` floats so they round-trip exactly.

A ``manifest.json`` next to the artifacts records the SHA-256 of every
file, its parents, the config hash and the tool version.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ProvenanceError, ShapeError
from .fom import Trajectory
from .pod import ReducedBasis
from .sampling import ParameterSignal
from .surrogate import MlpCore, Normalizer, SurrogateNet

MAGIC = b"NIROMBIN"
VERSION = 1

__all__ = [
    "write_container",
    "read_container",
    "save_trajectory",
    "load_trajectory",
    "save_basis",
    "load_basis",
    "save_net",
    "load_net",
    "write_csv",
    "read_csv",
    "write_spectrum",
    "file_digest",
    "atomic_write_bytes",
    "Manifest",
]


def _canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def atomic_write_bytes(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_container(path, kind, arrays, meta=None):
    """Write named float arrays plus JSON metadata to ``path``."""
    table = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f8")
        table.append({"name": name, "shape": list(data.shape), "offset": offset})
        raw = data.tobytes()
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "kind": kind,
        "arrays": table,
        "meta": meta or {},
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    head = _canonical_json(header).encode("utf-8")
    blob = MAGIC + struct.pack("<II", VERSION, len(head)) + head + payload
    atomic_write_bytes(path, blob)
    return path


def read_container(path, expect_kind=None):
    """Read a container; returns ``(kind, arrays, meta)``.

    Raises :class:`ProvenanceError` if the magic, version or payload digest
    does not check out.
    """
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise ProvenanceError(f"{path}: not a container file")
    version, hlen = struct.unpack("<II", blob[8:16])
    if version != VERSION:
        raise ProvenanceError(f"{path}: unsupported format version {version}")
    header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    payload = blob[16 + hlen:]
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise ProvenanceError(f"{path}: payload digest mismatch")
    if expect_kind is not None and header["kind"] != expect_kind:
        raise ProvenanceError(f"{path}: expected a {expect_kind} file, found {header['kind']}")
    arrays = {}
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=start)
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(float)
    return header["kind"], arrays, header["meta"]


def save_trajectory(path, traj, signal, meta=None):
    m = dict(meta or {})
    m.update({"n_state": traj.states.shape[0], "k": traj.k, "tau": traj.tau,
              "signal": signal.to_dict(), "signal_id": traj.signal_id})
    return write_container(path, "trajectory",
                           {"times": traj.times, "states": traj.states}, m)


def load_trajectory(path):
    """Returns ``(trajectory, signal, meta)``."""
    _, arrays, meta = read_container(path, "trajectory")
    signal = ParameterSignal.from_dict(meta["signal"])
    return Trajectory(arrays["times"], arrays["states"], meta.get("signal_id", "")), signal, meta


def save_basis(path, basis, meta=None):
    m = dict(meta or {})
    m.update({"n_r": basis.n_r, "requested_n_r": basis.requested_n_r, "rank": basis.rank,
              "rank_warning": basis.rank_warning, "source_hash": basis.source_hash,
              "centered": basis.mean is not None})
    arrays = {"basis": basis.basis, "singular_values": basis.singular_values}
    if basis.mean is not None:
        arrays["mean"] = basis.mean
    return write_container(path, "basis", arrays, m)


def load_basis(path):
    _, arrays, meta = read_container(path, "basis")
    basis = ReducedBasis(arrays["basis"], arrays["singular_values"], int(meta["n_r"]),
                         meta["source_hash"], requested_n_r=int(meta["requested_n_r"]),
                         rank=int(meta["rank"]), rank_warning=meta["rank_warning"],
                         mean=arrays.get("mean"))
    return basis, meta


def save_net(path, net, meta=None):
    nz = net.normalizer
    m = dict(meta or {})
    m.update({"layer_sizes": list(net.core.layer_sizes), "activation": net.core.activation,
              "leaky_alpha": net.core.alpha, "mode": net.mode, "tau_train": net.tau_train,
              "tau_scale": nz.tau_scale, "config": net.config,
              "seed": net.config.get("seed")})
    arrays = {}
    for i, (w, b) in enumerate(zip(net.core.weights, net.core.biases)):
        arrays[f"W{i}"] = w
        arrays[f"b{i}"] = b
    for name in ("state_mean", "state_scale", "param_mean", "param_scale", "rhs_scale"):
        arrays[name] = getattr(nz, name)
    return write_container(path, "surrogate", arrays, m)


def load_net(path):
    _, arrays, meta = read_container(path, "surrogate")
    n_layers = len(meta["layer_sizes"]) - 1
    core = MlpCore([arrays[f"W{i}"] for i in range(n_layers)],
                   [arrays[f"b{i}"] for i in range(n_layers)],
                   meta["activation"], meta["leaky_alpha"])
    nz = Normalizer(arrays["state_mean"], arrays["state_scale"], arrays["param_mean"],
                    arrays["param_scale"], arrays["rhs_scale"], meta["tau_scale"])
    return SurrogateNet(core, meta["mode"], meta["tau_train"], nz, meta["config"]), meta


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    """Write rows atomically; floats are written with ``repr``."""
    lines = [",".join(header)]
    for row in rows:
        if len(row) != len(header):
            raise ShapeError("row length does not match header")
        lines.append(",".join(_fmt(v) for v in row))
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))
    return path


def read_csv(path):
    """Returns ``(header, rows)`` with numeric fields converted."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[_parse(v) for v in row] for row in reader]
    return header, rows


def _parse(v):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def write_spectrum(path, singular_values):
    return write_csv(path, ["index", "sigma"],
                     [(i + 1, float(s)) for i, s in enumerate(singular_values)])


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Manifest:
    """Digest and provenance record for a directory of artifacts.

    Paths are stored relative to the manifest's directory.
    """

    def __init__(self, root, config_hash="", artifacts=None):
        self.root = Path(root)
        self.config_hash = config_hash
        self.artifacts = dict(artifacts or {})

    @property
    def path(self):
        return self.root / "manifest.json"

    @classmethod
    def load(cls, root):
        root = Path(root)
        p = root / "manifest.json"
        if not p.exists():
            return cls(root)
        data = json.loads(p.read_text(encoding="utf-8"))
        return cls(root, data.get("config_hash", ""), data.get("artifacts", {}))

    def _rel(self, path):
        return Path(path).resolve().relative_to(self.root.resolve()).as_posix()

    def add(self, path, kind, parents=(), config_hash=None):
        rel = self._rel(path)
        self.artifacts[rel] = {
            "sha256": file_digest(path),
            "kind": kind,
            "parents": sorted(self._rel(p) for p in parents),
            "config_hash": config_hash if config_hash is not None else self.config_hash,
            "tool_version": __version__,
        }
        return rel

    def remove(self, path):
        self.artifacts.pop(self._rel(path), None)

    def verify(self, path):
        """Raise :class:`ProvenanceError` unless ``path`` matches its recorded digest."""
        rel = self._rel(path)
        entry = self.artifacts.get(rel)
        if entry is None:
            raise ProvenanceError(f"{rel} is not recorded in the manifest")
        if not Path(path).exists():
            raise ProvenanceError(f"{rel} is missing")
        if file_digest(path) != entry["sha256"]:
            raise ProvenanceError(f"{rel} does not match its manifest digest")
        return entry

    def entries(self, kind=None):
        return {k: v for k, v in sorted(self.artifacts.items())
                if kind is None or v["kind"] == kind}

    def save(self):
        data = {"config_hash": self.config_hash, "tool_version": __version__,
                "artifacts": dict(sorted(self.artifacts.items()))}
        atomic_write_bytes(self.path, (json.dumps(data, indent=1, sort_keys=True) + "\n").encode())
        return self.path
