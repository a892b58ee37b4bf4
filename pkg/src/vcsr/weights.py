"""Named model parameters: manifest + raw blob on disk, seeded initialization.

A weight set is a pair of files sharing a path prefix: ``<prefix>.manifest``
(text: one line per entry with name, dtype, shape, byte offset, count) and
``<prefix>.blob`` (little-endian raw float32).  The manifest is ordered; a
store survives save -> load -> save byte-identically.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from . import FormatError, MissingParameter

MANIFEST_MAGIC = "vcsr-weights"
MANIFEST_VERSION = 1


@dataclass
class ParamSpec:
    """Declares one named parameter: shape, init rule, and fan-in for scaling."""

    name: str
    shape: tuple
    init: str = "uniform"  # "uniform" (fan-in scaled), "zeros", "ones"
    fan_in: int = 0


@dataclass
class WeightStore:
    entries: dict = field(default_factory=dict)  # name -> float32 ndarray
    manifest_version: int = MANIFEST_VERSION

    def put(self, name, values):
        if name in self.entries:
            raise FormatError(f"duplicate parameter name {name!r}")
        self.entries[name] = np.ascontiguousarray(values, dtype=np.float32)

    def get(self, name, shape=None):
        """Fetch a parameter, optionally validating its shape; errors name it."""
        if name not in self.entries:
            raise MissingParameter(f"weight store has no parameter {name!r}")
        v = self.entries[name]
        if shape is not None and v.shape != tuple(shape):
            raise MissingParameter(
                f"parameter {name!r} has shape {v.shape}, expected {tuple(shape)}"
            )
        return v

    def total_parameters(self):
        return sum(v.size for v in self.entries.values())

    def __contains__(self, name):
        return name in self.entries


def save(store, prefix):
    """Write ``<prefix>.manifest`` and ``<prefix>.blob``."""
    prefix = os.fspath(prefix)
    lines = [f"{MANIFEST_MAGIC} {store.manifest_version}", str(len(store.entries))]
    offset = 0
    blobs = []
    for name, values in store.entries.items():
        if any(ch.isspace() for ch in name):
            raise FormatError(f"parameter name {name!r} contains whitespace")
        shape = ",".join(str(d) for d in values.shape) or "1"
        raw = values.astype("<f4").tobytes()
        lines.append(f"{name} f32 {shape} {offset} {values.size}")
        blobs.append(raw)
        offset += len(raw)
    with open(prefix + ".manifest", "w") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(prefix + ".blob", "wb") as fh:
        for raw in blobs:
            fh.write(raw)


def load(prefix):
    """Read a weight set written by :func:`save`; validates sizes and names."""
    prefix = os.fspath(prefix)
    manifest_path, blob_path = prefix + ".manifest", prefix + ".blob"
    with open(manifest_path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or not lines[0].startswith(MANIFEST_MAGIC):
        raise FormatError(f"{manifest_path}: not a weight manifest")
    try:
        version = int(lines[0].split()[1])
        count = int(lines[1])
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{manifest_path}: malformed header") from exc
    if version != MANIFEST_VERSION:
        raise FormatError(f"{manifest_path}: unsupported manifest version {version}")
    if len(lines) < 2 + count:
        raise FormatError(f"{manifest_path}: expected {count} entries, found fewer lines")

    blob = np.fromfile(blob_path, dtype="<f4")
    store = WeightStore(manifest_version=version)
    for ln in lines[2 : 2 + count]:
        parts = ln.split()
        if len(parts) != 5:
            raise FormatError(f"{manifest_path}: malformed entry line {ln!r}")
        name, dtype, shape_s, offset_s, size_s = parts
        if dtype != "f32":
            raise FormatError(f"{manifest_path}: {name}: unsupported dtype {dtype!r}")
        shape = tuple(int(d) for d in shape_s.split(","))
        offset, size = int(offset_s), int(size_s)
        if int(np.prod(shape)) != size:
            raise FormatError(f"{manifest_path}: {name}: shape {shape} does not match count {size}")
        if offset % 4:
            raise FormatError(f"{manifest_path}: {name}: misaligned offset {offset}")
        start = offset // 4
        if start + size > blob.size:
            raise FormatError(f"{blob_path}: truncated blob reading {name!r}")
        if name in store.entries:
            raise FormatError(f"{manifest_path}: duplicate parameter name {name!r}")
        store.entries[name] = blob[start : start + size].reshape(shape).copy()
    return store


def random_init(specs, seed):
    """Populate a store from ParamSpecs; same seed gives a bit-identical store.

    "uniform" entries are drawn from +-sqrt(6 / fan_in); normalization
    statistics use their fixed values ("zeros"/"ones") so forward passes stay
    finite under random weights.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    store = WeightStore()
    for spec in specs:
        if spec.init == "zeros":
            values = np.zeros(spec.shape, np.float32)
        elif spec.init == "ones":
            values = np.ones(spec.shape, np.float32)
        elif spec.init == "uniform":
            if spec.fan_in <= 0:
                raise FormatError(f"spec {spec.name!r} needs a positive fan_in")
            bound = float(np.sqrt(6.0 / spec.fan_in))
            values = rng.uniform(-bound, bound, size=spec.shape).astype(np.float32)
        else:
            raise FormatError(f"spec {spec.name!r} has unknown init {spec.init!r}")
        store.put(spec.name, values)
    return store
