"""On-disk formats: GMLT dense tensors, run configuration, PGM/CSV export.

GMLT is a tiny binary container for row-major float64 tensors::

    bytes 0..3   magic "GMLT"
    bytes 4..7   format version, u32 little-endian, currently 1
    byte  8      dtype code, u8, 0 = float64
    byte  9      ndim, u8
    then         ndim dimension sizes, u64 little-endian each
    then         the data, little-endian float64, row-major

Values must be finite both when writing and when reading back.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"GMLT"
VERSION = 1
DTYPE_F64 = 0


class TensorFormatError(Exception):
    """Base class for malformed tensor files."""


class BadMagicError(TensorFormatError):
    pass


class UnsupportedVersionError(TensorFormatError):
    pass


class UnsupportedDtypeError(TensorFormatError):
    pass


class TruncatedDataError(TensorFormatError):
    pass


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


def write_tensor(path, t) -> None:
    """Write a tensor to ``path`` in GMLT format.

    Refuses non-finite values; data is converted to float64.
    """
    arr = np.ascontiguousarray(t, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if not np.isfinite(arr).all():
        raise ValueError("refusing to write non-finite values to %s" % (path,))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<BB", DTYPE_F64, arr.ndim))
        for n in arr.shape:
            fh.write(struct.pack("<Q", n))
        fh.write(arr.astype("<f8", copy=False).tobytes())


def read_tensor(path) -> np.ndarray:
    """Read a GMLT file back into a float64 array (inverse of write_tensor)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise BadMagicError("%s: not a GMLT file (magic %r)" % (path, raw[:4]))
    if len(raw) < 10:
        raise TruncatedDataError("%s: truncated header" % (path,))
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise UnsupportedVersionError("%s: unsupported version %d" % (path, version))
    dtype_code, ndim = struct.unpack_from("<BB", raw, 8)
    if dtype_code != DTYPE_F64:
        raise UnsupportedDtypeError("%s: unsupported dtype code %d" % (path, dtype_code))
    header_end = 10 + 8 * ndim
    if len(raw) < header_end:
        raise TruncatedDataError("%s: truncated dimension list" % (path,))
    dims = struct.unpack_from("<%dQ" % ndim, raw, 10)
    if any(n == 0 for n in dims):
        raise TensorFormatError("%s: zero-sized dimension" % (path,))
    count = int(np.prod(dims, dtype=np.int64))
    expected = header_end + 8 * count
    if len(raw) < expected:
        raise TruncatedDataError(
            "%s: file has %d bytes, expected %d" % (path, len(raw), expected)
        )
    data = np.frombuffer(raw, dtype="<f8", count=count, offset=header_end)
    arr = data.astype(np.float64).reshape(dims)
    if not np.isfinite(arr).all():
        raise TensorFormatError("%s: non-finite values in tensor data" % (path,))
    return arr


# --- run configuration -------------------------------------------------


@dataclass(frozen=True)
class LineSearchConfig:
    armijo: float = 1e-4
    shrink: float = 0.5
    max_trials: int = 40
    init_step: float = 1.0


@dataclass(frozen=True)
class LbfgsConfig:
    max_iters: int = 500
    memory: int = 10
    grad_tol: float = 1e-7
    line_search: LineSearchConfig = field(default_factory=LineSearchConfig)


@dataclass(frozen=True)
class InitConfig:
    mode: str = "constant"  # constant | log_uniform
    low: float = 0.5
    high: float = 2.0


@dataclass(frozen=True)
class RunConfig:
    d: int
    n: int
    epsilon: float
    substeps: int
    sinkhorn_iters: int
    frames: int = 10
    loss: str = "l2"
    lambda_c: float = 0.0
    lambda_s: float = 1.0
    lbfgs: LbfgsConfig = field(default_factory=LbfgsConfig)
    init: InitConfig = field(default_factory=InitConfig)
    seed: int = 0


_REQUIRED = ("d", "n", "epsilon", "substeps", "sinkhorn_iters")
_LOSSES = ("l1", "l2", "kl")


def _need(cond, msg):
    if not cond:
        raise ConfigError(msg)


def parse_config(doc: dict) -> RunConfig:
    """Validate a JSON-shaped dict and fill in defaults."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")
    known = set(_REQUIRED) | {
        "frames",
        "loss",
        "lambda_c",
        "lambda_s",
        "lbfgs",
        "init",
        "seed",
    }
    unknown = set(doc) - known
    _need(not unknown, "unknown config keys: %s" % ", ".join(sorted(unknown)))
    for key in _REQUIRED:
        _need(key in doc, "missing required config key '%s'" % key)

    d = int(doc["d"])
    _need(d in (2, 3), "d must be 2 or 3, got %d" % d)
    n = int(doc["n"])
    _need(n >= 2, "n must be >= 2")
    epsilon = float(doc["epsilon"])
    _need(epsilon > 0, "epsilon must be > 0")
    substeps = int(doc["substeps"])
    _need(substeps >= 1, "substeps must be >= 1")
    sinkhorn_iters = int(doc["sinkhorn_iters"])
    _need(sinkhorn_iters >= 1, "sinkhorn_iters must be >= 1")
    frames = int(doc.get("frames", 10))
    _need(frames >= 2, "frames must be >= 2")
    loss = str(doc.get("loss", "l2"))
    _need(loss in _LOSSES, "loss must be one of %s" % (list(_LOSSES),))
    lambda_c = float(doc.get("lambda_c", 0.0))
    lambda_s = float(doc.get("lambda_s", 1.0))
    _need(lambda_c >= 0 and lambda_s >= 0, "lambda_c and lambda_s must be >= 0")
    seed = int(doc.get("seed", 0))
    _need(seed >= 0, "seed must be >= 0")

    lb = doc.get("lbfgs", {})
    _need(isinstance(lb, dict), "lbfgs must be an object")
    unknown = set(lb) - {"max_iters", "memory", "grad_tol", "line_search"}
    _need(not unknown, "unknown lbfgs keys: %s" % ", ".join(sorted(unknown)))
    ls = lb.get("line_search", {})
    _need(isinstance(ls, dict), "line_search must be an object")
    unknown = set(ls) - {"armijo", "shrink", "max_trials", "init_step"}
    _need(not unknown, "unknown line_search keys: %s" % ", ".join(sorted(unknown)))
    line_search = LineSearchConfig(
        armijo=float(ls.get("armijo", 1e-4)),
        shrink=float(ls.get("shrink", 0.5)),
        max_trials=int(ls.get("max_trials", 40)),
        init_step=float(ls.get("init_step", 1.0)),
    )
    _need(0 < line_search.armijo < 1, "armijo constant must be in (0, 1)")
    _need(0 < line_search.shrink < 1, "shrink factor must be in (0, 1)")
    _need(line_search.max_trials >= 1, "max_trials must be >= 1")
    _need(line_search.init_step > 0, "init_step must be > 0")
    lbfgs = LbfgsConfig(
        max_iters=int(lb.get("max_iters", 500)),
        memory=int(lb.get("memory", 10)),
        grad_tol=float(lb.get("grad_tol", 1e-7)),
        line_search=line_search,
    )
    _need(lbfgs.max_iters >= 1, "max_iters must be >= 1")
    _need(lbfgs.memory >= 1, "lbfgs memory must be >= 1")
    _need(lbfgs.grad_tol > 0, "grad_tol must be > 0")

    init_doc = doc.get("init", {})
    _need(isinstance(init_doc, dict), "init must be an object")
    unknown = set(init_doc) - {"mode", "low", "high"}
    _need(not unknown, "unknown init keys: %s" % ", ".join(sorted(unknown)))
    init = InitConfig(
        mode=str(init_doc.get("mode", "constant")),
        low=float(init_doc.get("low", 0.5)),
        high=float(init_doc.get("high", 2.0)),
    )
    _need(init.mode in ("constant", "log_uniform"), "init.mode must be constant or log_uniform")
    if init.mode == "log_uniform":
        _need(init.low > 0, "init.low must be > 0 for log_uniform")
        _need(init.high >= init.low, "init.high must be >= init.low")

    return RunConfig(
        d=d,
        n=n,
        epsilon=epsilon,
        substeps=substeps,
        sinkhorn_iters=sinkhorn_iters,
        frames=frames,
        loss=loss,
        lambda_c=lambda_c,
        lambda_s=lambda_s,
        lbfgs=lbfgs,
        init=init,
        seed=seed,
    )


def read_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("%s: %s" % (path, exc)) from exc
    return parse_config(doc)


# --- exports ------------------------------------------------------------


def export_pgm(t, path) -> None:
    """Write a 2-D tensor as a 16-bit binary PGM, min-max normalized.

    A constant tensor has no range to normalize, so it maps to all zeros.
    """
    arr = np.asarray(t, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("PGM export needs a 2-D tensor, got ndim=%d" % arr.ndim)
    lo = arr.min()
    hi = arr.max()
    if hi > lo:
        scaled = np.round((arr - lo) / (hi - lo) * 65535.0)
    else:
        scaled = np.zeros_like(arr)
    pix = scaled.astype(">u2")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n65535\n" % (w, h))
        fh.write(pix.tobytes())


def export_csv(t, path) -> None:
    """Write a tensor as CSV, one row per leading index, 17 significant digits."""
    arr = np.asarray(t, dtype=np.float64)
    if arr.ndim == 1:
        rows = arr.reshape(-1, 1)
    else:
        rows = arr.reshape(arr.shape[0], -1)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(",".join("%.17g" % x for x in row))
            fh.write("\n")
