"""File formats owned by the CLI: detection/track CSVs, embeddings, checkpoints.

Detection CSV columns: frame,id,x,y,w,h,conf,class (id = -1 for unlabeled).
Track CSV adds a trailing interpolated flag column. The embeddings file is
binary: magic, version, row count, dimension, then row-major float32
little-endian values, row i aligned with CSV row i. Checkpoints carry a
config echo, every parameter tensor in declared order as float64 little
endian, and a SHA-256 content checksum.
"""

from __future__ import annotations

import dataclasses
import hashlib
import struct
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    DataError,
    Detection,
    EmbeddingTable,
    HierarchyConfig,
    HiertrackError,
    IoError,
    Trajectory,
)
from .mpn import ModelParams, init_params
from .training import AdamState

EMBED_MAGIC = b"HTEB"
CKPT_MAGIC = b"HTCK"
FORMAT_VERSION = 1

TrackRow = Tuple[int, int, float, float, float, float, float, int, int]
# frame, identity, x, y, w, h, conf, class, interpolated


def _fmt(value: float) -> str:
    return f"{value:.4f}"


def write_detections_csv(path: Path, detections: Sequence[Detection]) -> None:
    lines = []
    for d in detections:
        ident = d.gt_identity if d.gt_identity is not None else -1
        x, y, w, h = d.box
        lines.append(
            f"{d.frame},{ident},{_fmt(x)},{_fmt(y)},{_fmt(w)},{_fmt(h)},{_fmt(d.confidence)},{d.class_id}"
        )
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_detections_csv(path: Path) -> List[Detection]:
    """Rows become detections; embedding_id is the row index."""
    detections = []
    text = Path(path).read_text(encoding="utf-8")
    for row, line in enumerate(text.splitlines()):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 8:
            raise DataError(f"{path}: line {row + 1} has {len(parts)} columns, expected 8")
        frame, ident = int(parts[0]), int(parts[1])
        x, y, w, h, conf = (float(p) for p in parts[2:7])
        detections.append(
            Detection(
                frame=frame,
                box=(x, y, w, h),
                confidence=conf,
                class_id=int(parts[7]),
                embedding_id=row,
                gt_identity=ident if ident >= 0 else None,
            )
        )
    return detections


def write_embeddings(path: Path, vectors: np.ndarray) -> None:
    vectors = np.ascontiguousarray(vectors, dtype="<f4")
    with open(path, "wb") as f:
        f.write(EMBED_MAGIC)
        f.write(struct.pack("<III", FORMAT_VERSION, vectors.shape[0], vectors.shape[1]))
        f.write(vectors.tobytes())


def read_embeddings(path: Path) -> EmbeddingTable:
    data = Path(path).read_bytes()
    if data[:4] != EMBED_MAGIC:
        raise IoError(f"{path}: not an embeddings file (bad magic)")
    version, rows, dim = struct.unpack("<III", data[4:16])
    if version != FORMAT_VERSION:
        raise IoError(f"{path}: unsupported embeddings version {version}")
    expected = 16 + 4 * rows * dim
    if len(data) != expected:
        raise IoError(f"{path}: truncated embeddings file ({len(data)} vs {expected} bytes)")
    vectors = np.frombuffer(data, dtype="<f4", offset=16).reshape(rows, dim)
    return EmbeddingTable(vectors.astype(np.float64))


def write_track_csv(path: Path, trajectories: Sequence[Trajectory]) -> None:
    """One row per detection: frame,identity,x,y,w,h,conf,class,interpolated,
    sorted by (frame, identity)."""
    rows: List[TrackRow] = []
    for traj in trajectories:
        for det, interp in zip(traj.detections, traj.interpolated):
            x, y, w, h = det.box
            rows.append(
                (det.frame, traj.identity, x, y, w, h, det.confidence, det.class_id, int(interp))
            )
    rows.sort(key=lambda r: (r[0], r[1]))
    lines = [
        f"{r[0]},{r[1]},{_fmt(r[2])},{_fmt(r[3])},{_fmt(r[4])},{_fmt(r[5])},{_fmt(r[6])},{r[7]},{r[8]}"
        for r in rows
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_track_csv(path: Path) -> List[TrackRow]:
    rows = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) not in (8, 9):
            raise DataError(f"{path}: line {n + 1} has {len(parts)} columns, expected 8 or 9")
        interp = int(parts[8]) if len(parts) == 9 else 0
        rows.append(
            (
                int(parts[0]),
                int(parts[1]),
                float(parts[2]),
                float(parts[3]),
                float(parts[4]),
                float(parts[5]),
                float(parts[6]),
                int(parts[7]),
                interp,
            )
        )
    return rows


def load_dataset(data_dir: Path, normalize_embeddings: bool = True) -> Tuple[List[Detection], EmbeddingTable]:
    """Read detections.csv + embeddings.bin from a directory."""
    data_dir = Path(data_dir)
    det_path = data_dir / "detections.csv"
    emb_path = data_dir / "embeddings.bin"
    if not det_path.exists():
        raise IoError(f"missing detections file: {det_path}")
    if not emb_path.exists():
        raise IoError(f"missing embeddings file: {emb_path}")
    detections = read_detections_csv(det_path)
    table = read_embeddings(emb_path)
    if len(table) != len(detections):
        raise DataError(
            f"embeddings rows ({len(table)}) do not match detections ({len(detections)})"
        )
    if normalize_embeddings:
        table = table.normalized()
    return detections, table


# -- checkpoints -------------------------------------------------------------

_CONFIG_FIELDS = [f.name for f in dataclasses.fields(HierarchyConfig)]


def _config_echo(config: HierarchyConfig) -> str:
    lines = []
    for name in _CONFIG_FIELDS:
        value = getattr(config, name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"hierarchy.{name}={value}")
    return "\n".join(lines)


def _config_from_echo(echo: str) -> HierarchyConfig:
    kwargs = {}
    for line in echo.splitlines():
        key, _, value = line.partition("=")
        name = key.removeprefix("hierarchy.")
        if name not in _CONFIG_FIELDS:
            raise HiertrackError(f"checkpoint config echo has unknown key {key}")
        current = getattr(HierarchyConfig(), name)
        if isinstance(current, tuple):
            kwargs[name] = tuple(int(v) for v in value.split(","))
        elif isinstance(current, float):
            kwargs[name] = float(value)
        else:
            kwargs[name] = int(value)
    return HierarchyConfig(**kwargs)


def _pack_tensor(name: str, tensor: np.ndarray) -> bytes:
    data = np.ascontiguousarray(tensor, dtype="<f8")
    encoded = name.encode("utf-8")
    head = struct.pack("<H", len(encoded)) + encoded
    head += struct.pack("<B", data.ndim) + struct.pack(f"<{data.ndim}I", *data.shape)
    return head + data.tobytes()


def save_checkpoint(
    path: Path,
    params: ModelParams,
    config: HierarchyConfig,
    adam: Optional[AdamState] = None,
    iteration: int = 0,
) -> None:
    tensors: List[Tuple[str, np.ndarray]] = list(params.items())
    if adam is not None:
        tensors += [(f"adam_m.{n}", t) for n, t in adam.m.items()]
        tensors += [(f"adam_v.{n}", t) for n, t in adam.v.items()]

    echo = _config_echo(config).encode("utf-8")
    body = CKPT_MAGIC
    body += struct.pack("<IQ", FORMAT_VERSION, iteration)
    body += struct.pack("<I", len(echo)) + echo
    body += struct.pack("<I", len(tensors))
    for name, tensor in tensors:
        body += _pack_tensor(name, tensor)
    digest = hashlib.sha256(body).digest()
    Path(path).write_bytes(body + digest)


def load_checkpoint(path: Path) -> Tuple[ModelParams, HierarchyConfig, Optional[AdamState], int]:
    """Read a checkpoint, verifying the checksum and shapes against the config."""
    raw = Path(path).read_bytes()
    if len(raw) < 36 or raw[:4] != CKPT_MAGIC:
        raise IoError(f"{path}: not a checkpoint file")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise IoError(f"{path}: checksum mismatch, file corrupted")
    offset = 4
    version, iteration = struct.unpack_from("<IQ", body, offset)
    offset += 12
    if version != FORMAT_VERSION:
        raise IoError(f"{path}: unsupported checkpoint version {version}")
    (echo_len,) = struct.unpack_from("<I", body, offset)
    offset += 4
    config = _config_from_echo(body[offset : offset + echo_len].decode("utf-8"))
    offset += echo_len
    (count,) = struct.unpack_from("<I", body, offset)
    offset += 4

    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", body, offset)
        offset += 2
        name = body[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", body, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", body, offset)
        offset += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        tensor = np.frombuffer(body, dtype="<f8", count=size, offset=offset).reshape(shape)
        offset += 8 * size
        tensors[name] = tensor.astype(np.float64)

    params = init_params(config, seed=0)
    _fill(params, tensors, prefix="")
    adam: Optional[AdamState] = None
    if any(name.startswith("adam_m.") for name in tensors):
        adam = AdamState(params)
        _fill(adam.m, tensors, prefix="adam_m.")
        _fill(adam.v, tensors, prefix="adam_v.")
        adam.t = iteration
    return params, config, adam, int(iteration)


def _fill(params: ModelParams, tensors: Dict[str, np.ndarray], prefix: str) -> None:
    for name, target in params.items():
        key = prefix + name
        if key not in tensors:
            raise HiertrackError(f"checkpoint missing tensor {key}")
        source = tensors[key]
        if source.shape != target.shape:
            raise HiertrackError(
                f"checkpoint tensor {key} has shape {source.shape}, config implies {target.shape}"
            )
        target[...] = source
