"""Flat binary parameter container.

Layout (little-endian): magic ``GALR1``, version u32, count u32, then per
entry: name length u16, UTF-8 name, rank u8, dims u32 each, f32 payload.
Entries are written in name order.
"""

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"GALR1"
VERSION = 1


class CheckpointError(Exception):
    """Raised when a container is malformed."""

    pass


def encode_container(tensors: dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors):
        value = np.asarray(tensors[name])
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(value.astype("<f4").tobytes())
    return b"".join(chunks)


def decode_container(blob: bytes) -> dict[str, np.ndarray]:
    """Parse a container produced by :func:`encode_container`.

    Raises:
        CheckpointError: On a bad magic, version or truncated payload.
    """
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError("Not a GALR1 container (bad magic).")
    offset = len(MAGIC)
    try:
        version, count = struct.unpack_from("<II", blob, offset)
        offset += 8
        if version != VERSION:
            raise CheckpointError(f"Unsupported container version {version}.")
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (length,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset : offset + length].decode("utf-8")
            offset += length
            (rank,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            payload = np.frombuffer(blob, dtype="<f4", count=n, offset=offset)
            offset += 4 * n
            out[name] = payload.reshape(dims).astype(np.float32)
    except struct.error as e:
        raise CheckpointError(f"Truncated container: {e}") from e
    except ValueError as e:
        raise CheckpointError(f"Truncated container payload: {e}") from e
    return out


def atomic_write(path: Path, data: bytes | str) -> None:
    """Write to a temporary sibling, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def save_container(path: Path, tensors: dict[str, np.ndarray]) -> None:
    atomic_write(path, encode_container(tensors))


def load_container(path: Path) -> dict[str, np.ndarray]:
    return decode_container(Path(path).read_bytes())
