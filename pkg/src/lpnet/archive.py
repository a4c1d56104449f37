"""Binary weight archive.

Layout, all integers and floats little-endian::

    b"LPNETW01"                      8-byte magic
    u64 L                            number of node levels
    u64 dims[L + 1]
    per level l = 1..L:
        f64 tau_l                    sNT threshold
        u8  tied                     1 when B_{l-1} is the transpose of A_{l-1}
        f64 A_{l-1}[M_l * M_{l-1}]   row-major
        f64 B_{l-1}[M_{l-1} * M_l]   row-major, only when tied == 0
    u64 checksum                     sum of every byte between magic and checksum, mod 2**64
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Network
from .errors import FormatError

MAGIC = b"LPNETW01"
_F64 = np.dtype("<f8")


def checksum(payload: bytes) -> int:
    return int(np.frombuffer(payload, dtype=np.uint8).sum(dtype=np.uint64))


def encode(net: Network) -> bytes:
    parts = [struct.pack("<Q", net.depth), struct.pack(f"<{net.depth + 1}Q", *net.dims)]
    for l in range(1, net.depth + 1):
        parts.append(struct.pack("<dB", float(net.threshold(l)), int(net.tie_backward)))
        parts.append(np.ascontiguousarray(net.forward[l - 1], dtype=_F64).tobytes())
        if not net.tie_backward:
            parts.append(np.ascontiguousarray(net.backward(l - 1), dtype=_F64).tobytes())
    payload = b"".join(parts)
    return MAGIC + payload + struct.pack("<Q", checksum(payload))


@dataclass
class ArchiveInfo:
    depth: int
    dims: tuple[int, ...]
    thresholds: list[float]
    tied: list[bool]
    checksum: int
    size: int


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("archive is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def matrix(self, rows: int, cols: int) -> np.ndarray:
        raw = self.take(rows * cols * _F64.itemsize)
        return np.frombuffer(raw, dtype=_F64).reshape(rows, cols).astype(np.float64)


def decode(buf: bytes) -> tuple[Network, ArchiveInfo]:
    if buf[:len(MAGIC)] != MAGIC:
        raise FormatError(f"bad magic {buf[:len(MAGIC)]!r}")
    if len(buf) < len(MAGIC) + 8:
        raise FormatError("archive is truncated")
    payload, (stored,) = buf[len(MAGIC):-8], struct.unpack("<Q", buf[-8:])
    if checksum(payload) != stored:
        raise FormatError(f"checksum mismatch: stored {stored}, computed {checksum(payload)}")

    r = _Reader(payload)
    (depth,) = r.unpack("<Q")
    dims = r.unpack(f"<{depth + 1}Q")
    forward, backward, thresholds, tied = [], [], [], []
    for l in range(depth):
        tau, flag = r.unpack("<dB")
        thresholds.append(tau)
        tied.append(bool(flag))
        forward.append(r.matrix(dims[l + 1], dims[l]))
        backward.append(None if flag else r.matrix(dims[l], dims[l + 1]))
    if r.pos != len(payload):
        raise FormatError(f"{len(payload) - r.pos} trailing bytes")
    if len(set(tied)) > 1:
        raise FormatError("mixed tied and untied levels are not supported")
    is_tied = tied[0] if tied else True
    net = Network(dims, forward, thresholds, tie_backward=is_tied,
                  _backward=[] if is_tied else backward)
    return net, ArchiveInfo(depth, tuple(dims), thresholds, tied, stored, len(buf))


def save(net: Network, path) -> Path:
    path = Path(path)
    path.write_bytes(encode(net))
    return path


def load(path) -> Network:
    return decode(Path(path).read_bytes())[0]


def inspect(path) -> ArchiveInfo:
    return decode(Path(path).read_bytes())[1]
