"""Binary checkpoint format for :class:`~kfan.network.KFanNetwork`.

Layout (all integers little-endian u32, all reals little-endian f64)::

    "KFAN" | version | K | shared_dim
    K x [ name_len | name (utf-8) | layer_count | layer_count + 1 dims ]
    every parameter array, row-major, in the canonical order
    CRC-32 of all preceding bytes

The canonical order is, per branch: for each layer weights, visible bias,
hidden bias; then the top weights and the top-down bias. The shared bias
comes last.
"""

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import FormatError
from .finetune import flatten, layout_of, unflatten
from .network import Branch, BranchSpec, KFanNetwork
from .rbm import Rbm

MAGIC = b"KFAN"
VERSION = 1
MAX_DIM = 1 << 24


def encode(net):
    out = bytearray(MAGIC)
    out += struct.pack("<III", VERSION, len(net.branches), net.shared_dim)
    for branch in net.branches:
        name = branch.name.encode("utf-8")
        dims = branch.spec.dims
        out += struct.pack("<I", len(name)) + name
        out += struct.pack(f"<I{len(dims)}I", len(dims) - 1, *dims)
    out += flatten(net).values.astype("<f8").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


class _Reader:
    def __init__(self, raw):
        self.raw, self.pos = raw, 0

    def take(self, n, what):
        if self.pos + n > len(self.raw):
            raise FormatError(f"truncated file while reading {what}", self.pos)
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def dim(self, what):
        at = self.pos
        value = self.u32(what)
        if value < 1 or value > MAX_DIM:
            raise FormatError(f"{what} {value} outside [1, {MAX_DIM}]", at)
        return value


def decode(raw):
    r = _Reader(raw)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic, expected 'KFAN'", 0)
    at = r.pos
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", at)
    at = r.pos
    k = r.dim("branch count")
    if k < 2:
        raise FormatError("a K-fan network needs at least two branches", at)
    shared_dim = r.dim("shared dimension")
    specs = []
    for _ in range(k):
        at = r.pos
        n = r.dim("name length")
        name_at = r.pos
        try:
            name = r.take(n, "branch name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("branch name is not utf-8", name_at) from None
        layers = r.dim("layer count")
        dims = [r.dim("layer dimension") for _ in range(layers + 1)]
        try:
            specs.append(BranchSpec(name, dims[0], tuple(dims[1:])))
        except ValueError as exc:
            raise FormatError(str(exc), at) from None
    count = sum(
        sum(a * b + a + b for a, b in zip(s.dims[:-1], s.dims[1:])) + shared_dim * s.dims[-1] + s.dims[-1]
        for s in specs) + shared_dim
    body_at = r.pos
    if len(raw) - body_at - 4 != 8 * count:
        raise FormatError(
            f"parameter block should hold {count} doubles plus a checksum "
            f"but {len(raw) - body_at} bytes remain", body_at)
    values = np.frombuffer(r.take(8 * count, "parameters"), dtype="<f8").astype(np.float64)
    crc_at = r.pos
    (crc,) = struct.unpack("<I", r.take(4, "checksum"))
    if crc != zlib.crc32(raw[:crc_at]):
        raise FormatError("checksum mismatch", crc_at)
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise FormatError("non-finite parameter", body_at + 8 * bad)
    try:
        skeleton = _zeros(specs, shared_dim)
    except ValueError as exc:
        raise FormatError(str(exc), 16) from None
    return unflatten(values, layout_of(skeleton))


def _zeros(specs, shared_dim):
    branches = []
    for s in specs:
        layers = [Rbm(np.zeros((b, a)), np.zeros(a), np.zeros(b))
                  for a, b in zip(s.dims[:-1], s.dims[1:])]
        branches.append(Branch(s, layers, np.zeros((shared_dim, s.dims[-1])), np.zeros(s.dims[-1])))
    return KFanNetwork(branches, np.zeros(shared_dim))


def save_checkpoint(net, path):
    Path(path).write_bytes(encode(net))


def load_checkpoint(path):
    return decode(Path(path).read_bytes())
