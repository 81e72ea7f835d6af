"""SPCT binary model container.

Layout (all little-endian):
  magic "SPCT" | version u16 | config block | tensor table | [quant table] | crc32 u32

Config block: T, C, K, n_fft, hop, k, D, H as u32; dropout_p f64;
use_channel_attention u8; use_gru u8; seed u64.

Tensor table: count u32, then per tensor: name_len u16, UTF-8 name,
rank u8, dims u32 each, payload f32.

Version 1 is a plain float model; version 2 appends a quant table
(mode u8, count u32, then per entry: name_len u16, name, scale f32,
zero_point i8, payload_len u32, int8 payload — empty for activation
sites).  The trailing CRC-32 covers every preceding byte.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import ChecksumError, MagicError, TruncationError, VersionError
from .model import ModelParams, SpectraConfig

MAGIC = b"SPCT"
VERSION_FLOAT = 1
VERSION_QUANT = 2

_QUANT_MODES = {0: "weights_only", 1: "full"}
_QUANT_MODE_CODES = {v: k for k, v in _QUANT_MODES.items()}


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncationError(
                f"file ends at byte {len(self.data)}, needed {self.pos + n}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))


def _config_bytes(cfg: SpectraConfig) -> bytes:
    return struct.pack(
        "<8IdBBQ", cfg.T, cfg.C, cfg.K, cfg.n_fft, cfg.hop, cfg.k, cfg.D,
        cfg.H, cfg.dropout_p, int(cfg.use_channel_attention),
        int(cfg.use_gru), cfg.seed)


def _read_config(r: _Reader) -> SpectraConfig:
    vals = r.unpack("8IdBBQ")
    return SpectraConfig(
        T=vals[0], C=vals[1], K=vals[2], n_fft=vals[3], hop=vals[4],
        k=vals[5], D=vals[6], H=vals[7], dropout_p=float(vals[8]),
        use_channel_attention=bool(vals[9]), use_gru=bool(vals[10]),
        seed=vals[11])


def _tensor_table_bytes(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def _read_tensor_table(r: _Reader) -> dict[str, np.ndarray]:
    (count,) = r.unpack("I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("H")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("B")
        dims = r.unpack(f"{rank}I") if rank else ()
        n = int(np.prod(dims)) if dims else 1
        raw = r.take(4 * n)
        tensors[name] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(dims)
    return tensors


def save_model(model: ModelParams, path: str, version: int = VERSION_FLOAT,
               quant_block: bytes = b"") -> None:
    """Write a model file; tensors are stored as 32-bit floats."""
    body = (MAGIC + struct.pack("<H", version) + _config_bytes(model.config)
            + _tensor_table_bytes(model.tensors) + quant_block)
    crc = zlib.crc32(body) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(body + struct.pack("<I", crc))


def _open_checked(path: str, expect_versions: tuple[int, ...]) -> _Reader:
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    magic = r.take(4)
    if magic != MAGIC:
        raise MagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = r.unpack("H")
    if version not in expect_versions:
        raise VersionError(
            f"unsupported format version {version}, expected one of {expect_versions}")
    if len(data) < r.pos + 4:
        raise TruncationError("file too short to hold a checksum")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    actual_crc = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    r.crc_ok = stored_crc == actual_crc
    r.data = data[:-4]
    return r


def _finish_load(r: _Reader):
    """Structural parse completed; reject corruption afterwards."""
    if not r.crc_ok:
        raise ChecksumError("CRC-32 mismatch: file is corrupted")


def _structural(r: _Reader, parse):
    """Run a structural parse step, attributing failures to a bad CRC.

    A corrupted byte can land in a length or rank field and derail the
    parse; when the checksum already disagrees, that is corruption, not a
    short file, so report it as such.
    """
    try:
        return parse(r)
    except TruncationError:
        raise  # the file really ends early
    except Exception as exc:
        if not r.crc_ok:
            raise ChecksumError("CRC-32 mismatch: file is corrupted") from exc
        raise


def load_model(path: str) -> ModelParams:
    """Read a version-1 float model, verifying structure and CRC-32."""
    r = _open_checked(path, (VERSION_FLOAT,))
    config = _structural(r, _read_config)
    tensors = _structural(r, _read_tensor_table)
    _finish_load(r)
    return ModelParams(config, tensors)


def quant_block_bytes(mode: str, weight_entries: list, act_entries: list) -> bytes:
    """weight_entries: (name, scale, zero_point, int8 array);
    act_entries: (name, scale, zero_point)."""
    parts = [struct.pack("<B", _QUANT_MODE_CODES[mode])]
    parts.append(struct.pack("<I", len(weight_entries) + len(act_entries)))
    for name, scale, zp, payload in weight_entries:
        encoded = name.encode("utf-8")
        data = np.ascontiguousarray(payload, dtype=np.int8).tobytes()
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<fbI", np.float32(scale), zp, len(data)))
        parts.append(data)
    for name, scale, zp in act_entries:
        encoded = ("act:" + name).encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<fbI", np.float32(scale), zp, 0))
    return b"".join(parts)


def read_quant_block(r: _Reader):
    (mode_code,) = r.unpack("B")
    if mode_code not in _QUANT_MODES:
        raise VersionError(f"unknown quantization mode code {mode_code}")
    (count,) = r.unpack("I")
    weights: dict[str, tuple[float, int, np.ndarray]] = {}
    acts: dict[str, tuple[float, int]] = {}
    for _ in range(count):
        (name_len,) = r.unpack("H")
        name = r.take(name_len).decode("utf-8")
        scale, zp, payload_len = r.unpack("fbI")
        payload = np.frombuffer(r.take(payload_len), dtype=np.int8)
        if name.startswith("act:"):
            acts[name[4:]] = (float(scale), int(zp))
        else:
            weights[name] = (float(scale), int(zp), payload)
    return _QUANT_MODES[mode_code], weights, acts
