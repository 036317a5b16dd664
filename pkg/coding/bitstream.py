"""Stream container and the entropy coding of latent symbols."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from coding.range_coder import MAX_LITERAL_BITS, RangeDecoder, RangeEncoder
from models.entropy import (
    ESCAPE_LENGTH_BITS,
    EntropyParameters,
    FactorizedTables,
    GaussianTables,
    LatentPair,
    SymbolTable,
    shared_gaussian_tables,
)

MAGIC = b"PCIC"
VERSION = 1
_HEADER = struct.Struct(">4sBBBHHI")
_LENGTH = struct.Struct(">I")
HEADER_BYTES = _HEADER.size + _LENGTH.size
MAX_ESCAPE_BITS = (1 << ESCAPE_LENGTH_BITS) - 1


class MalformedBitstream(ValueError):
    """The byte string is not a well-formed stream of this format version."""


@dataclass(frozen=True)
class Bitstream:
    flags: int
    lambda_index: int
    height: int
    width: int
    z_payload: bytes = b""
    y_payload: bytes = b""
    version: int = VERSION

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(
            MAGIC,
            self.version,
            self.flags,
            self.lambda_index,
            self.height,
            self.width,
            len(self.z_payload),
        )
        return head + self.z_payload + _LENGTH.pack(len(self.y_payload)) + self.y_payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        if len(data) < HEADER_BYTES:
            raise MalformedBitstream(f"stream of {len(data)} bytes is shorter than the header")
        magic, version, flags, lambda_index, height, width, z_len = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise MalformedBitstream(f"bad magic {magic!r}")
        if version != VERSION:
            raise MalformedBitstream(f"unsupported version {version}")
        offset = _HEADER.size
        if offset + z_len + _LENGTH.size > len(data):
            raise MalformedBitstream("z payload length exceeds the stream")
        z_payload = bytes(data[offset : offset + z_len])
        offset += z_len
        (y_len,) = _LENGTH.unpack_from(data, offset)
        offset += _LENGTH.size
        if offset + y_len != len(data):
            raise MalformedBitstream(
                f"y payload length {y_len} does not match the {len(data) - offset} remaining bytes"
            )
        return cls(
            flags=flags,
            lambda_index=lambda_index,
            height=height,
            width=width,
            z_payload=z_payload,
            y_payload=bytes(data[offset:]),
            version=version,
        )

    @property
    def total_bytes(self) -> int:
        return HEADER_BYTES + len(self.z_payload) + len(self.y_payload)

    @property
    def total_bits(self) -> int:
        return 8 * self.total_bytes

    def write(self, path: Union[str, Path]) -> Path:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(self.to_bytes())
        return target

    @classmethod
    def read(cls, path: Union[str, Path]) -> "Bitstream":
        source = Path(path)
        if not source.is_file():
            raise FileNotFoundError(f"bitstream {source} does not exist")
        return cls.from_bytes(source.read_bytes())


def _encode_escape(encoder: RangeEncoder, value: int) -> None:
    magnitude = abs(int(value))
    length = magnitude.bit_length()
    if length > MAX_ESCAPE_BITS:
        raise ValueError(f"symbol {value} is too large for the escape code")
    encoder.encode_literal(1 if value < 0 else 0, 1)
    encoder.encode_literal(length, ESCAPE_LENGTH_BITS)
    remaining = length
    while remaining > 0:
        chunk = min(MAX_LITERAL_BITS, remaining)
        remaining -= chunk
        encoder.encode_literal((magnitude >> remaining) & ((1 << chunk) - 1), chunk)


def _decode_escape(decoder: RangeDecoder) -> int:
    negative = decoder.decode_literal(1)
    remaining = decoder.decode_literal(ESCAPE_LENGTH_BITS)
    magnitude = 0
    while remaining > 0:
        chunk = min(MAX_LITERAL_BITS, remaining)
        remaining -= chunk
        magnitude = (magnitude << chunk) | decoder.decode_literal(chunk)
    return -magnitude if negative else magnitude


def _encode_values(encoder: RangeEncoder, table: SymbolTable, values: np.ndarray) -> None:
    for value in values:
        index = table.index(int(value))
        encoder.encode_symbol(table.cdf, index)
        if index == table.escape:
            _encode_escape(encoder, int(value))


def _decode_value(decoder: RangeDecoder, table: SymbolTable) -> int:
    index = decoder.decode_symbol(table.cdf)
    if index == table.escape:
        return _decode_escape(decoder)
    return index + table.offset


def encode_z(z_hat: torch.Tensor, tables: FactorizedTables) -> bytes:
    """Channel-major coding of the hyper-latent under per-channel tables."""

    if z_hat.numel() == 0:
        return b""
    values = z_hat.detach().cpu().numpy().astype(np.int64)
    encoder = RangeEncoder()
    for channel, table in enumerate(tables.tables):
        _encode_values(encoder, table, values[:, channel].reshape(-1))
    return encoder.finish()


def decode_z(payload: bytes, shape: Sequence[int], tables: FactorizedTables) -> torch.Tensor:
    out = np.zeros(tuple(shape), dtype=np.int32)
    if out.size == 0:
        return torch.from_numpy(out)
    decoder = RangeDecoder(payload)
    per_channel = out[:, 0].size
    for channel, table in enumerate(tables.tables):
        decoded = [_decode_value(decoder, table) for _ in range(per_channel)]
        out[:, channel] = np.asarray(decoded, dtype=np.int32).reshape(out[:, channel].shape)
    return torch.from_numpy(out)


def encode_y(
    y_hat: torch.Tensor, sigma: torch.Tensor, tables: Optional[GaussianTables] = None
) -> bytes:
    """Raster-order coding of residual symbols, each under the table chosen by its sigma."""

    if y_hat.numel() == 0:
        return b""
    tables = tables or shared_gaussian_tables()
    values = y_hat.detach().cpu().numpy().astype(np.int64).reshape(-1)
    indexes = tables.scale_indexes(sigma).reshape(-1)
    encoder = RangeEncoder()
    for value, index in zip(values, indexes):
        table = tables.tables[int(index)]
        position = table.index(int(value))
        encoder.encode_symbol(table.cdf, position)
        if position == table.escape:
            _encode_escape(encoder, int(value))
    return encoder.finish()


def decode_y(
    payload: bytes, sigma: torch.Tensor, tables: Optional[GaussianTables] = None
) -> torch.Tensor:
    tables = tables or shared_gaussian_tables()
    shape = tuple(sigma.shape)
    if int(np.prod(shape)) == 0:
        return torch.zeros(shape, dtype=torch.int32)
    indexes = tables.scale_indexes(sigma).reshape(-1)
    decoder = RangeDecoder(payload)
    decoded = [_decode_value(decoder, tables.tables[int(index)]) for index in indexes]
    return torch.from_numpy(np.asarray(decoded, dtype=np.int32).reshape(shape))


def encode_bitstream(
    pair: LatentPair,
    params: EntropyParameters,
    z_tables: FactorizedTables,
    y_tables: Optional[GaussianTables] = None,
) -> Tuple[bytes, bytes]:
    return encode_z(pair.z_hat, z_tables), encode_y(pair.y_hat, params.sigma, y_tables)


def decode_bitstream(
    z_payload: bytes,
    y_payload: bytes,
    z_shape: Sequence[int],
    z_tables: FactorizedTables,
    entropy_parameters: Callable[[torch.Tensor], EntropyParameters],
    y_tables: Optional[GaussianTables] = None,
) -> LatentPair:
    """z first, then y under the parameters the decoded z (and shared context) imply."""

    z_hat = decode_z(z_payload, z_shape, z_tables)
    params = entropy_parameters(z_hat)
    y_hat = decode_y(y_payload, params.sigma, y_tables)
    return LatentPair(y_hat=y_hat, z_hat=z_hat)


__all__ = [
    "Bitstream",
    "HEADER_BYTES",
    "MAGIC",
    "MalformedBitstream",
    "VERSION",
    "decode_bitstream",
    "decode_y",
    "decode_z",
    "encode_bitstream",
    "encode_y",
    "encode_z",
]
