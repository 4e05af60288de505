"""Prefix-preserving IP anonymization (Crypto-PAn).

For every bit position ``i`` of an address, a 128-bit block is formed
from the first ``i`` address bits followed by the matching bits of an
AES-encrypted pad; the most significant bit of AES(block) is XORed into
address bit ``i``. Two addresses sharing a k-bit prefix therefore map to
outputs sharing exactly a k-bit prefix. IPv4 follows the original 32-bit
construction bit for bit; IPv6 runs the same loop over 128 positions.

All per-bit blocks of a batch of addresses are encrypted in a single ECB
call, which keeps anonymizing millions of addresses practical.
"""

from __future__ import annotations

import binascii
import dataclasses
import ipaddress
import os
from functools import lru_cache
from typing import Sequence

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import ConfigError, PreconditionError
from .log_ingest import IPAddress, LogRecord

KEY_ENV_VAR = "BOTSIEVE_ANON_KEY"


@dataclasses.dataclass(frozen=True)
class AnonKey:
    cipher_key: bytes
    pad_seed: bytes

    def __post_init__(self):
        if len(self.cipher_key) != 16 or len(self.pad_seed) != 16:
            raise ConfigError("an anonymization key is two 16-byte halves (32 bytes total)")

    def __repr__(self) -> str:
        return "AnonKey(<redacted>)"

    @classmethod
    def from_bytes(cls, raw: bytes) -> "AnonKey":
        if len(raw) != 32:
            raise ConfigError(f"anonymization key must be 32 bytes, got {len(raw)}")
        return cls(raw[:16], raw[16:])

    @classmethod
    def from_hex(cls, text: str) -> "AnonKey":
        text = text.strip()
        if len(text) != 64:
            raise ConfigError(f"hex anonymization key must be 64 characters, got {len(text)}")
        try:
            return cls.from_bytes(binascii.unhexlify(text))
        except binascii.Error:
            raise ConfigError("anonymization key is not valid hex") from None

    @classmethod
    def from_file(cls, path) -> "AnonKey":
        """Load a key file holding 32 raw bytes or 64 hex characters."""
        with open(path, "rb") as fh:
            data = fh.read()
        if len(data) == 32:
            return cls.from_bytes(data)
        stripped = data.strip()
        if len(stripped) == 64:
            try:
                return cls.from_hex(stripped.decode("ascii"))
            except UnicodeDecodeError:
                pass
        raise ConfigError(f"key file must hold exactly 32 bytes or 64 hex characters (got {len(data)} bytes)")

    @classmethod
    def from_env(cls, var: str = KEY_ENV_VAR) -> "AnonKey":
        value = os.environ.get(var)
        if not value:
            raise ConfigError(f"environment variable {var} is not set")
        return cls.from_hex(value)

    def to_bytes(self) -> bytes:
        return self.cipher_key + self.pad_seed


def _masks(width: int) -> np.ndarray:
    """Row i keeps the first i bits of a 16-byte block (bits past ``width`` never kept)."""
    masks = np.zeros((width, 16), dtype=np.uint8)
    for i in range(width):
        full, rem = divmod(i, 8)
        masks[i, :full] = 0xFF
        if rem:
            masks[i, full] = (0xFF << (8 - rem)) & 0xFF
    return masks


_MASKS = {32: _masks(32), 128: _masks(128)}
_BIT_WEIGHTS = (1 << np.arange(7, -1, -1)).astype(np.uint8)


class Anonymizer:
    """Keyed Crypto-PAn anonymizer; immutable and safe to share across threads."""

    # Addresses per ECB call; bounds the temporary block buffer (~width*16 bytes each).
    BATCH = 16384

    def __init__(self, key: AnonKey):
        self._cipher = Cipher(algorithms.AES(key.cipher_key), modes.ECB())
        pad = self._encrypt(key.pad_seed)
        self._pad = np.frombuffer(pad, dtype=np.uint8)
        self.cached = lru_cache(maxsize=1 << 20)(self._anonymize_one)

    def _encrypt(self, data: bytes) -> bytes:
        # A fresh context per call: cipher contexts are not shareable across threads.
        enc = self._cipher.encryptor()
        return enc.update(data) + enc.finalize()

    def _run(self, addrs: np.ndarray, width: int) -> np.ndarray:
        """Anonymize ``addrs`` given as an (n, width/8) uint8 big-endian array."""
        n, nbytes = addrs.shape
        out = np.empty_like(addrs)
        masks = _MASKS[width]
        inv = ~masks
        for start in range(0, n, self.BATCH):
            chunk = addrs[start:start + self.BATCH]
            m = len(chunk)
            padded = np.zeros((m, 16), dtype=np.uint8)
            padded[:, :nbytes] = chunk
            blocks = (padded[:, None, :] & masks[None]) | (self._pad[None, None, :] & inv[None])
            cipher = np.frombuffer(self._encrypt(blocks.tobytes()), dtype=np.uint8)
            bits = cipher.reshape(m, width, 16)[:, :, 0] >> 7
            flips = np.packbits(bits.astype(np.uint8), axis=1)
            out[start:start + m] = chunk ^ flips
        return out

    def anonymize_v4_many(self, addrs: Sequence[int] | np.ndarray) -> np.ndarray:
        """Anonymize many IPv4 addresses given as integers; returns uint32 array."""
        ints = np.asarray(addrs, dtype=">u4")
        as_bytes = ints.view(np.uint8).reshape(-1, 4)
        return self._run(as_bytes, 32).view(">u4").reshape(-1).astype(np.uint32)

    def anonymize_v6_many(self, packed: Sequence[bytes]) -> list[bytes]:
        arr = np.frombuffer(b"".join(packed), dtype=np.uint8).reshape(-1, 16)
        out = self._run(arr, 128)
        return [row.tobytes() for row in out]

    def _anonymize_one(self, ip: IPAddress) -> IPAddress:
        if ip.version == 4:
            arr = np.frombuffer(ip.packed, dtype=np.uint8).reshape(1, 4)
            return ipaddress.IPv4Address(self._run(arr, 32)[0].tobytes())
        arr = np.frombuffer(ip.packed, dtype=np.uint8).reshape(1, 16)
        return ipaddress.IPv6Address(self._run(arr, 128)[0].tobytes())

    def anonymize(self, ip: IPAddress | str) -> IPAddress:
        if isinstance(ip, str):
            ip = ipaddress.ip_address(ip)
        return self.cached(ip)


def anonymize_v4(ip: ipaddress.IPv4Address | str, key: AnonKey) -> ipaddress.IPv4Address:
    ip = ipaddress.IPv4Address(ip)
    return Anonymizer(key).anonymize(ip)


def anonymize_v6(ip: ipaddress.IPv6Address | str, key: AnonKey) -> ipaddress.IPv6Address:
    ip = ipaddress.IPv6Address(ip)
    return Anonymizer(key).anonymize(ip)


def anonymize_record(record: LogRecord, key_or_anonymizer: AnonKey | Anonymizer) -> LogRecord:
    """Return a copy of ``record`` with its client IP anonymized."""
    if record.anonymized:
        raise PreconditionError("record is already anonymized")
    anon = key_or_anonymizer if isinstance(key_or_anonymizer, Anonymizer) else Anonymizer(key_or_anonymizer)
    return dataclasses.replace(record, client_ip=anon.anonymize(record.client_ip), anonymized=True)


def common_prefix_length(a: int, b: int, width: int) -> int:
    diff = a ^ b
    return width - diff.bit_length()
