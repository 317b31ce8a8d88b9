"""Fixed-width 16 byte quadtree keys.

Untimed layout::

    byte 0       level (0..56)
    bytes 1-14   quadrant digits, 2 bits each, most significant first, zero padded
    byte 15      flags (bit 0 clear)

Timed layout (flag bit 0 set) trades path capacity for a timestamp::

    byte 0       level (0..28)
    bytes 1-7    quadrant digits (up to 28)
    bytes 8-14   timestamp, unsigned seconds, 56-bit big endian
    byte 15      flags (bit 0 set)

Within one level, byte order follows the quadrant path, so tiles sharing a
path prefix share a byte prefix and sort next to each other.
"""

from __future__ import annotations

from dataclasses import dataclass

KEY_BYTES = 16
MAX_LEVEL = 56
MAX_TIMED_LEVEL = 28
MAX_TIMESTAMP = (1 << 56) - 1
_FLAG_TIMED = 0x01


class QuadKeyError(ValueError):
    pass


@dataclass(frozen=True)
class QuadKey:
    level: int
    path: tuple[int, ...] = ()
    timestamp: int = 0

    def __post_init__(self):
        object.__setattr__(self, "path", tuple(int(d) for d in self.path))
        _validate(self.level, self.path, self.timestamp)

    @classmethod
    def from_string(cls, s: str, timestamp: int = 0) -> "QuadKey":
        """Parse a Bing-style digit string such as ``"0312"``."""
        try:
            path = tuple(int(ch) for ch in s)
        except ValueError as exc:
            raise QuadKeyError(f"invalid quadkey string {s!r}") from exc
        return cls(len(path), path, timestamp)

    def __str__(self) -> str:
        return "".join(str(d) for d in self.path)

    def child(self, digit: int) -> "QuadKey":
        return QuadKey(self.level + 1, self.path + (digit,), self.timestamp)

    def encode(self) -> bytes:
        return quadkey_encode(self.level, self.path, self.timestamp)


def _validate(level, path, timestamp):
    if not isinstance(level, int) or level < 0:
        raise QuadKeyError(f"level must be a non-negative integer, got {level!r}")
    if level > MAX_LEVEL:
        raise QuadKeyError(f"level {level} exceeds maximum {MAX_LEVEL}")
    if len(path) != level:
        raise QuadKeyError(f"path length {len(path)} != level {level}")
    for d in path:
        if d not in (0, 1, 2, 3):
            raise QuadKeyError(f"invalid quadrant digit {d!r}")
    if timestamp < 0 or timestamp > MAX_TIMESTAMP:
        raise QuadKeyError(f"timestamp {timestamp} out of range")
    if timestamp and level > MAX_TIMED_LEVEL:
        raise QuadKeyError(f"timed keys support level <= {MAX_TIMED_LEVEL}, got {level}")


def _pack_path(path, nbytes: int) -> bytes:
    value = 0
    for d in path:
        value = (value << 2) | d
    value <<= 2 * (4 * nbytes - len(path))
    return value.to_bytes(nbytes, "big")


def _unpack_path(raw: bytes, level: int) -> tuple[int, ...]:
    value = int.from_bytes(raw, "big")
    total = 4 * len(raw)
    return tuple((value >> (2 * (total - 1 - i))) & 3 for i in range(level))


def quadkey_encode(level: int, path=(), timestamp: int = 0) -> bytes:
    path = tuple(path)
    _validate(level, path, timestamp)
    if timestamp:
        body = _pack_path(path, 7) + timestamp.to_bytes(7, "big")
        flags = _FLAG_TIMED
    else:
        body = _pack_path(path, 14)
        flags = 0
    key = bytes([level]) + body + bytes([flags])
    assert len(key) == KEY_BYTES
    return key


def quadkey_decode(key: bytes) -> QuadKey:
    if len(key) != KEY_BYTES:
        raise QuadKeyError(f"key must be {KEY_BYTES} bytes, got {len(key)}")
    level, flags = key[0], key[15]
    if flags & ~_FLAG_TIMED:
        raise QuadKeyError(f"unknown flag bits {flags:#04x}")
    if flags & _FLAG_TIMED:
        if level > MAX_TIMED_LEVEL:
            raise QuadKeyError(f"timed key with level {level}")
        path = _unpack_path(key[1:8], level)
        timestamp = int.from_bytes(key[8:15], "big")
        if timestamp == 0:
            raise QuadKeyError("timed key carries zero timestamp")
        if _pack_path(path, 7) != key[1:8]:
            raise QuadKeyError("non-zero padding after path")
    else:
        if level > MAX_LEVEL:
            raise QuadKeyError(f"level {level} exceeds maximum {MAX_LEVEL}")
        path = _unpack_path(key[1:15], level)
        timestamp = 0
        if _pack_path(path, 14) != key[1:15]:
            raise QuadKeyError("non-zero padding after path")
    return QuadKey(level, path, timestamp)
