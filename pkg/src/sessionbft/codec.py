"""Canonical binary encoding and hashing.

Consensus compares results by byte equality, so every value that crosses a
node boundary or enters a hash must have exactly one byte representation.
The encoding is self-describing (tag + payload) and intentionally small:
null, bools, 64-bit ints, bytes, utf-8 strings, lists, and string-keyed
maps with keys sorted by their utf-8 bytes. Floats are rejected -- virtual
timestamps and counters are integers.

JSON is used at the HTTP edge for humans; it is never the input to
hashing or equality.
"""

from __future__ import annotations

import hashlib
import hmac

DIGEST_SIZE = 32
ZERO_DIGEST = b"\x00" * DIGEST_SIZE

_INT_MIN = -(1 << 63)
_INT_MAX = (1 << 63) - 1


class CodecError(ValueError):
    """Value cannot be canonically encoded or decoded."""


def canonical_serialize(value) -> bytes:
    """Encode *value* into its unique canonical byte sequence.

    Accepts documents (None/bool/int/str/bytes/list/dict) and any object
    exposing ``to_doc()``.
    """
    out = bytearray()
    _encode(value, out)
    return bytes(out)


def _encode(value, out: bytearray) -> None:
    if value is None:
        out += b"N"
    elif value is True:
        out += b"T"
    elif value is False:
        out += b"F"
    elif isinstance(value, int):
        if not (_INT_MIN <= value <= _INT_MAX):
            raise CodecError(f"integer out of 64-bit range: {value}")
        out += b"I"
        out += value.to_bytes(8, "big", signed=True)
    elif isinstance(value, bytes):
        out += b"B"
        out += len(value).to_bytes(4, "big")
        out += value
    elif isinstance(value, str):
        raw = value.encode("utf-8")
        out += b"S"
        out += len(raw).to_bytes(4, "big")
        out += raw
    elif isinstance(value, (list, tuple)):
        out += b"L"
        out += len(value).to_bytes(4, "big")
        for item in value:
            _encode(item, out)
    elif isinstance(value, dict):
        keys = list(value.keys())
        for k in keys:
            if not isinstance(k, str):
                raise CodecError(f"map keys must be strings, got {type(k).__name__}")
        keys.sort(key=lambda k: k.encode("utf-8"))
        out += b"M"
        out += len(keys).to_bytes(4, "big")
        for k in keys:
            _encode(k, out)
            _encode(value[k], out)
    elif hasattr(value, "to_doc"):
        _encode(value.to_doc(), out)
    else:
        raise CodecError(f"not canonically serializable: {type(value).__name__}")


def decode(data: bytes):
    """Decode canonical bytes back into a document.

    Raises CodecError on malformed or trailing input, so a tampered byte
    stream never silently decodes.
    """
    value, pos = _decode(data, 0)
    if pos != len(data):
        raise CodecError(f"trailing bytes after value ({len(data) - pos})")
    return value


def _decode(data: bytes, pos: int):
    if pos >= len(data):
        raise CodecError("truncated input")
    tag = data[pos : pos + 1]
    pos += 1
    if tag == b"N":
        return None, pos
    if tag == b"T":
        return True, pos
    if tag == b"F":
        return False, pos
    if tag == b"I":
        if pos + 8 > len(data):
            raise CodecError("truncated integer")
        return int.from_bytes(data[pos : pos + 8], "big", signed=True), pos + 8
    if tag in (b"B", b"S"):
        if pos + 4 > len(data):
            raise CodecError("truncated length prefix")
        n = int.from_bytes(data[pos : pos + 4], "big")
        pos += 4
        if pos + n > len(data):
            raise CodecError("truncated payload")
        raw = data[pos : pos + n]
        pos += n
        if tag == b"B":
            return raw, pos
        try:
            return raw.decode("utf-8"), pos
        except UnicodeDecodeError as exc:
            raise CodecError("invalid utf-8 in string") from exc
    if tag == b"L":
        if pos + 4 > len(data):
            raise CodecError("truncated list header")
        n = int.from_bytes(data[pos : pos + 4], "big")
        pos += 4
        items = []
        for _ in range(n):
            item, pos = _decode(data, pos)
            items.append(item)
        return items, pos
    if tag == b"M":
        if pos + 4 > len(data):
            raise CodecError("truncated map header")
        n = int.from_bytes(data[pos : pos + 4], "big")
        pos += 4
        result: dict = {}
        prev_key: bytes | None = None
        for _ in range(n):
            key, pos = _decode(data, pos)
            if not isinstance(key, str):
                raise CodecError("map key is not a string")
            raw_key = key.encode("utf-8")
            if prev_key is not None and raw_key <= prev_key:
                raise CodecError("map keys not strictly sorted")
            prev_key = raw_key
            value, pos = _decode(data, pos)
            result[key] = value
        return result, pos
    raise CodecError(f"unknown tag {tag!r}")


def digest(data: bytes) -> bytes:
    """32-byte SHA-256 digest of a byte sequence."""
    return hashlib.sha256(data).digest()


def digest_of(value) -> bytes:
    """Digest of a value's canonical encoding."""
    return digest(canonical_serialize(value))


# -- keyed authenticators ----------------------------------------------------
#
# Vote and transaction authenticators are node-id-keyed MACs: enough to
# pin a message to its claimed sender for vote counting, with no PKI.

def node_key(node_id: str) -> bytes:
    return digest(b"node-key:" + node_id.encode("utf-8"))


def supplier_key(supplier_id: str) -> bytes:
    return digest(b"supplier-key:" + supplier_id.encode("utf-8"))


def authenticate(key: bytes, payload: bytes) -> bytes:
    return hmac.new(key, payload, hashlib.sha256).digest()


def verify_authenticator(key: bytes, payload: bytes, tag: bytes) -> bool:
    return hmac.compare_digest(authenticate(key, payload), tag)
