"""Canonical byte encoding used for every digest in the system.

Fields are written in declaration order. Integers are big-endian and fixed
width, variable-length fields carry a 4-byte length prefix. Structured
payloads go through canonical JSON (sorted keys, no whitespace) first.
"""
import hashlib
import json
import struct

ZERO_DIGEST = bytes(32)


def u32(n: int) -> bytes:
    return struct.pack(">I", n)


def u64(n: int) -> bytes:
    return struct.pack(">Q", n)


def blob(b: bytes) -> bytes:
    return u32(len(b)) + b


def text(s: str) -> bytes:
    return blob(s.encode("utf-8"))


def f64(x: float) -> bytes:
    return struct.pack(">d", float(x))


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode("ascii")


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()
