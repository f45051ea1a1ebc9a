"""Hash-name identities: ``<32-char base-32 digest>-<name-version>``."""

from __future__ import annotations

import hashlib
import re
import struct
from dataclasses import dataclass

from gardenctl.errors import MalformedHashName, WrongLength

ALPHABET = "0123456789abcdfghijklmnpqrsvwxyz"
DIGEST_LEN = 32
_ALPHABET_SET = frozenset(ALPHABET)
_LABEL_RE = re.compile(r"[A-Za-z0-9._+][A-Za-z0-9._+-]*\Z")
# digest, dash, label; used to pick hash-name tokens out of free text
TOKEN_RE = re.compile(
    r"(?<![%s])([%s]{32})-([A-Za-z0-9._+][A-Za-z0-9._+-]*)" % (ALPHABET, ALPHABET)
)


@dataclass(frozen=True, order=True)
class HashName:
    digest: str
    label: str

    def __post_init__(self):
        if len(self.digest) != DIGEST_LEN:
            raise MalformedHashName(
                f"digest must be {DIGEST_LEN} characters, got {len(self.digest)}: {self.digest!r}"
            )
        bad = set(self.digest) - _ALPHABET_SET
        if bad:
            raise MalformedHashName(
                f"digest {self.digest!r} has characters outside the alphabet: {''.join(sorted(bad))}"
            )
        if not self.label or not _LABEL_RE.match(self.label):
            raise MalformedHashName(f"invalid label {self.label!r}")

    def __str__(self):
        return f"{self.digest}-{self.label}"

    def render(self) -> str:
        return str(self)


def parse_hash_name(text: str) -> HashName:
    if not isinstance(text, str):
        raise MalformedHashName(f"expected text, got {type(text).__name__}")
    if len(text) < DIGEST_LEN + 2 or text[DIGEST_LEN] != "-":
        raise MalformedHashName(f"not a hash-name: {text!r}")
    return HashName(text[:DIGEST_LEN], text[DIGEST_LEN + 1:])


def is_hash_name(text: str) -> bool:
    try:
        parse_hash_name(text)
    except MalformedHashName:
        return False
    return True


def base32_encode(digest20: bytes) -> str:
    """Render 20 bytes as a 32-digit big-endian base-32 number."""
    if len(digest20) != 20:
        raise WrongLength(f"expected 20 bytes, got {len(digest20)}")
    value = int.from_bytes(digest20, "big")
    out = []
    for _ in range(DIGEST_LEN):
        value, digit = divmod(value, 32)
        out.append(ALPHABET[digit])
    return "".join(reversed(out))


@dataclass(frozen=True)
class HashInputs:
    recipe_bytes: bytes
    helper_bytes: bytes
    system: str
    dep_hashes: tuple = ()

    def __post_init__(self):
        deps = tuple(str(d) for d in self.dep_hashes)
        if list(deps) != sorted(set(deps)):
            raise ValueError("dep_hashes must be sorted and duplicate-free")
        object.__setattr__(self, "dep_hashes", deps)
        if not self.system:
            raise ValueError("system tag must be non-empty")

    @classmethod
    def build(cls, recipe_bytes, helper_bytes, system, deps=()):
        """Convenience constructor that sorts and dedups ``deps``."""
        return cls(recipe_bytes, helper_bytes, system, tuple(sorted({str(d) for d in deps})))


def frame(inputs: HashInputs) -> bytes:
    parts = [inputs.recipe_bytes, inputs.helper_bytes, inputs.system.encode()]
    parts.extend(d.encode() for d in inputs.dep_hashes)
    return b"".join(struct.pack(">Q", len(p)) + p for p in parts)


def compute_package_hash(inputs: HashInputs) -> str:
    return base32_encode(hashlib.sha256(frame(inputs)).digest()[:20])
