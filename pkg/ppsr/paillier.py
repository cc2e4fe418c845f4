"""Paillier cryptosystem (g = N + 1) with fixed-point encoding.

The arithmetic is python-paillier's (``phe``); primes come from sympy. This
module adds what the protocol needs around them: seeded key generation for
tests, key ids, byte forms and a fixed-point codec with an overflow budget.

Multiplying ciphertexts adds plaintexts; raising a ciphertext to an integer
power multiplies its plaintext. All arithmetic is modulo N^2.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import random
import secrets
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import sympy
from phe import paillier

from ppsr.errors import (
    DataError,
    KeyGenerationError,
    KeyMismatchError,
    PlaintextRangeError,
    RangeOverflowError,
)
from ppsr.events import track_event
from ppsr.matrixfile import atomic_write_text

logger = logging.getLogger(__name__)

DEFAULT_KEYSIZE = 2048
TEST_KEYSIZE = 512
MAX_KEY_ATTEMPTS = 64

RandomSource = Union[random.Random, secrets.SystemRandom]


def int_to_bytes(value: int) -> bytes:
    """Big-endian magnitude (zero encodes as an empty string)."""
    return value.to_bytes((value.bit_length() + 7) // 8, "big")


def encode_bigint(value: int) -> bytes:
    """4-byte big-endian length followed by the magnitude."""
    raw = int_to_bytes(value)
    return len(raw).to_bytes(4, "big") + raw


def decode_bigint(buf: bytes, offset: int = 0) -> tuple[int, int]:
    """Inverse of :func:`encode_bigint`; returns (value, next offset)."""
    if len(buf) < offset + 4:
        raise DataError("truncated big-integer length")
    n = int.from_bytes(buf[offset : offset + 4], "big")
    end = offset + 4 + n
    if len(buf) < end:
        raise DataError("truncated big-integer magnitude")
    return int.from_bytes(buf[offset + 4 : end], "big"), end


def _prime(bits: int, rng: RandomSource) -> int:
    # top two bits set so that a product of two such primes has exactly 2*bits bits
    start = rng.getrandbits(bits) | (0b11 << (bits - 2))
    return int(sympy.nextprime(start))


@dataclass(frozen=True)
class PublicKey:
    n: int
    bits: int
    raw: paillier.PaillierPublicKey = field(init=False, repr=False, compare=False)
    key_id: str = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "raw", paillier.PaillierPublicKey(self.n))
        digest = hashlib.sha256(int_to_bytes(self.n)).hexdigest()
        object.__setattr__(self, "key_id", digest[:16])

    @property
    def g(self) -> int:
        return self.raw.g

    @property
    def nsquare(self) -> int:
        return self.raw.nsquare

    def to_bytes(self) -> bytes:
        """(bit length as 4 bytes, N as length-prefixed magnitude)."""
        return self.bits.to_bytes(4, "big") + encode_bigint(self.n)

    @classmethod
    def from_bytes(cls, buf: bytes, offset: int = 0) -> tuple["PublicKey", int]:
        if len(buf) < offset + 4:
            raise DataError("truncated public key")
        bits = int.from_bytes(buf[offset : offset + 4], "big")
        n, end = decode_bigint(buf, offset + 4)
        if n.bit_length() != bits or n < 3:
            raise DataError(f"public key modulus does not have {bits} bits")
        return cls(n=n, bits=bits), end


@dataclass(frozen=True)
class PaillierKeypair:
    public: PublicKey
    secret: paillier.PaillierPrivateKey = field(repr=False, compare=False)

    @property
    def key_id(self) -> str:
        return self.public.key_id

    @classmethod
    def from_primes(cls, p: int, q: int) -> "PaillierKeypair":
        public = PublicKey(n=p * q, bits=(p * q).bit_length())
        try:
            secret = paillier.PaillierPrivateKey(public.raw, p, q)
        except ValueError as e:
            raise KeyGenerationError(str(e)) from None
        return cls(public, secret)


@dataclass(frozen=True)
class Ciphertext:
    value: int
    key_id: str

    def to_bytes(self) -> bytes:
        return encode_bigint(self.value)

    @classmethod
    def from_bytes(cls, buf: bytes, public: PublicKey, offset: int = 0) -> tuple["Ciphertext", int]:
        value, end = decode_bigint(buf, offset)
        if not 0 < value < public.nsquare:
            raise DataError("ciphertext outside Z_{N^2}")
        return cls(value, public.key_id), end


def keygen(bits: int = DEFAULT_KEYSIZE, seed: Optional[int] = None) -> PaillierKeypair:
    """Generate a keypair with an N of exactly ``bits`` bits.

    A seed makes generation reproducible (tests only); otherwise primes start
    from the system entropy source.
    """
    if bits < TEST_KEYSIZE or bits % 2:
        raise KeyGenerationError(f"key size must be even and >= {TEST_KEYSIZE}, got {bits}")
    if bits < DEFAULT_KEYSIZE:
        logger.warning("generating a %d-bit key; use %d bits outside tests", bits, DEFAULT_KEYSIZE)
    rng: RandomSource = random.Random(seed) if seed is not None else secrets.SystemRandom()
    half = bits // 2
    for _ in range(MAX_KEY_ATTEMPTS):
        p, q = _prime(half, rng), _prime(half, rng)
        n = p * q
        if p != q and n.bit_length() == bits and math.gcd(n, (p - 1) * (q - 1)) == 1:
            break
    else:
        raise KeyGenerationError("could not find a suitable prime pair")

    keypair = PaillierKeypair.from_primes(p, q)
    track_event("keypair_generated", bits=bits, key_id=keypair.key_id, seeded=seed is not None)
    return keypair


def _check_key(public: PublicKey, *cts: Ciphertext) -> None:
    for c in cts:
        if c.key_id != public.key_id:
            raise KeyMismatchError(
                f"ciphertext under key {c.key_id} used with key {public.key_id}"
            )


def _wrap(public: PublicKey, c: Ciphertext) -> paillier.EncryptedNumber:
    return paillier.EncryptedNumber(public.raw, c.value)


def encrypt(public: PublicKey, m: int, rng: Optional[RandomSource] = None) -> Ciphertext:
    """Probabilistic encryption of an integer in [0, N).

    ``rng`` draws the nonce (tests and experiments); without it phe draws one
    from the system source.
    """
    m = int(m)
    if not 0 <= m < public.n:
        raise PlaintextRangeError("plaintext outside [0, N)")
    nonce = None
    if rng is not None:
        while nonce is None or math.gcd(nonce, public.n) != 1:
            nonce = rng.randrange(1, public.n)
    return Ciphertext(public.raw.raw_encrypt(m, r_value=nonce), public.key_id)


def decrypt(keypair: PaillierKeypair, c: Ciphertext) -> int:
    public = keypair.public
    _check_key(public, c)
    if not 0 < c.value < public.nsquare:
        raise PlaintextRangeError("ciphertext outside Z_{N^2}")
    return keypair.secret.raw_decrypt(c.value)


def hom_add(a: Ciphertext, b: Ciphertext, public: PublicKey) -> Ciphertext:
    """E(a) * E(b) mod N^2 decrypts to (a + b) mod N."""
    _check_key(public, a, b)
    total = _wrap(public, a) + _wrap(public, b)
    return Ciphertext(total.ciphertext(be_secure=False), public.key_id)


def hom_scale(a: Ciphertext, b: int, public: PublicKey) -> Ciphertext:
    """E(a)^b decrypts to (a * b) mod N."""
    _check_key(public, a)
    b = int(b)
    if not 0 <= b < public.n:
        raise PlaintextRangeError("scalar outside [0, N)")
    enc = _wrap(public, a)
    if b <= public.raw.max_int:
        product = (enc * b).ciphertext(be_secure=False)
    else:
        # phe's encoder refuses scalars above max_int; the raw power does not
        product = enc._raw_mul(b)
    return Ciphertext(product, public.key_id)


@dataclass(frozen=True)
class FixedPointCodec:
    """Maps reals in [0, max_magnitude/scale] to integers round(x * scale)."""

    scale: int = 10**6
    max_magnitude: Optional[int] = None

    def __post_init__(self):
        if self.scale <= 0:
            raise PlaintextRangeError("scale must be positive")

    def for_key(self, public: PublicKey) -> "FixedPointCodec":
        return FixedPointCodec(self.scale, public.n - 1)

    def encode(self, x: float) -> int:
        if x < 0 or not math.isfinite(x):
            raise PlaintextRangeError(f"cannot encode {x!r}")
        m = math.floor(x * self.scale + 0.5)
        if self.max_magnitude is not None and m > self.max_magnitude:
            raise PlaintextRangeError(f"{x!r} overflows the plaintext range")
        return m

    def decode(self, m: int) -> float:
        return m / self.scale

    def check_budget(self, n_terms: int, max_multiplier: int, mask_bound: int) -> None:
        """Raise if n_terms encoded values in [0, 1] times max_multiplier plus
        a mask below mask_bound could reach the modulus."""
        if self.max_magnitude is None:
            return
        worst = n_terms * max_multiplier * self.scale + mask_bound
        if worst > self.max_magnitude:
            raise RangeOverflowError(
                f"aggregate bound {worst.bit_length()} bits does not fit the "
                f"{self.max_magnitude.bit_length()}-bit plaintext space"
            )


def save_keypair(path: Path | str, keypair: PaillierKeypair) -> None:
    doc = {
        "bits": keypair.public.bits,
        "n": hex(keypair.public.n),
        "p": hex(keypair.secret.p),
        "q": hex(keypair.secret.q),
        "key_id": keypair.key_id,
    }
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_keypair(path: Path | str) -> PaillierKeypair:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        keypair = PaillierKeypair.from_primes(int(doc["p"], 16), int(doc["q"], 16))
        if keypair.public.n != int(doc["n"], 16):
            raise ValueError("p * q does not match n")
    except (OSError, ValueError, KeyError, KeyGenerationError) as e:
        raise DataError(f"{path}: unreadable keypair ({e})") from None
    return keypair
