"""RSA blind signatures and hash commitments.

Textbook RSA without padding: the blinding algebra needs the raw
multiplicative structure. Keys are test-scale by default and
deterministic in the supplied random stream.
"""
from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from math import lcm

from Crypto.Util.number import GCD, getPrime, inverse

from services.errors import NotAUnit, OutOfRange

DEFAULT_EXPONENT = 65537


@dataclass(frozen=True)
class RsaPublicKey:
    n: int
    e: int


@dataclass(frozen=True)
class RsaKeyPair:
    n: int
    e: int
    d: int

    @property
    def public(self) -> RsaPublicKey:
        return RsaPublicKey(self.n, self.e)


@dataclass(frozen=True)
class BlindSignature:
    h: int
    r: int
    h_blinded: int
    s_blinded: int
    s: int


def _encode(part: bytes | str | int) -> bytes:
    if isinstance(part, bytes):
        tag, body = b"b", part
    elif isinstance(part, str):
        tag, body = b"s", part.encode("utf-8")
    else:
        tag, body = b"i", str(int(part)).encode("ascii")
    return tag + len(body).to_bytes(8, "big") + body


def digest(*parts: bytes | str | int) -> bytes:
    """SHA-256 over a length-prefixed encoding of the parts."""
    return hashlib.sha256(b"".join(_encode(part) for part in parts)).digest()


def commitment(message: bytes | str | int, nonce: bytes | str | int) -> bytes:
    return digest(message, nonce)


def commit_open(c: bytes, message: bytes | str | int, nonce: bytes | str | int) -> bool:
    return commitment(message, nonce) == c


def hash_to_int(value: bytes, n: int) -> int:
    return int.from_bytes(value, "big") % n


def hash_public_key(key: RsaPublicKey, modulus: int) -> int:
    """h = hash(N_i, e_i) as an integer mod the signer's modulus."""
    return hash_to_int(digest(key.n, key.e), modulus)


def _choose_exponent(carmichael: int) -> int | None:
    if DEFAULT_EXPONENT < carmichael and GCD(DEFAULT_EXPONENT, carmichael) == 1:
        return DEFAULT_EXPONENT
    for e in range(3, carmichael, 2):
        if GCD(e, carmichael) == 1:
            return e
    return None


def keypair_from_primes(p: int, q: int, e: int | None = None) -> RsaKeyPair:
    if p == q:
        raise ValueError("primes must be distinct")
    carmichael = lcm(p - 1, q - 1)
    if e is None:
        e = _choose_exponent(carmichael)
        if e is None:
            raise ValueError("no usable public exponent")
    if GCD(e, carmichael) != 1:
        raise ValueError(f"e={e} is not invertible mod {carmichael}")
    return RsaKeyPair(n=p * q, e=e, d=inverse(e, carmichael))


def keygen(bits: int, rng: random.Random) -> RsaKeyPair:
    if bits < 16:
        raise ValueError("key size must be at least 16 bits")
    half = bits // 2
    while True:
        p = getPrime(half, randfunc=rng.randbytes)
        q = getPrime(bits - half, randfunc=rng.randbytes)
        if p == q:
            continue
        e = _choose_exponent(lcm(p - 1, q - 1))
        if e is not None:
            return keypair_from_primes(p, q, e)


def random_unit(n: int, rng: random.Random) -> int:
    while True:
        r = rng.randrange(2, n)
        if GCD(r, n) == 1:
            return r


def blind(h: int, r: int, pk: RsaPublicKey) -> int:
    if GCD(r, pk.n) != 1:
        raise NotAUnit(f"blinding factor shares a factor with N={pk.n}")
    return (h * pow(r, pk.e, pk.n)) % pk.n


def sign(x: int, sk: RsaKeyPair) -> int:
    if not 0 <= x < sk.n:
        raise OutOfRange(f"{x} outside [0, {sk.n})")
    return pow(x, sk.d, sk.n)


def unblind(s_blinded: int, r: int, n: int) -> int:
    if GCD(r, n) != 1:
        raise NotAUnit(f"blinding factor shares a factor with N={n}")
    return (s_blinded * inverse(r, n)) % n


def verify(h: int, s: int, pk: RsaPublicKey) -> bool:
    return pow(s, pk.e, pk.n) == h % pk.n


def blind_signature(h: int, r: int, sk: RsaKeyPair) -> BlindSignature:
    """Run the whole requester/signer exchange for one message."""
    h_blinded = blind(h, r, sk.public)
    s_blinded = sign(h_blinded, sk)
    return BlindSignature(h=h, r=r, h_blinded=h_blinded, s_blinded=s_blinded, s=unblind(s_blinded, r, sk.n))


def plausible_public_key(n: int, e: int) -> bool:
    # Range and parity only; a full validity proof is not attempted.
    return n > 3 and n % 2 == 1 and 3 <= e < n and e % 2 == 1
