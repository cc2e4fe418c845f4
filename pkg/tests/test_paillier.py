"""Tests for the Paillier cryptosystem and fixed-point codec."""

import json
import random

import pytest
import sympy
from phe import paillier

from ppsr.errors import (
    DataError,
    KeyGenerationError,
    KeyMismatchError,
    PlaintextRangeError,
    RangeOverflowError,
)
from ppsr.paillier import (
    Ciphertext,
    FixedPointCodec,
    PublicKey,
    decode_bigint,
    decrypt,
    encode_bigint,
    encrypt,
    hom_add,
    hom_scale,
    keygen,
    load_keypair,
    save_keypair,
)


class TestKeygen:
    def test_modulus_has_requested_bits(self, keypair):
        assert keypair.public.n.bit_length() == 512
        assert keypair.public.g == keypair.public.n + 1

    def test_seeded_keys_are_reproducible(self, keypair):
        again = keygen(512, seed=20240611)
        assert again.public.n == keypair.public.n
        assert again.key_id == keypair.key_id

    def test_odd_or_tiny_sizes_rejected(self):
        with pytest.raises(KeyGenerationError):
            keygen(256)
        with pytest.raises(KeyGenerationError):
            keygen(513)

    def test_save_and_load(self, keypair, tmp_path):
        path = tmp_path / "key.json"
        save_keypair(path, keypair)
        loaded = load_keypair(path)
        assert loaded.public == keypair.public
        assert decrypt(loaded, encrypt(keypair.public, 99)) == 99
        assert {loaded.secret.p, loaded.secret.q} == {keypair.secret.p, keypair.secret.q}

    def test_load_rejects_garbage(self, tmp_path):
        path = tmp_path / "key.json"
        path.write_text("{}")
        with pytest.raises(DataError):
            load_keypair(path)

    def test_load_rejects_mismatched_modulus(self, keypair, other_keypair, tmp_path):
        path = tmp_path / "key.json"
        save_keypair(path, keypair)
        doc = json.loads(path.read_text())
        doc["n"] = hex(other_keypair.public.n)
        path.write_text(json.dumps(doc))
        with pytest.raises(DataError):
            load_keypair(path)

    def test_primes_are_prime(self, keypair):
        assert sympy.isprime(keypair.secret.p)
        assert sympy.isprime(keypair.secret.q)
        assert keypair.secret.p * keypair.secret.q == keypair.public.n


class TestEncryption:
    def test_roundtrip_on_random_plaintexts(self, keypair):
        rng = random.Random(1)
        n = keypair.public.n
        for m in [0, 1, 42, n - 1] + [rng.randrange(n) for _ in range(1000)]:
            assert decrypt(keypair, encrypt(keypair.public, m)) == m

    def test_seeded_nonce_is_reproducible(self, keypair):
        a = encrypt(keypair.public, 42, random.Random(9))
        b = encrypt(keypair.public, 42, random.Random(9))
        assert a == b
        assert decrypt(keypair, a) == 42

    def test_interoperates_with_phe(self, keypair):
        """Ciphertexts are plain python-paillier ciphertexts under the same key."""
        theirs = keypair.public.raw.encrypt(1234)
        ours = Ciphertext(theirs.ciphertext(), keypair.key_id)
        assert decrypt(keypair, ours) == 1234
        back = paillier.EncryptedNumber(keypair.public.raw, encrypt(keypair.public, 77).value)
        assert keypair.secret.decrypt(back) == 77

    def test_encryption_is_randomized(self, keypair):
        values = {encrypt(keypair.public, 42).value for _ in range(100)}
        assert len(values) == 100

    def test_tampered_ciphertext_changes_plaintext(self, keypair):
        public = keypair.public
        c = encrypt(public, 42)
        tampered = Ciphertext(c.value * public.g % public.nsquare, c.key_id)
        assert decrypt(keypair, tampered) == 43

    def test_plaintext_out_of_range(self, keypair):
        with pytest.raises(PlaintextRangeError):
            encrypt(keypair.public, keypair.public.n)
        with pytest.raises(PlaintextRangeError):
            encrypt(keypair.public, -1)

    def test_foreign_ciphertext_rejected(self, keypair, other_keypair):
        c = encrypt(other_keypair.public, 5)
        with pytest.raises(KeyMismatchError):
            decrypt(keypair, c)
        with pytest.raises(KeyMismatchError):
            hom_add(c, encrypt(keypair.public, 1), keypair.public)


class TestHomomorphism:
    def test_add(self, keypair):
        pk = keypair.public
        assert decrypt(keypair, hom_add(encrypt(pk, 2), encrypt(pk, 3), pk)) == 5
        assert decrypt(keypair, hom_add(encrypt(pk, 9), encrypt(pk, 0), pk)) == 9

    def test_add_wraps_modulo_n(self, keypair):
        pk = keypair.public
        rng = random.Random(2)
        for _ in range(100):
            a, b = rng.randrange(pk.n), rng.randrange(pk.n)
            assert decrypt(keypair, hom_add(encrypt(pk, a), encrypt(pk, b), pk)) == (a + b) % pk.n

    def test_scale(self, keypair):
        pk = keypair.public
        assert decrypt(keypair, hom_scale(encrypt(pk, 7), 6, pk)) == 42
        assert decrypt(keypair, hom_scale(encrypt(pk, 7), 1, pk)) == 7
        assert decrypt(keypair, hom_scale(encrypt(pk, 7), 0, pk)) == 0

    def test_scale_by_large_scalars(self, keypair):
        pk = keypair.public
        for b in (pk.raw.max_int + 1, pk.n // 2, pk.n - 2):
            assert decrypt(keypair, hom_scale(encrypt(pk, 3), b, pk)) == 3 * b % pk.n

    @pytest.mark.parametrize("seed", range(50))
    def test_weighted_sum_chain(self, keypair, seed):
        """prod_j E(a_j)^b_j decrypts to sum_j a_j * b_j."""
        pk = keypair.public
        rng = random.Random(seed)
        pairs = [(rng.randrange(10**6), rng.randrange(6)) for _ in range(20)]
        acc = encrypt(pk, 0)
        for a, b in pairs:
            acc = hom_add(acc, hom_scale(encrypt(pk, a), b, pk), pk)
        assert decrypt(keypair, acc) == sum(a * b for a, b in pairs) % pk.n


class TestFixedPointCodec:
    def test_rounding(self):
        codec = FixedPointCodec()
        assert codec.encode(0) == 0
        assert codec.encode(0.5179) == 517900
        assert codec.decode(517900) == pytest.approx(0.5179)

    def test_roundtrip_error_bound(self):
        codec = FixedPointCodec()
        rng = random.Random(4)
        for _ in range(1000):
            x = rng.random()
            assert abs(codec.decode(codec.encode(x)) - x) <= 5e-7 + 1e-12

    def test_linearity_up_to_rounding(self):
        codec = FixedPointCodec()
        rng = random.Random(5)
        for _ in range(200):
            x, y = rng.random(), rng.random()
            assert abs(codec.encode(x) + codec.encode(y) - codec.encode(x + y)) <= 1

    def test_negative_and_non_finite_rejected(self):
        codec = FixedPointCodec()
        for bad in (-0.1, float("nan"), float("inf")):
            with pytest.raises(PlaintextRangeError):
                codec.encode(bad)

    def test_budget_against_key(self, keypair):
        codec = FixedPointCodec().for_key(keypair.public)
        codec.check_budget(1000, 5, 2**64)
        with pytest.raises(RangeOverflowError):
            FixedPointCodec(scale=2**510).for_key(keypair.public).check_budget(10, 5, 2**64)


class TestEncoding:
    def test_bigint_framing(self):
        buf = encode_bigint(0) + encode_bigint(2**100 + 3)
        first, offset = decode_bigint(buf)
        second, end = decode_bigint(buf, offset)
        assert (first, second, end) == (0, 2**100 + 3, len(buf))

    def test_truncated_bigint(self):
        with pytest.raises(DataError):
            decode_bigint(encode_bigint(2**64)[:-1])

    def test_public_key_bytes(self, keypair):
        key, end = PublicKey.from_bytes(keypair.public.to_bytes())
        assert key == keypair.public
        assert end == len(keypair.public.to_bytes())
