"""Two-party privacy-preserving socialized recommendation.

Bob (the social-network provider) holds the similarity scores and the Paillier
secret key. Alice (the recommender) holds the rating matrix. For one target
user the parties exchange three messages:

    1. Bob -> Alice   public key + encrypted similarity scores
    2. Alice -> Bob   masked encrypted degrees under random item tokens
    3. Bob -> Alice   token order by decreasing degree

Alice then maps tokens back to items locally. The sessions below are sans-IO
state machines; transports (``ppsr.transport``) move the frames.
"""

from __future__ import annotations

import enum
import hashlib
import logging
import random
import secrets
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from ppsr import wire
from ppsr.errors import (
    ConfigError,
    DataError,
    FramingError,
    NoNeighborsError,
    OutOfOrderError,
    ProtocolError,
    ProtocolViolation,
)
from ppsr.events import track_event
from ppsr.paillier import (
    Ciphertext,
    FixedPointCodec,
    PaillierKeypair,
    PublicKey,
    decrypt,
    encrypt,
    hom_add,
    hom_scale,
)
from ppsr.wire import MessageType

logger = logging.getLogger(__name__)

DEFAULT_MASK_BITS = 64


@dataclass(frozen=True)
class RankMatrix:
    """n_u x m integer ratings, 0 meaning unrated."""

    values: np.ndarray
    user_ids: tuple[int, ...]
    item_ids: tuple[int, ...]
    rank_max: int = 5

    def __post_init__(self):
        values = np.array(self.values, dtype=np.int64)
        user_ids, item_ids = tuple(self.user_ids), tuple(self.item_ids)
        if values.shape != (len(user_ids), len(item_ids)):
            raise DataError(
                f"rank matrix is {values.shape} for {len(user_ids)} users x {len(item_ids)} items"
            )
        if values.size and (values.min() < 0 or values.max() > self.rank_max):
            raise DataError(f"ranks must lie in [0, {self.rank_max}]")
        if len(set(user_ids)) != len(user_ids) or len(set(item_ids)) != len(item_ids):
            raise DataError("duplicate user or item ids")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "user_ids", user_ids)
        object.__setattr__(self, "item_ids", item_ids)
        object.__setattr__(self, "_user_index", {u: i for i, u in enumerate(user_ids)})
        object.__setattr__(self, "_item_index", {t: k for k, t in enumerate(item_ids)})

    def user_index(self, user_id: int) -> int:
        try:
            return self._user_index[user_id]
        except KeyError:
            raise DataError(f"user {user_id} has no rank row") from None

    def item_index(self, item_id: int) -> int:
        try:
            return self._item_index[item_id]
        except KeyError:
            raise DataError(f"unknown item {item_id}") from None

    def masked(self, user_ids: Iterable[int]) -> "RankMatrix":
        """Copy with the given users' rows zeroed."""
        values = self.values.copy()
        for u in user_ids:
            values[self.user_index(u)] = 0
        return RankMatrix(values, self.user_ids, self.item_ids, self.rank_max)


@dataclass(frozen=True)
class EncryptedScoreBatch:
    public: PublicKey
    target: int
    scores: tuple[tuple[int, Ciphertext], ...]


@dataclass(frozen=True)
class MaskedDegreeBatch:
    """Masked degrees under opaque tokens.

    ``mask`` and ``token_map`` stay with Alice; ``for_bob`` strips them.
    """

    entries: tuple[tuple[bytes, Ciphertext], ...]
    mask: Optional[int] = field(default=None, repr=False)
    token_map: Mapping[bytes, int] = field(default_factory=dict, repr=False)
    permutation_seed: Optional[int] = field(default=None, repr=False)

    def for_bob(self) -> "MaskedDegreeBatch":
        return MaskedDegreeBatch(self.entries)


class Provenance(str, enum.Enum):
    SOCIALIZED = "socialized"
    CLUSTERING = "clustering"
    MERGED = "merged"


@dataclass(frozen=True)
class CandidateList:
    items: tuple
    provenance: Provenance = Provenance.SOCIALIZED

    def __post_init__(self):
        items = tuple(self.items)
        if len(set(items)) != len(items):
            raise ProtocolViolation("candidate list has duplicate entries")
        object.__setattr__(self, "items", items)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def top(self, k: int) -> tuple:
        return self.items[:k]


# -- transcript -----------------------------------------------------------


@dataclass(frozen=True)
class TranscriptEntry:
    party: str
    direction: str
    msg_type: MessageType
    length: int
    digest: str
    payload: bytes = field(repr=False)


class ProtocolTranscript:
    """Ordered log of every frame each party sent or received."""

    def __init__(self):
        self.entries: list[TranscriptEntry] = []
        self.flags: set[str] = set()
        self._lock = threading.Lock()

    def record(self, party: str, direction: str, data: bytes) -> None:
        kind, payload = wire.parse_frame(data)
        entry = TranscriptEntry(
            party=party,
            direction=direction,
            msg_type=kind,
            length=len(payload),
            digest=hashlib.sha256(payload).hexdigest(),
            payload=payload,
        )
        with self._lock:
            self.entries.append(entry)

    def flag(self, name: str) -> None:
        with self._lock:
            self.flags.add(name)

    @property
    def degenerate(self) -> bool:
        return "degenerate" in self.flags

    def inbound(self, party: str) -> list[TranscriptEntry]:
        return [e for e in self.entries if e.party == party and e.direction == "received"]


_ALLOWED = {
    ("alice", "received"): {MessageType.SCORES, MessageType.TOKEN_ORDER},
    ("alice", "sent"): {MessageType.MASKED_DEGREES},
    ("bob", "received"): {MessageType.MASKED_DEGREES},
    ("bob", "sent"): {MessageType.SCORES, MessageType.TOKEN_ORDER},
}


def validate_transcript(transcript: ProtocolTranscript) -> None:
    """Check that each party only ever saw the message shapes it may see.

    Alice's inbound frames must parse as a public key with ciphertexts, or as
    a bare token list. Bob's inbound frames must parse as token/ciphertext
    pairs and nothing else, so no rank value or item id can reach him.
    """
    for e in transcript.entries:
        if e.msg_type not in _ALLOWED.get((e.party, e.direction), set()):
            raise ProtocolViolation(f"{e.party} {e.direction} a {e.msg_type.name} message")
        try:
            if e.msg_type is MessageType.SCORES:
                public, _, scores = wire.unpack_scores(e.payload)
                if any(not 0 < v < public.nsquare for _, v in scores):
                    raise ProtocolViolation("score outside the ciphertext space")
            elif e.msg_type is MessageType.MASKED_DEGREES:
                entries = wire.unpack_degrees(e.payload)
                if len({tok for tok, _ in entries}) != len(entries):
                    raise ProtocolViolation("repeated item token")
            else:
                tokens = wire.unpack_tokens(e.payload)
                if len(set(tokens)) != len(tokens):
                    raise ProtocolViolation("repeated token in order")
        except FramingError as err:
            raise ProtocolViolation(f"{e.party} {e.direction} malformed payload: {err}") from None


# -- protocol steps -------------------------------------------------------


def derive_seed(seed: int, target: int) -> int:
    """Per-session seed from an experiment seed and the target user."""
    return int(np.random.SeedSequence([seed, target]).generate_state(1, np.uint64)[0])


def _session_randomness(item_ids: Sequence[int], seed: Optional[int], mask_bits: int):
    """Mask, per-item tokens and presentation order for one run.

    Seeded runs are reproducible and meant for experiments; without a seed
    everything comes from the system entropy source.
    """
    rng = random.Random(seed) if seed is not None else secrets.SystemRandom()
    r = rng.randrange(2**mask_bits)
    tokens: dict[int, bytes] = {}
    seen: set[bytes] = set()
    for item in item_ids:
        tok = rng.getrandbits(128).to_bytes(16, "big")
        while tok in seen:
            tok = rng.getrandbits(128).to_bytes(16, "big")
        seen.add(tok)
        tokens[item] = tok
    order = list(item_ids)
    rng.shuffle(order)
    return r, tokens, order


def bob_send_similarities(
    target: int,
    table: Mapping[int, float],
    keypair: PaillierKeypair,
    codec: Optional[FixedPointCodec] = None,
) -> EncryptedScoreBatch:
    """Fixed-point encode and encrypt every score of the target's table."""
    codec = (codec or FixedPointCodec()).for_key(keypair.public)
    scores = tuple(
        (user, encrypt(keypair.public, codec.encode(score)))
        for user, score in sorted(table.items())
    )
    return EncryptedScoreBatch(keypair.public, target, scores)


def alice_compute_degrees(
    batch: EncryptedScoreBatch,
    rank: RankMatrix,
    target: int,
    codec: Optional[FixedPointCodec] = None,
    seed: Optional[int] = None,
    mask: Optional[int] = None,
    items: Optional[Sequence[int]] = None,
    mask_bits: int = DEFAULT_MASK_BITS,
) -> MaskedDegreeBatch:
    """Encrypted degree per item, one shared additive mask, fresh tokens.

    Degree(target, k) = sum_j Sim(target, j) * Rank[j, k]; zero ranks are
    skipped. ``mask`` overrides the drawn mask (the random stream is consumed
    either way).
    """
    public = batch.public
    neighbors = [(u, c) for u, c in batch.scores if u != target]
    if not neighbors:
        raise NoNeighborsError(f"target {target} has no neighbors to aggregate over")
    rows = [rank.user_index(u) for u, _ in neighbors]

    codec = (codec or FixedPointCodec()).for_key(public)
    codec.check_budget(len(neighbors), rank.rank_max, 2**mask_bits)

    item_ids = list(rank.item_ids if items is None else items)
    cols = {t: rank.item_index(t) for t in item_ids}
    r, tokens, order = _session_randomness(item_ids, seed, mask_bits)
    if mask is not None:
        if not 0 <= mask < 2**mask_bits:
            raise ConfigError(f"mask must lie in [0, 2^{mask_bits})")
        r = mask

    # c_j^v for every rank value v a neighbor actually used
    powers: list[dict[int, Ciphertext]] = []
    for (_, c), row in zip(neighbors, rows):
        used = {int(v) for v in np.unique(rank.values[row]) if v > 0}
        powers.append({v: hom_scale(c, v, public) for v in used})

    entries = []
    for item in order:
        k = cols[item]
        acc = encrypt(public, r)
        for p, row in zip(powers, rows):
            v = int(rank.values[row, k])
            if v:
                acc = hom_add(acc, p[v], public)
        entries.append((tokens[item], acc))

    token_map = {tokens[item]: item for item in item_ids}
    return MaskedDegreeBatch(tuple(entries), r, token_map, seed)


def _decrypt_and_rank(entries, keypair: PaillierKeypair) -> tuple[list[bytes], bool]:
    tokens = [tok for tok, _ in entries]
    if len(set(tokens)) != len(tokens):
        raise ProtocolViolation("repeated item token")
    values = [(decrypt(keypair, c), tok) for tok, c in entries]
    values.sort(key=lambda vt: (-vt[0], vt[1]))
    degenerate = len({v for v, _ in values}) <= 1
    return [tok for _, tok in values], degenerate


def bob_rank(batch: MaskedDegreeBatch, keypair: PaillierKeypair) -> CandidateList:
    """Decrypt, sort by decreasing degree (ties by token bytes), drop values."""
    order, _ = _decrypt_and_rank(batch.entries, keypair)
    return CandidateList(tuple(order), Provenance.SOCIALIZED)


def alice_resolve(candidates: CandidateList, token_map: Mapping[bytes, int]) -> CandidateList:
    items = []
    for tok in candidates:
        if tok not in token_map:
            raise ProtocolViolation(f"token {tok.hex()} was never issued")
        items.append(token_map[tok])
    return CandidateList(tuple(items), Provenance.SOCIALIZED)


def merge_lists(socialized: CandidateList, clustering: CandidateList, top_k: int) -> CandidateList:
    """Alternate turns starting with the socialized list; a turn takes that
    list's next unseen item. Truncated to ``top_k``."""
    if top_k <= 0:
        raise ConfigError("top_k must be positive")
    sources = [iter(socialized.items), iter(clustering.items)]
    exhausted = [False, False]
    seen: set = set()
    out: list = []
    turn = 0
    while len(out) < top_k and not all(exhausted):
        if not exhausted[turn]:
            for item in sources[turn]:
                if item not in seen:
                    seen.add(item)
                    out.append(item)
                    break
            else:
                exhausted[turn] = True
        turn = 1 - turn
    return CandidateList(tuple(out), Provenance.MERGED)


def plaintext_socialized_ranking(
    table: Mapping[int, float],
    rank: RankMatrix,
    target: int,
    codec: Optional[FixedPointCodec] = None,
    seed: Optional[int] = None,
    items: Optional[Sequence[int]] = None,
    mask_bits: int = DEFAULT_MASK_BITS,
) -> tuple[CandidateList, bool]:
    """The list the protocol would return, computed without encryption.

    Uses the same encoding, tokens and tie rule as a protocol run with the
    same seed. Returns (list, degenerate).
    """
    codec = codec or FixedPointCodec()
    neighbors = [(u, codec.encode(s)) for u, s in sorted(table.items()) if u != target]
    if not neighbors:
        raise NoNeighborsError(f"target {target} has no neighbors to aggregate over")
    rows = np.array([rank.user_index(u) for u, _ in neighbors], dtype=np.int64)
    weights = [e for _, e in neighbors]
    item_ids = list(rank.item_ids if items is None else items)
    _, tokens, _ = _session_randomness(item_ids, seed, mask_bits)

    scored = []
    for item in item_ids:
        column = rank.values[rows, rank.item_index(item)]
        degree = sum(w * int(v) for w, v in zip(weights, column) if v)
        scored.append((degree, tokens[item], item))
    scored.sort(key=lambda d: (-d[0], d[1]))
    degenerate = len({d for d, _, _ in scored}) <= 1
    return CandidateList(tuple(i for _, _, i in scored), Provenance.SOCIALIZED), degenerate


# -- sessions -------------------------------------------------------------


class BobSession:
    """Bob's side of one run: send scores, then rank one degree batch."""

    def __init__(
        self,
        keypair: PaillierKeypair,
        target: int,
        table: Mapping[int, float],
        codec: Optional[FixedPointCodec] = None,
        transcript: Optional[ProtocolTranscript] = None,
    ):
        self.keypair = keypair
        self.target = target
        self.table = dict(table)
        self.codec = codec
        self.transcript = transcript if transcript is not None else ProtocolTranscript()
        self.state = "new"

    def start(self) -> bytes:
        if self.state != "new":
            raise OutOfOrderError("scores were already sent")
        batch = bob_send_similarities(self.target, self.table, self.keypair, self.codec)
        payload = wire.pack_scores(
            batch.public, self.target, [(u, c.value) for u, c in batch.scores]
        )
        data = wire.frame(MessageType.SCORES, payload)
        self.transcript.record("bob", "sent", data)
        self.state = "awaiting_degrees"
        track_event("session_opened", target=self.target, neighbors=len(batch.scores))
        return data

    def handle(self, data: bytes) -> bytes:
        kind, payload = wire.parse_frame(data)
        self.transcript.record("bob", "received", data)
        if self.state != "awaiting_degrees" or kind is not MessageType.MASKED_DEGREES:
            raise OutOfOrderError(f"bob in state {self.state} got {kind.name}")
        public = self.keypair.public
        entries = []
        for tok, value in wire.unpack_degrees(payload):
            if not 0 < value < public.nsquare:
                raise ProtocolViolation("degree outside the ciphertext space")
            entries.append((tok, Ciphertext(value, public.key_id)))
        order, degenerate = _decrypt_and_rank(entries, self.keypair)
        if degenerate:
            self.transcript.flag("degenerate")
            logger.info("all masked degrees for user %s are equal", self.target)
        out = wire.frame(MessageType.TOKEN_ORDER, wire.pack_tokens(order))
        self.transcript.record("bob", "sent", out)
        self.state = "done"
        track_event("degrees_ranked", target=self.target, items=len(order), degenerate=degenerate)
        return out


class AliceSession:
    """Alice's side of one run: answer the scores, then resolve the order."""

    def __init__(
        self,
        rank: RankMatrix,
        target: int,
        codec: Optional[FixedPointCodec] = None,
        seed: Optional[int] = None,
        mask: Optional[int] = None,
        items: Optional[Sequence[int]] = None,
        mask_bits: int = DEFAULT_MASK_BITS,
        transcript: Optional[ProtocolTranscript] = None,
    ):
        self.rank = rank
        self.target = target
        self.codec = codec
        self.seed = seed
        self.mask = mask
        self.items = items
        self.mask_bits = mask_bits
        self.transcript = transcript if transcript is not None else ProtocolTranscript()
        self.state = "awaiting_scores"
        self.batch: Optional[MaskedDegreeBatch] = None
        self.result: Optional[CandidateList] = None

    @property
    def token_map(self) -> Mapping[bytes, int]:
        return self.batch.token_map if self.batch else {}

    def handle(self, data: bytes) -> Optional[bytes]:
        kind, payload = wire.parse_frame(data)
        self.transcript.record("alice", "received", data)
        if self.state == "awaiting_scores" and kind is MessageType.SCORES:
            return self._on_scores(payload)
        if self.state == "awaiting_order" and kind is MessageType.TOKEN_ORDER:
            self._on_order(payload)
            return None
        raise OutOfOrderError(f"alice in state {self.state} got {kind.name}")

    def _on_scores(self, payload: bytes) -> bytes:
        public, target, scores = wire.unpack_scores(payload)
        if target != self.target:
            raise ProtocolViolation(f"scores for user {target}, session is for {self.target}")
        batch = EncryptedScoreBatch(
            public, target, tuple((u, Ciphertext(v, public.key_id)) for u, v in scores)
        )
        self.batch = alice_compute_degrees(
            batch,
            self.rank,
            self.target,
            codec=self.codec,
            seed=self.seed,
            mask=self.mask,
            items=self.items,
            mask_bits=self.mask_bits,
        )
        out = wire.frame(
            MessageType.MASKED_DEGREES,
            wire.pack_degrees([(tok, c.value) for tok, c in self.batch.entries]),
        )
        self.transcript.record("alice", "sent", out)
        self.state = "awaiting_order"
        return out

    def _on_order(self, payload: bytes) -> None:
        tokens = wire.unpack_tokens(payload)
        if len(tokens) != len(self.batch.entries):
            raise ProtocolViolation(
                f"order has {len(tokens)} tokens, {len(self.batch.entries)} were sent"
            )
        self.result = alice_resolve(CandidateList(tuple(tokens)), self.batch.token_map)
        self.state = "done"


SimilaritySource = Callable[[int], Mapping[int, float]]


class BobParty:
    """Long-lived social-provider state: keypair plus a similarity source."""

    def __init__(
        self,
        keypair: PaillierKeypair,
        similarities: SimilaritySource,
        codec: Optional[FixedPointCodec] = None,
    ):
        self.keypair = keypair
        self.similarities = similarities
        self.codec = codec

    @classmethod
    def from_profiles(cls, keypair, profiles, weights, codec=None) -> "BobParty":
        from ppsr.social_similarity import similarity_table

        return cls(keypair, lambda target: similarity_table(target, profiles, weights), codec)

    def open_session(
        self, target: int, transcript: Optional[ProtocolTranscript] = None
    ) -> BobSession:
        return BobSession(self.keypair, target, self.similarities(target), self.codec, transcript)


class AliceParty:
    """Long-lived recommender state: the rank matrix and session settings."""

    def __init__(
        self,
        rank: RankMatrix,
        codec: Optional[FixedPointCodec] = None,
        seed: Optional[int] = None,
        items: Optional[Sequence[int]] = None,
        mask_bits: int = DEFAULT_MASK_BITS,
    ):
        self.rank = rank
        self.codec = codec
        self.seed = seed
        self.items = items
        self.mask_bits = mask_bits
        self.last_session: Optional[AliceSession] = None

    def open_session(
        self,
        target: int,
        transcript: Optional[ProtocolTranscript] = None,
        mask: Optional[int] = None,
    ) -> AliceSession:
        seed = None if self.seed is None else derive_seed(self.seed, target)
        session = AliceSession(
            self.rank,
            target,
            codec=self.codec,
            seed=seed,
            mask=mask,
            items=self.items,
            mask_bits=self.mask_bits,
            transcript=transcript,
        )
        self.last_session = session
        return session


def run_protocol(
    alice: AliceParty,
    bob: Optional[BobParty],
    target: int,
    transport=None,
    mask: Optional[int] = None,
) -> tuple[CandidateList, ProtocolTranscript]:
    """Run all three messages for ``target`` over ``transport``.

    The default transport is in-process. Returns Alice's resolved list and
    the transcript of every frame.
    """
    if transport is None:
        from ppsr.transport import InProcessTransport

        transport = InProcessTransport()

    transcript = ProtocolTranscript()
    session = alice.open_session(target, transcript, mask=mask)
    link = transport.connect(bob, target, transcript)
    try:
        reply = session.handle(link.recv())
        link.send(reply)
        session.handle(link.recv())
    except (ProtocolError, ConnectionError) as e:
        # close() joins Bob's side, so any error it hit is visible now
        link.close()
        if link.peer_error is not None:
            raise link.peer_error from e
        if isinstance(e, ProtocolError):
            raise
        raise ProtocolError(f"transport failed: {e}") from e
    except Exception:
        link.close()
        raise
    link.close()
    if link.peer_error is not None:
        raise link.peer_error
    validate_transcript(transcript)
    return session.result, transcript
