"""Tests for the two-party socialized ranking protocol."""

import numpy as np
import pytest

from ppsr import wire
from ppsr.errors import (
    ConfigError,
    DataError,
    NoNeighborsError,
    OutOfOrderError,
    ProtocolViolation,
    RangeOverflowError,
)
from ppsr.paillier import FixedPointCodec, decrypt
from ppsr.protocol import (
    AliceParty,
    AliceSession,
    BobParty,
    BobSession,
    CandidateList,
    Provenance,
    ProtocolTranscript,
    RankMatrix,
    alice_compute_degrees,
    alice_resolve,
    bob_rank,
    bob_send_similarities,
    derive_seed,
    merge_lists,
    plaintext_socialized_ranking,
    run_protocol,
    validate_transcript,
)
from ppsr.transport import InProcessTransport, SocketTransport
from ppsr.wire import MessageType

TARGET = 1


def _instance(seed, n_u=5, m=6):
    rng = np.random.default_rng(seed)
    user_ids = tuple(range(1, n_u + 1))
    item_ids = tuple(range(100, 100 + m))
    rank = RankMatrix(rng.integers(0, 6, (n_u, m)), user_ids, item_ids)
    table = {u: float(rng.random()) for u in user_ids if u != TARGET}
    return rank, table


def _bob(keypair, table):
    return BobParty(keypair, lambda target: table)


def _oracle_order(table, rank, token_map):
    """Items by decreasing sum_j encode(Sim_j) * Rank[j, k], ties by token bytes."""
    codec = FixedPointCodec()
    token_of = {item: tok for tok, item in token_map.items()}
    degree = {}
    for item in rank.item_ids:
        k = rank.item_index(item)
        degree[item] = sum(
            codec.encode(s) * int(rank.values[rank.user_index(u), k]) for u, s in table.items()
        )
    return tuple(sorted(rank.item_ids, key=lambda t: (-degree[t], token_of[t])))


@pytest.fixture
def hand_instance():
    rank = RankMatrix([[0, 0], [4, 2], [0, 2]], (1, 2, 3), (10, 20))
    return rank, {2: 0.5, 3: 0.25}


class TestProtocolSteps:
    def test_scores_decrypt_to_encoded_similarities(self, keypair):
        batch = bob_send_similarities(TARGET, {2: 0.5, 3: 0.25}, keypair)
        assert [(u, decrypt(keypair, c)) for u, c in batch.scores] == [(2, 500000), (3, 250000)]

    def test_zero_similarities_encrypt_zero(self, keypair):
        batch = bob_send_similarities(TARGET, {2: 0.0, 3: 0.0}, keypair)
        assert all(decrypt(keypair, c) == 0 for _, c in batch.scores)

    def test_degrees_by_hand(self, keypair, hand_instance):
        rank, table = hand_instance
        scores = bob_send_similarities(TARGET, table, keypair)
        degrees = alice_compute_degrees(scores, rank, TARGET, seed=5)
        unmasked = {
            degrees.token_map[tok]: decrypt(keypair, c) - degrees.mask
            for tok, c in degrees.entries
        }
        assert unmasked == {10: 2_000_000, 20: 1_500_000}
        assert FixedPointCodec().decode(unmasked[10]) == pytest.approx(2.0)

        order = bob_rank(degrees.for_bob(), keypair)
        assert alice_resolve(order, degrees.token_map).items == (10, 20)

    def test_unrated_item_degree_is_the_mask(self, keypair):
        rank = RankMatrix([[0, 0], [0, 3], [0, 1]], (1, 2, 3), (10, 20))
        scores = bob_send_similarities(TARGET, {2: 0.5, 3: 0.25}, keypair)
        degrees = alice_compute_degrees(scores, rank, TARGET, seed=6)
        by_item = {degrees.token_map[tok]: c for tok, c in degrees.entries}
        assert decrypt(keypair, by_item[10]) == degrees.mask

    def test_degrees_match_plaintext_sum_exactly(self, keypair):
        rank, table = _instance(3)
        codec = FixedPointCodec()
        scores = bob_send_similarities(TARGET, table, keypair)
        degrees = alice_compute_degrees(scores, rank, TARGET, seed=3)
        for tok, c in degrees.entries:
            k = rank.item_index(degrees.token_map[tok])
            expected = sum(
                codec.encode(s) * int(rank.values[rank.user_index(u), k]) for u, s in table.items()
            )
            assert decrypt(keypair, c) - degrees.mask == expected

    def test_bob_copy_carries_no_alice_secrets(self, keypair, hand_instance):
        rank, table = hand_instance
        degrees = alice_compute_degrees(bob_send_similarities(TARGET, table, keypair), rank, TARGET)
        stripped = degrees.for_bob()
        assert stripped.entries == degrees.entries
        assert stripped.mask is None
        assert stripped.token_map == {}

    def test_ties_break_by_token_bytes(self, keypair):
        rank = RankMatrix([[0, 0, 0], [2, 2, 2]], (1, 2), (10, 20, 30))
        scores = bob_send_similarities(TARGET, {2: 0.5}, keypair)
        degrees = alice_compute_degrees(scores, rank, TARGET, seed=8)
        order = bob_rank(degrees, keypair)
        assert list(order) == sorted(tok for tok, _ in degrees.entries)

    def test_single_item(self, keypair, hand_instance):
        rank, table = hand_instance
        degrees = alice_compute_degrees(
            bob_send_similarities(TARGET, table, keypair), rank, TARGET, items=[20]
        )
        assert len(bob_rank(degrees, keypair)) == 1

    def test_no_neighbors(self, keypair, hand_instance):
        rank, _ = hand_instance
        with pytest.raises(NoNeighborsError):
            alice_compute_degrees(bob_send_similarities(TARGET, {}, keypair), rank, TARGET)

    def test_range_budget_checked_at_setup(self, keypair):
        rank, table = _instance(4)
        scores = bob_send_similarities(TARGET, table, keypair)
        with pytest.raises(RangeOverflowError):
            alice_compute_degrees(scores, rank, TARGET, codec=FixedPointCodec(scale=2**508))

    def test_mask_override_must_fit(self, keypair, hand_instance):
        rank, table = hand_instance
        scores = bob_send_similarities(TARGET, table, keypair)
        with pytest.raises(ConfigError):
            alice_compute_degrees(scores, rank, TARGET, mask=2**64)

    def test_unknown_token_rejected(self):
        with pytest.raises(ProtocolViolation):
            alice_resolve(CandidateList((b"\x01" * 16,)), {b"\x02" * 16: 3})

    def test_resolve(self):
        tok_a, tok_b = b"\x01" * 16, b"\x02" * 16
        resolved = alice_resolve(CandidateList((tok_a, tok_b)), {tok_a: 3, tok_b: 7})
        assert resolved.items == (3, 7)
        assert alice_resolve(CandidateList(()), {}).items == ()


class TestMergeLists:
    def test_round_robin_skips_seen_items(self):
        soc = CandidateList(("a", "b", "c"))
        clus = CandidateList(("x", "b", "y"), Provenance.CLUSTERING)
        merged = merge_lists(soc, clus, 4)
        assert merged.items == ("a", "x", "b", "y")
        assert merged.provenance is Provenance.MERGED

    def test_empty_clustering_list(self):
        soc = CandidateList(("a", "b", "c"))
        assert merge_lists(soc, CandidateList(()), 2).items == ("a", "b")

    def test_identical_lists(self):
        items = ("a", "b", "c", "d")
        assert merge_lists(CandidateList(items), CandidateList(items), 3).items == items[:3]

    def test_short_lists_give_short_result(self):
        assert merge_lists(CandidateList(("a",)), CandidateList(("b",)), 5).items == ("a", "b")

    def test_top_k_must_be_positive(self):
        with pytest.raises(ConfigError):
            merge_lists(CandidateList(()), CandidateList(()), 0)

    def test_duplicates_rejected(self):
        with pytest.raises(ProtocolViolation):
            CandidateList(("a", "a"))


class TestRunProtocol:
    @pytest.mark.parametrize("seed", range(50))
    def test_matches_plaintext_oracle(self, keypair, seed):
        """Random instances give the oracle order under the same tokens."""
        rank, table = _instance(seed, n_u=2 + (seed * 7) % 19, m=1 + (seed * 11) % 30)
        alice = AliceParty(rank, seed=seed)
        result, transcript = run_protocol(alice, _bob(keypair, table), TARGET)
        assert result.items == _oracle_order(table, rank, alice.last_session.token_map)

        twin, degenerate = plaintext_socialized_ranking(
            table, rank, TARGET, seed=derive_seed(seed, TARGET)
        )
        assert twin.items == result.items
        assert degenerate == transcript.degenerate

    def test_instances_span_twenty_users_and_thirty_items(self):
        shapes = {(2 + (s * 7) % 19, 1 + (s * 11) % 30) for s in range(50)}
        assert max(u for u, _ in shapes) == 20
        assert max(m for _, m in shapes) == 30

    def test_order_does_not_depend_on_mask(self, keypair):
        rank, table = _instance(5)
        alice = AliceParty(rank, seed=5)
        bob = _bob(keypair, table)
        low, _ = run_protocol(alice, bob, TARGET, mask=0)
        high, _ = run_protocol(alice, bob, TARGET, mask=2**64 - 1)
        assert low.items == high.items

    def test_fresh_tokens_per_seed(self, keypair):
        rank, table = _instance(6)
        bob = _bob(keypair, table)
        first = AliceParty(rank, seed=1)
        second = AliceParty(rank, seed=2)
        run_protocol(first, bob, TARGET)
        run_protocol(second, bob, TARGET)
        assert not set(first.last_session.token_map) & set(second.last_session.token_map)

    def test_unseeded_run_ranks_every_item(self, keypair):
        rank, table = _instance(7)
        alice = AliceParty(rank)
        result, _ = run_protocol(alice, _bob(keypair, table), TARGET)
        assert sorted(result) == sorted(rank.item_ids)
        assert result.items == _oracle_order(table, rank, alice.last_session.token_map)

    def test_socket_and_in_process_agree(self, keypair):
        rank, table = _instance(8)
        bob = _bob(keypair, table)
        via_queue, _ = run_protocol(AliceParty(rank, seed=8), bob, TARGET, InProcessTransport(10))
        via_socket, transcript = run_protocol(
            AliceParty(rank, seed=8), bob, TARGET, SocketTransport(timeout=10)
        )
        assert via_queue.items == via_socket.items
        assert len(transcript.entries) == 6

    def test_zero_similarities_are_degenerate(self, keypair):
        rank, _ = _instance(9)
        table = {u: 0.0 for u in rank.user_ids if u != TARGET}
        alice = AliceParty(rank, seed=9)
        result, transcript = run_protocol(alice, _bob(keypair, table), TARGET)
        assert transcript.degenerate
        token_of = {item: tok for tok, item in alice.last_session.token_map.items()}
        assert result.items == tuple(sorted(rank.item_ids, key=token_of.get))

    def test_no_neighbors_aborts(self, keypair):
        rank, _ = _instance(10)
        with pytest.raises(NoNeighborsError):
            run_protocol(AliceParty(rank, seed=1), _bob(keypair, {}), TARGET)

    def test_bob_failure_reaches_alice(self, keypair):
        rank, _ = _instance(11)

        def no_profile(target):
            raise DataError(f"unknown target user {target}")

        with pytest.raises(DataError, match="unknown target"):
            run_protocol(AliceParty(rank, seed=1), BobParty(keypair, no_profile), TARGET)

    def test_bob_failure_reaches_alice_without_a_timeout(self, keypair):
        rank, _ = _instance(11)

        def no_profile(target):
            raise DataError(f"unknown target user {target}")

        for transport in (InProcessTransport(), SocketTransport()):
            assert transport.timeout is None
            with pytest.raises(DataError, match="unknown target"):
                run_protocol(
                    AliceParty(rank, seed=1), BobParty(keypair, no_profile), TARGET, transport
                )

    def test_transcript_only_carries_allowed_messages(self, keypair):
        rank, table = _instance(12)
        _, transcript = run_protocol(AliceParty(rank, seed=12), _bob(keypair, table), TARGET)
        assert {e.msg_type for e in transcript.inbound("bob")} == {MessageType.MASKED_DEGREES}
        assert {e.msg_type for e in transcript.inbound("alice")} == {
            MessageType.SCORES,
            MessageType.TOKEN_ORDER,
        }
        validate_transcript(transcript)


class TestSessions:
    def test_replayed_degrees_are_out_of_order(self, keypair, hand_instance):
        rank, table = hand_instance
        bob = BobSession(keypair, TARGET, table)
        alice = AliceSession(rank, TARGET, seed=3)
        degrees = alice.handle(bob.start())
        alice.handle(bob.handle(degrees))
        assert alice.result.items == (10, 20)
        with pytest.raises(OutOfOrderError):
            bob.handle(degrees)

    def test_scores_sent_once(self, keypair, hand_instance):
        _, table = hand_instance
        bob = BobSession(keypair, TARGET, table)
        bob.start()
        with pytest.raises(OutOfOrderError):
            bob.start()

    def test_alice_rejects_second_score_batch(self, keypair, hand_instance):
        rank, table = hand_instance
        scores = BobSession(keypair, TARGET, table).start()
        alice = AliceSession(rank, TARGET)
        alice.handle(scores)
        with pytest.raises(OutOfOrderError):
            alice.handle(scores)

    def test_scores_for_another_user(self, keypair, hand_instance):
        rank, table = hand_instance
        scores = BobSession(keypair, 3, table).start()
        with pytest.raises(ProtocolViolation):
            AliceSession(rank, TARGET).handle(scores)

    def test_short_token_order(self, keypair, hand_instance):
        rank, table = hand_instance
        alice = AliceSession(rank, TARGET, seed=1)
        alice.handle(BobSession(keypair, TARGET, table).start())
        first = alice.batch.entries[0][0]
        with pytest.raises(ProtocolViolation):
            alice.handle(wire.frame(MessageType.TOKEN_ORDER, wire.pack_tokens([first])))


class TestValidateTranscript:
    def test_bob_must_not_receive_scores(self, keypair):
        transcript = ProtocolTranscript()
        payload = wire.pack_scores(keypair.public, TARGET, [])
        transcript.record("bob", "received", wire.frame(MessageType.SCORES, payload))
        with pytest.raises(ProtocolViolation):
            validate_transcript(transcript)

    def test_alice_must_not_receive_degrees(self):
        transcript = ProtocolTranscript()
        payload = wire.pack_degrees([(b"\x00" * 16, 5)])
        transcript.record("alice", "received", wire.frame(MessageType.MASKED_DEGREES, payload))
        with pytest.raises(ProtocolViolation):
            validate_transcript(transcript)

    def test_malformed_payload(self):
        transcript = ProtocolTranscript()
        bogus = wire.frame(MessageType.TOKEN_ORDER, (2).to_bytes(4, "big"))
        transcript.record("alice", "received", bogus)
        with pytest.raises(ProtocolViolation):
            validate_transcript(transcript)

    def test_repeated_tokens(self):
        transcript = ProtocolTranscript()
        tok = b"\x07" * 16
        order = wire.frame(MessageType.TOKEN_ORDER, wire.pack_tokens([tok, tok]))
        transcript.record("alice", "received", order)
        with pytest.raises(ProtocolViolation):
            validate_transcript(transcript)


class TestRankMatrix:
    def test_ranks_out_of_range(self):
        with pytest.raises(DataError):
            RankMatrix([[6]], (1,), (1,))

    def test_shape_must_match_ids(self):
        with pytest.raises(DataError):
            RankMatrix([[1, 2]], (1,), (1,))

    def test_masked_rows(self):
        rank = RankMatrix([[1, 2], [3, 4]], (1, 2), (10, 20))
        assert rank.masked([2]).values.tolist() == [[1, 2], [0, 0]]
        with pytest.raises(DataError):
            rank.user_index(9)
