"""Tests for profiles and the composite social similarity."""

import math

import numpy as np
import pytest
import scipy.sparse as sp

from ppsr.errors import DataError
from ppsr.social_similarity import (
    InteractionEvent,
    LexiconClassifier,
    Sentiment,
    SimilarityWeights,
    UserProfile,
    build_corpus,
    build_profiles,
    build_publication_vector,
    classify_sentiment,
    connection_similarity,
    interaction_matrices,
    interaction_similarity,
    load_lexicon,
    load_stopwords,
    publication_similarity,
    similarity_table,
    unified_similarity,
    write_similarity_table,
)

NO_STOPWORDS = frozenset()


def _profile(index, n_u, follow=(), likes=None, comments=None, publication=None):
    follow_row = np.zeros(n_u, dtype=np.int8)
    follow_row[list(follow)] = 1
    zeros = np.zeros(n_u, dtype=np.int64)
    return UserProfile(
        user_id=index,
        index=index,
        publication=sp.csr_matrix(np.atleast_2d(publication if publication is not None else [])),
        follow_row=follow_row,
        friend_row=np.zeros(n_u, dtype=np.int8),
        like_row=np.array(likes if likes is not None else zeros, dtype=np.int64),
        comment_row=np.array(comments if comments is not None else zeros, dtype=np.int64),
        repost_row=zeros.copy(),
    )


class TestWeights:
    def test_groups_are_normalized(self):
        w = SimilarityWeights(lambda_P=2, lambda_C=1, lambda_I=1)
        assert w.lambda_P == pytest.approx(0.5)
        assert w.lambda_C == pytest.approx(0.25)
        assert w.lambda_R + w.lambda_F == pytest.approx(1.0)
        assert w.lambda_Lk + w.lambda_Cmt + w.lambda_Rp == pytest.approx(1.0)

    def test_zero_group_rejected(self):
        with pytest.raises(ValueError):
            SimilarityWeights(lambda_R=0, lambda_F=0)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            SimilarityWeights(lambda_Lk=-1)


class TestPublications:
    def test_tf_idf_by_hand(self):
        corpus = build_corpus({1: ["jazz", "jazz", "rock"], 2: ["rock"]}, 1, NO_STOPWORDS)
        assert corpus.vocabulary == ("jazz", "rock")
        vec = build_publication_vector(corpus.tokens[1], corpus).toarray().ravel()
        assert vec[0] == pytest.approx(2 * math.log(2))
        assert vec[1] == pytest.approx(0.0)

    def test_stopwords_only_gives_zero_vector(self):
        assert {"the", "and", "a"} <= load_stopwords()
        corpus = build_corpus({1: ["the", "and", "a"], 2: ["jazz"], 3: ["jazz", "rock"]}, 1)
        assert build_publication_vector(corpus.tokens[1], corpus).nnz == 0

    def test_identical_tokens_identical_vectors(self):
        corpus = build_corpus({1: "Jazz, rock!", 2: "jazz rock", 3: "opera"}, 1)
        a = build_publication_vector(corpus.tokens[1], corpus).toarray()
        b = build_publication_vector(corpus.tokens[2], corpus).toarray()
        assert np.array_equal(a, b)

    def test_min_df_prunes_rare_keywords(self):
        corpus = build_corpus({1: ["jazz", "opera"], 2: ["jazz"], 3: ["rock"]}, 2, NO_STOPWORDS)
        assert corpus.vocabulary == ("jazz",)

    def test_cosine_examples(self):
        assert publication_similarity([1, 2, 0], [2, 1, 0]) == pytest.approx(0.8)
        assert publication_similarity([3, 1, 0], [3, 1, 0]) == pytest.approx(1.0)
        assert publication_similarity([1, 0, 0], [0, 1, 0]) == 0.0
        assert publication_similarity([0, 0, 0], [1, 1, 0]) == 0.0


class TestConnectionAndInteraction:
    def test_partial_follow_overlap(self):
        w = SimilarityWeights(lambda_R=0.5, lambda_F=0.5)
        i = _profile(0, 7, follow=[2, 3, 4, 5])
        j = _profile(1, 7, follow=[2, 3])
        assert connection_similarity(i, j, w) == pytest.approx(0.5 * 2 / math.sqrt(8), abs=1e-4)

    def test_identical_follows_and_friends(self):
        follow = np.zeros((4, 4), dtype=np.int8)
        follow[[0, 0, 1, 1, 2, 2, 3, 3], [2, 3, 2, 3, 0, 1, 0, 1]] = 1
        profiles = build_profiles(range(4), {}, follow)
        w = SimilarityWeights()
        assert connection_similarity(profiles[0], profiles[1], w) == pytest.approx(1.0)

    def test_no_overlap_is_zero(self):
        w = SimilarityWeights()
        assert connection_similarity(_profile(0, 4, [2]), _profile(1, 4, [3]), w) == 0.0

    def test_interaction_shares(self):
        w = SimilarityWeights(lambda_Lk=0.5, lambda_Cmt=0.3, lambda_Rp=0.2)
        i = _profile(0, 3, likes=[4, 2, 0], comments=[2, 1, 0])
        j = _profile(1, 3, likes=[2, 2, 0], comments=[1, 1, 0])
        assert interaction_similarity(i, j, w) == pytest.approx(0.4)

    def test_full_co_like(self):
        w = SimilarityWeights(lambda_Lk=1, lambda_Cmt=0, lambda_Rp=0)
        i = _profile(0, 2, likes=[5, 5])
        j = _profile(1, 2, likes=[5, 5])
        assert interaction_similarity(i, j, w) == pytest.approx(1.0)

    def test_no_interactions_is_zero(self):
        assert interaction_similarity(_profile(0, 2), _profile(1, 2), SimilarityWeights()) == 0.0

    def test_co_count_matrices_from_events(self):
        events = [
            InteractionEvent(0, a, "like") for a in (1, 2, 3, 4)
        ] + [
            InteractionEvent(1, 1, "like"),
            InteractionEvent(1, 2, "like"),
            InteractionEvent(0, 10, "comment", "great post"),
            InteractionEvent(0, 11, "comment", "love it"),
            InteractionEvent(1, 10, "comment", "great"),
            InteractionEvent(1, 11, "comment", "boring and bad"),
        ]
        counts = interaction_matrices([0, 1], events)
        assert counts["like"].tolist() == [[4, 2], [2, 2]]
        assert counts["comment"].tolist() == [[2, 1], [1, 1]]
        assert counts["repost"].tolist() == [[0, 0], [0, 0]]

    def test_interaction_by_unknown_user(self):
        with pytest.raises(DataError):
            interaction_matrices([0, 1], [InteractionEvent(5, 1, "like")])

    def test_unknown_interaction_kind(self):
        with pytest.raises(DataError):
            InteractionEvent(0, 1, "share")


class TestSentiment:
    def test_lexicon_examples(self):
        lexicon = load_lexicon()
        assert classify_sentiment(["great", "love"], lexicon) is Sentiment.POSITIVE
        assert classify_sentiment(["bad"], lexicon) is Sentiment.NON_POSITIVE
        assert classify_sentiment(["great", "bad"], lexicon) is Sentiment.NON_POSITIVE

    def test_classifier_reads_raw_text(self):
        assert LexiconClassifier().classify("What a GREAT read") is Sentiment.POSITIVE


class TestUnifiedSimilarity:
    def test_weighted_mean_of_channels(self):
        w = SimilarityWeights(
            lambda_R=0.5, lambda_F=0.5, lambda_Lk=0.5, lambda_Cmt=0.3, lambda_Rp=0.2
        )
        n_u = 7
        i = _profile(0, n_u, [2, 3, 4, 5], [4, 2, 0, 0, 0, 0, 0], [2, 1, 0, 0, 0, 0, 0], [1, 2, 0])
        j = _profile(1, n_u, [2, 3], [2, 2, 0, 0, 0, 0, 0], [1, 1, 0, 0, 0, 0, 0], [2, 1, 0])
        assert unified_similarity(i, j, w) == pytest.approx(0.5179, abs=1e-4)

    def test_all_channels_zero(self):
        w = SimilarityWeights()
        assert unified_similarity(_profile(0, 3), _profile(1, 3), w) == 0.0

    def test_similarity_table_matches_pairwise_calls(self):
        follow = np.array([[0, 1, 1], [1, 0, 0], [0, 1, 0]])
        pubs = {10: ["jazz", "rock"], 11: ["jazz"], 12: ["opera", "rock"]}
        profiles = build_profiles([10, 11, 12], pubs, follow, min_df=1)
        w = SimilarityWeights()
        table = similarity_table(10, profiles, w)
        assert set(table) == {11, 12}
        for u in (11, 12):
            assert table[u] == unified_similarity(profiles[10], profiles[u], w)

    def test_singleton_network(self):
        profiles = build_profiles([5], {5: ["jazz"]}, np.zeros((1, 1)))
        assert similarity_table(5, profiles, SimilarityWeights()) == {}

    def test_symmetric_profiles_give_symmetric_scores(self):
        follow = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]])
        pubs = {0: ["jazz", "rock"], 1: ["jazz", "rock"], 2: ["opera"]}
        events = [InteractionEvent(u, a, "like") for u in (0, 1) for a in (1, 2)]
        profiles = build_profiles([0, 1, 2], pubs, follow, events, min_df=1)
        w = SimilarityWeights()
        assert unified_similarity(profiles[0], profiles[1], w) == pytest.approx(
            unified_similarity(profiles[1], profiles[0], w)
        )

    def test_unknown_target(self):
        profiles = build_profiles([1, 2], {}, np.zeros((2, 2)))
        with pytest.raises(DataError):
            similarity_table(3, profiles, SimilarityWeights())

    def test_write_table(self, tmp_path):
        path = tmp_path / "sim.tsv"
        write_similarity_table(path, 1, {3: 0.25, 2: 0.5})
        assert path.read_text() == "1\t2\t0.5\n1\t3\t0.25\n"


class TestProfiles:
    def test_friends_are_mutual_follows(self):
        follow = np.array([[0, 1, 1], [1, 0, 0], [0, 0, 0]])
        profiles = build_profiles([1, 2, 3], {}, follow)
        assert profiles[1].friend_row.tolist() == [0, 1, 0]
        assert profiles[3].follow_row.tolist() == [0, 0, 0]

    def test_self_follow_rejected(self):
        with pytest.raises(DataError):
            _profile(0, 3, follow=[0, 1])

    def test_follow_matrix_shape_checked(self):
        with pytest.raises(DataError):
            build_profiles([1, 2], {}, np.zeros((3, 3)))
