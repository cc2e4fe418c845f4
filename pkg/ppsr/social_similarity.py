"""User profiles and the composite social similarity.

A profile holds three channels: publications (TF-IDF keyword vector),
connections (follow row and close-friend row) and positive interactions
(co-like / co-comment / co-repost counts, own totals on the diagonal).
"""

from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional, Protocol, Sequence

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field, model_validator
from sklearn.feature_extraction.text import CountVectorizer
from sklearn.metrics.pairwise import cosine_similarity

from ppsr.errors import ConfigError, DataError, DimensionError
from ppsr.events import track_event
from ppsr.matrixfile import atomic_write_text

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[a-z0-9]+")

WEIGHT_GROUPS = {
    "channel": ("lambda_P", "lambda_C", "lambda_I"),
    "connection": ("lambda_R", "lambda_F"),
    "interaction": ("lambda_Lk", "lambda_Cmt", "lambda_Rp"),
}


class SimilarityWeights(BaseModel):
    """Channel weights; each group is rescaled to sum to one on construction."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    lambda_P: float = Field(1.0, ge=0)
    lambda_C: float = Field(1.0, ge=0)
    lambda_I: float = Field(1.0, ge=0)
    lambda_R: float = Field(1.0, ge=0)
    lambda_F: float = Field(1.0, ge=0)
    lambda_Lk: float = Field(1.0, ge=0)
    lambda_Cmt: float = Field(1.0, ge=0)
    lambda_Rp: float = Field(1.0, ge=0)

    @model_validator(mode="before")
    @classmethod
    def _normalize_groups(cls, data):
        if not isinstance(data, Mapping):
            return data
        data = dict(data)
        for group, names in WEIGHT_GROUPS.items():
            values = [float(data.get(n, 1.0)) for n in names]
            if any(v < 0 for v in values):
                raise ValueError(f"{group} weights must be non-negative")
            total = sum(values)
            if total <= 0:
                raise ValueError(f"{group} weights sum to zero")
            for n, v in zip(names, values):
                data[n] = v / total
        return data


# -- text cleaning --------------------------------------------------------


def _read_word_file(name: str) -> frozenset[str]:
    text = resources.files("ppsr").joinpath("data", name).read_text(encoding="utf-8")
    return frozenset(
        line.strip().lower()
        for line in text.splitlines()
        if line.strip() and not line.startswith("#")
    )


def load_stopwords() -> frozenset[str]:
    """The bundled English stop-word list."""
    return _read_word_file("stopwords.txt")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on anything that is not a letter or digit."""
    return _TOKEN_RE.findall(text.lower())


def clean_tokens(tokens: Iterable[str], stopwords: frozenset[str]) -> list[str]:
    out = []
    for tok in tokens:
        for piece in tokenize(tok):
            if piece not in stopwords:
                out.append(piece)
    return out


def _as_tokens(doc) -> list[str]:
    return tokenize(doc) if isinstance(doc, str) else list(doc)


# -- publications ---------------------------------------------------------


def _identity(tokens):
    return tokens


@dataclass(frozen=True)
class Corpus:
    """Cleaned per-user token lists plus the keyword vocabulary."""

    user_ids: tuple
    tokens: Mapping
    vocabulary: tuple[str, ...]
    document_frequency: np.ndarray
    stopwords: frozenset[str]
    _vectorizer: Optional[CountVectorizer] = field(default=None, repr=False, compare=False)

    @property
    def n_documents(self) -> int:
        return len(self.user_ids)

    @property
    def idf(self) -> np.ndarray:
        return np.log(self.n_documents / self.document_frequency)


def build_corpus(
    publications: Mapping,
    min_df: int = 2,
    stopwords: Optional[frozenset[str]] = None,
) -> Corpus:
    """Clean every user's publications and extract keywords with df >= min_df."""
    stopwords = load_stopwords() if stopwords is None else stopwords
    user_ids = tuple(publications)
    tokens = {u: clean_tokens(_as_tokens(publications[u]), stopwords) for u in user_ids}

    vectorizer = CountVectorizer(analyzer=_identity, min_df=min_df)
    try:
        X = vectorizer.fit_transform([tokens[u] for u in user_ids])
    except ValueError:
        # nothing survives cleaning / pruning
        logger.warning("corpus of %d users has an empty vocabulary", len(user_ids))
        return Corpus(user_ids, tokens, (), np.zeros(0), stopwords, None)

    vocabulary = tuple(vectorizer.get_feature_names_out())
    df = np.asarray((X > 0).sum(axis=0)).ravel().astype(float)
    track_event("corpus_built", users=len(user_ids), keywords=len(vocabulary), min_df=min_df)
    return Corpus(user_ids, tokens, vocabulary, df, stopwords, vectorizer)


def build_publication_vector(tokens, corpus: Corpus) -> sp.csr_matrix:
    """TF-IDF row: raw term count times ln(n_u / df); unknown tokens ignored."""
    if not corpus.vocabulary or corpus._vectorizer is None:
        raise DataError("corpus vocabulary is empty")
    cleaned = clean_tokens(_as_tokens(tokens), corpus.stopwords)
    counts = corpus._vectorizer.transform([cleaned]).astype(float)
    return sp.csr_matrix(counts.multiply(corpus.idf.reshape(1, -1)))


def _row(v) -> sp.csr_matrix:
    if sp.issparse(v):
        return sp.csr_matrix(v, dtype=float).reshape(1, -1)
    return sp.csr_matrix(np.asarray(v, dtype=float).reshape(1, -1))


def _cosine(a, b) -> float:
    a, b = _row(a), _row(b)
    if a.shape != b.shape:
        raise DimensionError(f"vector lengths differ: {a.shape[1]} vs {b.shape[1]}")
    if a.nnz == 0 or b.nnz == 0:
        return 0.0
    value = float(cosine_similarity(a, b)[0, 0])
    return min(1.0, max(0.0, value))


def publication_similarity(P_i, P_j) -> float:
    """Cosine of two publication vectors; 0 if either is all-zero."""
    return _cosine(P_i, P_j)


# -- profiles -------------------------------------------------------------


@dataclass(frozen=True)
class UserProfile:
    user_id: int
    index: int
    publication: sp.csr_matrix
    follow_row: np.ndarray
    friend_row: np.ndarray
    like_row: np.ndarray
    comment_row: np.ndarray
    repost_row: np.ndarray

    def __post_init__(self):
        n_u = len(self.follow_row)
        for name in ("friend_row", "like_row", "comment_row", "repost_row"):
            if len(getattr(self, name)) != n_u:
                raise DimensionError(f"user {self.user_id}: {name} length differs")
        if self.publication.nnz and self.publication.data.min() < 0:
            raise DataError(f"user {self.user_id}: negative publication weight")
        if self.follow_row[self.index]:
            raise DataError(f"user {self.user_id} follows themself")
        if np.any(self.friend_row > self.follow_row):
            raise DataError(f"user {self.user_id}: close friend that is not followed")
        for name in ("like_row", "comment_row", "repost_row"):
            row = getattr(self, name)
            if (row < 0).any():
                raise DataError(f"user {self.user_id}: negative {name} counts")
            if (row > row[self.index]).any():
                raise DataError(f"user {self.user_id}: {name} co-count exceeds own total")


class Sentiment(str, enum.Enum):
    POSITIVE = "positive"
    NON_POSITIVE = "non-positive"


@dataclass(frozen=True)
class Lexicon:
    positive: frozenset[str]
    negative: frozenset[str]


def load_lexicon() -> Lexicon:
    """The bundled default lexicon."""
    return Lexicon(_read_word_file("positive.txt"), _read_word_file("negative.txt"))


def classify_sentiment(text, lexicon: Lexicon) -> Sentiment:
    """Positive iff strictly more positive than negative lexicon hits."""
    if not lexicon.positive and not lexicon.negative:
        raise ConfigError("sentiment lexicon is empty")
    tokens = [t.lower() for t in _as_tokens(text)]
    pos = sum(t in lexicon.positive for t in tokens)
    neg = sum(t in lexicon.negative for t in tokens)
    return Sentiment.POSITIVE if pos > neg else Sentiment.NON_POSITIVE


class SentimentClassifier(Protocol):
    def classify(self, text) -> Sentiment: ...


class LexiconClassifier:
    """Counting classifier over a positive/negative word lexicon."""

    def __init__(self, lexicon: Optional[Lexicon] = None):
        self.lexicon = lexicon or load_lexicon()

    def classify(self, text) -> Sentiment:
        return classify_sentiment(text, self.lexicon)


@dataclass(frozen=True)
class InteractionEvent:
    """One like, comment or repost by ``user_id`` on ``article_id``."""

    user_id: int
    article_id: int
    kind: str
    text: str = ""

    def __post_init__(self):
        if self.kind not in ("like", "comment", "repost"):
            raise DataError(f"unknown interaction kind {self.kind!r}")


def interaction_matrices(
    user_ids: Sequence[int],
    interactions: Iterable[InteractionEvent],
    classifier: Optional[SentimentClassifier] = None,
) -> dict[str, np.ndarray]:
    """Co-count matrices per interaction kind.

    Entry (i, j) counts articles both users interacted with; (i, i) is the
    user's own total. Comments and reposts count only when positive.
    """
    classifier = classifier or LexiconClassifier()
    index = {u: i for i, u in enumerate(user_ids)}
    articles: dict[str, dict] = {"like": {}, "comment": {}, "repost": {}}
    cells: dict[str, set] = {"like": set(), "comment": set(), "repost": set()}
    for ev in interactions:
        if ev.user_id not in index:
            raise DataError(f"interaction by unknown user {ev.user_id}")
        if ev.kind != "like" and classifier.classify(ev.text) is not Sentiment.POSITIVE:
            continue
        art = articles[ev.kind].setdefault(ev.article_id, len(articles[ev.kind]))
        cells[ev.kind].add((art, index[ev.user_id]))

    n_u = len(user_ids)
    out = {}
    for kind, pairs in cells.items():
        if not pairs:
            out[kind] = np.zeros((n_u, n_u), dtype=np.int64)
            continue
        rows, cols = zip(*sorted(pairs))
        A = sp.csr_matrix(
            (np.ones(len(rows), dtype=np.int64), (rows, cols)),
            shape=(len(articles[kind]), n_u),
        )
        out[kind] = np.asarray((A.T @ A).toarray(), dtype=np.int64)
    return out


def build_profiles(
    user_ids: Sequence[int],
    publications: Mapping,
    follow: np.ndarray,
    interactions: Iterable[InteractionEvent] = (),
    corpus: Optional[Corpus] = None,
    classifier: Optional[SentimentClassifier] = None,
    min_df: int = 2,
) -> dict[int, UserProfile]:
    """Build every user's profile from publications, follows and interactions.

    ``follow`` is the n_u x n_u 0/1 follow matrix in ``user_ids`` order.
    """
    user_ids = list(user_ids)
    n_u = len(user_ids)
    follow = np.asarray(follow)
    if follow.shape != (n_u, n_u):
        raise DimensionError(f"follow matrix is {follow.shape} for {n_u} users")
    follow = (follow != 0).astype(np.int8)
    np.fill_diagonal(follow, 0)
    friends = follow & follow.T

    if corpus is None:
        corpus = build_corpus({u: publications.get(u, []) for u in user_ids}, min_df=min_df)
    counts = interaction_matrices(user_ids, interactions, classifier)

    profiles = {}
    for i, u in enumerate(user_ids):
        if corpus.vocabulary:
            P = build_publication_vector(corpus.tokens.get(u, publications.get(u, [])), corpus)
        else:
            P = sp.csr_matrix((1, 0))
        profiles[u] = UserProfile(
            user_id=u,
            index=i,
            publication=P,
            follow_row=follow[i].copy(),
            friend_row=friends[i].copy(),
            like_row=counts["like"][i].copy(),
            comment_row=counts["comment"][i].copy(),
            repost_row=counts["repost"][i].copy(),
        )
    track_event("profiles_built", users=n_u, keywords=len(corpus.vocabulary))
    return profiles


# -- similarity channels --------------------------------------------------


def connection_similarity(
    profile_i: UserProfile, profile_j: UserProfile, w: SimilarityWeights
) -> float:
    return w.lambda_R * _cosine(profile_i.follow_row, profile_j.follow_row) + (
        w.lambda_F * _cosine(profile_i.friend_row, profile_j.friend_row)
    )


def _share(row: np.ndarray, i: int, j: int) -> float:
    total = row[i]
    if row[j] < 0 or total < 0:
        raise DataError("negative interaction counts")
    if total == 0:
        return 0.0
    return float(row[j]) / float(total)


def interaction_similarity(
    profile_i: UserProfile, profile_j: UserProfile, w: SimilarityWeights
) -> float:
    """Co-interaction shares normalized by user i's own totals (asymmetric)."""
    i, j = profile_i.index, profile_j.index
    return (
        w.lambda_Lk * _share(profile_i.like_row, i, j)
        + w.lambda_Cmt * _share(profile_i.comment_row, i, j)
        + w.lambda_Rp * _share(profile_i.repost_row, i, j)
    )


def unified_similarity(
    profile_i: UserProfile, profile_j: UserProfile, w: SimilarityWeights
) -> float:
    if profile_i.publication.shape[1] == 0 or profile_j.publication.shape[1] == 0:
        sim_P = 0.0
    else:
        sim_P = publication_similarity(profile_i.publication, profile_j.publication)
    return (
        w.lambda_P * sim_P
        + w.lambda_C * connection_similarity(profile_i, profile_j, w)
        + w.lambda_I * interaction_similarity(profile_i, profile_j, w)
    )


def similarity_table(
    target: int, profiles: Mapping[int, UserProfile], w: SimilarityWeights
) -> dict[int, float]:
    """Sim(target, u) for every other user u."""
    if target not in profiles:
        raise DataError(f"unknown target user {target}")
    me = profiles[target]
    return {
        u: unified_similarity(me, p, w) for u, p in profiles.items() if u != target
    }


def write_similarity_table(path: Path | str, target: int, table: Mapping[int, float]) -> None:
    lines = [f"{target}\t{u}\t{score!r}" for u, score in sorted(table.items())]
    atomic_write_text(path, "".join(line + "\n" for line in lines))
