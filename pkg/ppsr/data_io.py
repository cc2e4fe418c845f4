"""HetRec-style TSV loaders and a seeded synthetic dataset generator.

Supported layouts (tab-separated, UTF-8, optional header line):

lastfm
    user_artists.dat         userID artistID weight
    user_friends.dat         userID friendID
    user_taggedartists.dat   userID artistID tagID day month year
    tags.dat (optional)      tagID tagValue

delicious
    user_contacts.dat        userID contactID day month year hour minute second
    user_taggedbookmarks.dat userID bookmarkID tagID day month year hour minute second
    tags.dat (optional)      tagID tagValue

movielens-hetrec
    user_ratedmovies.dat     userID movieID rating day month year hour minute second
    movie_tags.dat           movieID tagID tagWeight
    movie_genres.dat         movieID genre

Every dataset yields item views (item x tag, item x user, plus item x genre for
movielens-hetrec), a follow matrix, user publications and a 1..5 rank matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ppsr.errors import ConfigError, DataError
from ppsr.events import track_event
from ppsr.matrixfile import atomic_write_text
from ppsr.multiview_nmf import ViewMatrix
from ppsr.protocol import RankMatrix
from ppsr.social_similarity import InteractionEvent, UserProfile, build_profiles

logger = logging.getLogger(__name__)

DATASET_KINDS = ("lastfm", "delicious", "movielens-hetrec")

ColumnKind = Literal["id", "count", "float", "text"]

SCHEMAS: dict[str, tuple[tuple[str, ColumnKind], ...]] = {
    "user_artists.dat": (("userID", "id"), ("artistID", "id"), ("weight", "count")),
    "user_friends.dat": (("userID", "id"), ("friendID", "id")),
    "user_taggedartists.dat": (
        ("userID", "id"),
        ("artistID", "id"),
        ("tagID", "id"),
        ("day", "count"),
        ("month", "count"),
        ("year", "count"),
    ),
    "tags.dat": (("tagID", "id"), ("tagValue", "text")),
    "user_contacts.dat": (
        ("userID", "id"),
        ("contactID", "id"),
        ("day", "count"),
        ("month", "count"),
        ("year", "count"),
        ("hour", "count"),
        ("minute", "count"),
        ("second", "count"),
    ),
    "user_taggedbookmarks.dat": (
        ("userID", "id"),
        ("bookmarkID", "id"),
        ("tagID", "id"),
        ("day", "count"),
        ("month", "count"),
        ("year", "count"),
        ("hour", "count"),
        ("minute", "count"),
        ("second", "count"),
    ),
    "user_ratedmovies.dat": (
        ("userID", "id"),
        ("movieID", "id"),
        ("rating", "float"),
        ("day", "count"),
        ("month", "count"),
        ("year", "count"),
        ("hour", "count"),
        ("minute", "count"),
        ("second", "count"),
    ),
    "movie_tags.dat": (("movieID", "id"), ("tagID", "id"), ("tagWeight", "count")),
    "movie_genres.dat": (("movieID", "id"), ("genre", "text")),
}


class TabularSource:
    """One tab-separated table checked against a column schema.

    Blank lines are skipped. A header line is detected when its first id
    column does not parse as an integer (or forced with ``header``). Errors
    name the physical line number.
    """

    def __init__(
        self,
        text: str,
        columns: Sequence[tuple[str, ColumnKind]],
        name: str = "<text>",
        header: Optional[bool] = None,
    ):
        self.name = name
        self.columns = tuple(columns)
        self.frame = self._parse(text, header)

    @classmethod
    def from_path(cls, path: Union[Path, str], columns=None, header=None) -> "TabularSource":
        path = Path(path)
        if not path.is_file():
            raise DataError(f"missing file: {path}")
        if columns is None:
            if path.name not in SCHEMAS:
                raise DataError(f"no schema known for {path.name}")
            columns = SCHEMAS[path.name]
        raw = path.read_bytes()
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError:
            logger.warning("%s is not valid UTF-8; reading as latin-1", path)
            text = raw.decode("latin-1")
        return cls(text, columns, name=str(path), header=header)

    @property
    def row_count(self) -> int:
        return len(self.frame)

    def _parse(self, text: str, header: Optional[bool]) -> pd.DataFrame:
        names = [n for n, _ in self.columns]
        lines = [
            (no, line.rstrip("\r"))
            for no, line in enumerate(text.split("\n"), start=1)
            if line.strip()
        ]
        if lines and self._is_header(lines[0][1], header):
            lines = lines[1:]

        rows = []
        for no, line in lines:
            fields = line.split("\t")
            if len(fields) != len(names):
                raise DataError(
                    f"{self.name}:{no}: expected {len(names)} columns, got {len(fields)}"
                )
            rows.append(fields)
        frame = pd.DataFrame(rows, columns=names, dtype=str)
        line_numbers = np.array([no for no, _ in lines], dtype=np.int64)

        for name, kind in self.columns:
            if kind == "text":
                frame[name] = frame[name].str.strip()
                continue
            raw = frame[name].str.strip()
            if kind == "float":
                values = pd.to_numeric(raw, errors="coerce")
                bad = ~np.isfinite(values.to_numpy(dtype=float))
            else:
                pattern = r"\d+" if kind == "count" else r"-?\d+"
                bad = ~raw.str.fullmatch(pattern).to_numpy(dtype=bool)
                values = pd.to_numeric(raw.where(~bad, "0"))
            if bad.any():
                no = line_numbers[np.flatnonzero(bad)[0]]
                raise DataError(f"{self.name}:{no}: column {name} has a bad {kind} value")
            frame[name] = values.astype(np.int64) if kind != "float" else values.astype(float)
        frame.attrs["line_numbers"] = line_numbers
        return frame

    def _is_header(self, line: str, header: Optional[bool]) -> bool:
        if header is not None:
            return header
        fields = [f.strip() for f in line.split("\t")]
        numeric = [
            f for f, (_, kind) in zip(fields, self.columns) if kind in ("id", "count")
        ]
        return bool(numeric) and not any(f.lstrip("-").isdigit() for f in numeric)


@dataclass(frozen=True)
class Dataset:
    """Everything the toolkit needs from one dataset."""

    kind: str
    item_ids: tuple[int, ...]
    user_ids: tuple[int, ...]
    views: tuple[ViewMatrix, ...]
    view_names: tuple[str, ...]
    follow: np.ndarray
    publications: Mapping[int, list[str]]
    rank: RankMatrix
    interactions: tuple[InteractionEvent, ...] = ()
    planted: Optional[np.ndarray] = field(default=None, repr=False)
    user_groups: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    def profiles(self, min_df: int = 2, classifier=None) -> dict[int, UserProfile]:
        return build_profiles(
            self.user_ids,
            self.publications,
            self.follow,
            self.interactions,
            classifier=classifier,
            min_df=min_df,
        )


def follow_matrix_from_edges(
    user_ids: Sequence[int], edges: Iterable[tuple[int, int]], source: str = "edges"
) -> np.ndarray:
    """0/1 matrix with F[u, v] = 1 when u follows v.

    Duplicate edges collapse with a warning; self-loops are dropped.
    """
    index = {u: i for i, u in enumerate(user_ids)}
    n_u = len(user_ids)
    follow = np.zeros((n_u, n_u), dtype=np.int8)
    duplicates = self_loops = 0
    for u, v in edges:
        if u == v:
            self_loops += 1
            continue
        if u not in index or v not in index:
            raise DataError(f"{source}: edge ({u}, {v}) names an unknown user")
        i, j = index[u], index[v]
        if follow[i, j]:
            duplicates += 1
        follow[i, j] = 1
    if duplicates:
        logger.warning("%s: collapsed %d duplicate edges", source, duplicates)
    if self_loops:
        logger.warning("%s: dropped %d self-loops", source, self_loops)
    return follow


def _count_matrix(rows: Sequence, cols: Sequence, row_ids, col_ids, weights=None) -> np.ndarray:
    r_index = {v: i for i, v in enumerate(row_ids)}
    c_index = {v: j for j, v in enumerate(col_ids)}
    out = np.zeros((len(row_ids), len(col_ids)), dtype=float)
    w = np.ones(len(rows)) if weights is None else np.asarray(weights, dtype=float)
    np.add.at(out, ([r_index[r] for r in rows], [c_index[c] for c in cols]), w)
    return out


def _tag_view(item_col, tag_col, item_ids, source: str, weights=None) -> ViewMatrix:
    tag_ids = sorted(set(tag_col))
    if not tag_ids:
        raise DataError(f"{source}: the tag view has no columns")
    return ViewMatrix(_count_matrix(item_col, tag_col, item_ids, tag_ids, weights), 1)


def _rank_matrix(user_ids, item_ids, users, items, ratings) -> RankMatrix:
    values = np.zeros((len(user_ids), len(item_ids)), dtype=np.int64)
    u_index = {u: i for i, u in enumerate(user_ids)}
    i_index = {t: k for k, t in enumerate(item_ids)}
    for u, t, r in zip(users, items, ratings):
        values[u_index[u], i_index[t]] = max(values[u_index[u], i_index[t]], int(r))
    return RankMatrix(values, tuple(user_ids), tuple(item_ids))


def _publications(user_tags: pd.DataFrame, tag_names: Optional[pd.DataFrame], user_ids):
    pubs: dict[int, list[str]] = {u: [] for u in user_ids}
    if tag_names is None:
        return pubs
    names = dict(zip(tag_names["tagID"], tag_names["tagValue"]))
    for u, t in zip(user_tags["userID"], user_tags["tagID"]):
        if t in names:
            pubs[u].append(names[t])
    return pubs


def _optional(directory: Path, name: str) -> Optional[pd.DataFrame]:
    path = directory / name
    return TabularSource.from_path(path).frame if path.is_file() else None


def _listening_quintiles(frame: pd.DataFrame) -> pd.Series:
    pct = frame.groupby("userID")["weight"].rank(method="average", pct=True)
    return np.clip(np.ceil(pct * 5), 1, 5).astype(np.int64)


def _load_lastfm(directory: Path) -> Dataset:
    listens = TabularSource.from_path(directory / "user_artists.dat").frame
    friends = TabularSource.from_path(directory / "user_friends.dat").frame
    tagged = TabularSource.from_path(directory / "user_taggedartists.dat").frame
    tags = _optional(directory, "tags.dat")

    item_ids = tuple(sorted(set(listens["artistID"]) | set(tagged["artistID"])))
    user_ids = tuple(
        sorted(
            set(listens["userID"])
            | set(friends["userID"])
            | set(friends["friendID"])
            | set(tagged["userID"])
        )
    )
    tag_view = _tag_view(tagged["artistID"], tagged["tagID"], item_ids, "user_taggedartists.dat")
    user_view = ViewMatrix(
        _count_matrix(listens["artistID"], listens["userID"], item_ids, user_ids, listens["weight"]), 2
    )
    follow = follow_matrix_from_edges(
        user_ids, zip(friends["userID"], friends["friendID"]), "user_friends.dat"
    )
    rank = _rank_matrix(
        user_ids, item_ids, listens["userID"], listens["artistID"], _listening_quintiles(listens)
    )
    return Dataset(
        "lastfm",
        item_ids,
        user_ids,
        (tag_view, user_view),
        ("item_tag", "item_user"),
        follow,
        _publications(tagged, tags, user_ids),
        rank,
    )


def _load_delicious(directory: Path) -> Dataset:
    contacts = TabularSource.from_path(directory / "user_contacts.dat").frame
    tagged = TabularSource.from_path(directory / "user_taggedbookmarks.dat").frame
    tags = _optional(directory, "tags.dat")

    item_ids = tuple(sorted(set(tagged["bookmarkID"])))
    user_ids = tuple(
        sorted(set(tagged["userID"]) | set(contacts["userID"]) | set(contacts["contactID"]))
    )
    tag_view = _tag_view(tagged["bookmarkID"], tagged["tagID"], item_ids, "user_taggedbookmarks.dat")
    user_view = ViewMatrix(
        _count_matrix(tagged["bookmarkID"], tagged["userID"], item_ids, user_ids), 2
    )
    follow = follow_matrix_from_edges(
        user_ids, zip(contacts["userID"], contacts["contactID"]), "user_contacts.dat"
    )
    rank = _rank_matrix(
        user_ids, item_ids, tagged["userID"], tagged["bookmarkID"], np.full(len(tagged), 5)
    )
    return Dataset(
        "delicious",
        item_ids,
        user_ids,
        (tag_view, user_view),
        ("item_tag", "item_user"),
        follow,
        _publications(tagged, tags, user_ids),
        rank,
    )


def _load_movielens(directory: Path) -> Dataset:
    rated = TabularSource.from_path(directory / "user_ratedmovies.dat").frame
    movie_tags = TabularSource.from_path(directory / "movie_tags.dat").frame
    genres = TabularSource.from_path(directory / "movie_genres.dat").frame

    if ((rated["rating"] < 0) | (rated["rating"] > 5)).any():
        raise DataError("user_ratedmovies.dat: ratings must lie in [0, 5]")
    item_ids = tuple(sorted(set(rated["movieID"])))
    known = set(item_ids)
    user_ids = tuple(sorted(set(rated["userID"])))
    movie_tags = movie_tags[movie_tags["movieID"].isin(known)]
    genres = genres[genres["movieID"].isin(known)]

    tag_view = _tag_view(
        movie_tags["movieID"], movie_tags["tagID"], item_ids, "movie_tags.dat",
        weights=movie_tags["tagWeight"],
    )
    stars = np.clip(np.ceil(rated["rating"].to_numpy()), 1, 5).astype(np.int64)
    user_view = ViewMatrix(
        _count_matrix(rated["movieID"], rated["userID"], item_ids, user_ids, stars), 2
    )
    genre_names = sorted(set(genres["genre"]))
    views = [tag_view, user_view]
    names = ["item_tag", "item_user"]
    if genre_names:
        views.append(
            ViewMatrix(_count_matrix(genres["movieID"], genres["genre"], item_ids, genre_names), 3)
        )
        names.append("item_genre")
    n_u = len(user_ids)
    return Dataset(
        "movielens-hetrec",
        item_ids,
        user_ids,
        tuple(views),
        tuple(names),
        np.zeros((n_u, n_u), dtype=np.int8),
        {u: [] for u in user_ids},
        _rank_matrix(user_ids, item_ids, rated["userID"], rated["movieID"], stars),
    )


_LOADERS = {
    "lastfm": _load_lastfm,
    "delicious": _load_delicious,
    "movielens-hetrec": _load_movielens,
}


def load_hetrec(directory: Union[Path, str], kind: str) -> Dataset:
    """Load one HetRec-style dataset directory."""
    if kind not in _LOADERS:
        raise ConfigError(f"unknown dataset kind {kind!r}; expected one of {DATASET_KINDS}")
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"dataset directory not found: {directory}")
    dataset = _LOADERS[kind](directory)
    track_event(
        "dataset_loaded",
        kind=kind,
        items=dataset.n_items,
        users=dataset.n_users,
        views=len(dataset.views),
    )
    return dataset


# -- synthetic data -------------------------------------------------------


class SyntheticSpec(BaseModel):
    """Parameters of a planted-structure dataset.

    ``pattern="complementary"`` makes view s unable to tell clusters
    s mod K and (s + 1) mod K apart. Users fall into two taste groups per
    cluster; ``social_signal`` scales how strongly follows, posts and likes
    track those groups (0 means no social activity at all).
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    n_items: int = Field(150, gt=0)
    n_users: int = Field(80, gt=1)
    K_true: int = Field(3, gt=0)
    n_views: int = Field(2, gt=0)
    view_features: int = Field(30, gt=0)
    noise: float = Field(0.1, ge=0)
    pattern: Literal["informative", "complementary"] = "informative"
    rating_density: float = Field(0.3, gt=0, le=1)
    social_signal: float = Field(1.0, ge=0, le=1)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _consistent(self):
        if self.K_true > self.n_items:
            raise ValueError(f"K_true={self.K_true} exceeds n_items={self.n_items}")
        if self.K_true > self.view_features:
            raise ValueError("each cluster needs at least one feature per view")
        if self.n_users < 2 * self.K_true:
            raise ValueError("need at least two users per cluster")
        if self.pattern == "complementary" and self.K_true < 2:
            raise ValueError("complementary views need at least two clusters")
        return self


GROUP_VOCABULARY = 8
SHARED_VOCABULARY = 12
ARTICLES_PER_GROUP = 5


def _prototypes(spec: SyntheticSpec, view: int) -> np.ndarray:
    K, n_f = spec.K_true, spec.view_features
    blocks = np.array_split(np.arange(n_f), K)
    protos = np.zeros((K, n_f))
    for c, cols in enumerate(blocks):
        protos[c, cols] = 1.0
    if spec.pattern == "complementary":
        a, b = view % K, (view + 1) % K
        protos[b] = protos[a]
    return protos


def _synthetic_ratings(spec: SyntheticSpec, rng, planted, groups) -> np.ndarray:
    K = spec.K_true
    # each taste group likes one half of its cluster
    preferred = np.zeros((2 * K, spec.n_items), dtype=bool)
    for c in range(K):
        members = rng.permutation(np.flatnonzero(planted == c))
        half = len(members) // 2 if len(members) > 1 else 1
        preferred[2 * c, members[:half]] = True
        preferred[2 * c + 1, members[half:]] = True

    values = np.zeros((spec.n_users, spec.n_items), dtype=np.int64)
    for u in range(spec.n_users):
        g = groups[u]
        rated = rng.random(spec.n_items) < spec.rating_density
        liked = rng.integers(4, 6, spec.n_items)
        disliked = rng.integers(1, 3, spec.n_items)
        same_cluster = planted == g // 2
        row = np.where(preferred[g], liked, np.where(same_cluster, 3, disliked))
        values[u] = np.where(rated, row, 0)
    return values


def _synthetic_social(spec: SyntheticSpec, rng, groups):
    s = spec.social_signal
    n_u = spec.n_users
    same = groups[:, None] == groups[None, :]
    p = np.where(same, 0.5, 0.02) * s
    follow = (rng.random((n_u, n_u)) < p).astype(np.int8)
    np.fill_diagonal(follow, 0)

    publications: dict[int, list[str]] = {}
    n_posts = int(round(10 * s))
    for u in range(n_u):
        words = []
        for _ in range(n_posts):
            if rng.random() < 0.8:
                words.append(f"topic{groups[u]}x{rng.integers(GROUP_VOCABULARY)}")
            else:
                words.append(f"common{rng.integers(SHARED_VOCABULARY)}")
        publications[u] = words

    events = []
    n_groups = 2 * spec.K_true
    for u in range(n_u):
        for g in range(n_groups):
            p_like = (0.6 if g == groups[u] else 0.05) * s
            for a in range(ARTICLES_PER_GROUP):
                article = g * ARTICLES_PER_GROUP + a
                if rng.random() < p_like:
                    events.append(InteractionEvent(u, article, "like"))
                if rng.random() < p_like / 2:
                    text = "great read love it" if g == groups[u] else "boring and wrong"
                    events.append(InteractionEvent(u, article, "comment", text))
    return follow, publications, tuple(events)


def generate_synthetic(spec: Union[SyntheticSpec, Mapping]) -> Dataset:
    """Planted-cluster views plus a socially informative population.

    Deterministic in ``spec`` (including its seed).
    """
    if not isinstance(spec, SyntheticSpec):
        try:
            spec = SyntheticSpec.model_validate(dict(spec))
        except ValidationError as e:
            raise ConfigError(f"inconsistent synthetic spec: {e.errors()[0]['msg']}") from None

    rng = np.random.default_rng(spec.seed)
    K = spec.K_true
    planted = rng.permutation(np.arange(spec.n_items) % K)

    views = []
    for s in range(spec.n_views):
        protos = _prototypes(spec, s)
        scale = rng.uniform(0.5, 1.5, size=(spec.n_items, 1))
        data = scale * protos[planted] + spec.noise * rng.random((spec.n_items, spec.view_features))
        views.append(ViewMatrix(data, s + 1))

    groups = rng.permutation(np.arange(spec.n_users) % (2 * K))
    values = _synthetic_ratings(spec, rng, planted, groups)
    follow, publications, interactions = _synthetic_social(spec, rng, groups)

    item_ids = tuple(range(spec.n_items))
    user_ids = tuple(range(spec.n_users))
    dataset = Dataset(
        kind="synthetic",
        item_ids=item_ids,
        user_ids=user_ids,
        views=tuple(views),
        view_names=tuple(f"view{s + 1}" for s in range(spec.n_views)),
        follow=follow,
        publications=publications,
        rank=RankMatrix(values, user_ids, item_ids),
        interactions=interactions,
        planted=planted.astype(np.int64),
        user_groups=groups.astype(np.int64),
    )
    track_event(
        "synthetic_generated",
        items=spec.n_items,
        users=spec.n_users,
        K=K,
        pattern=spec.pattern,
        social_signal=spec.social_signal,
        seed=spec.seed,
    )
    return dataset


def _tsv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    lines = ["\t".join(header)]
    lines.extend("\t".join(str(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def write_synthetic(dataset: Dataset, directory: Union[Path, str]) -> list[Path]:
    """Write a dataset as lastfm-layout files that ``load_hetrec`` reads back.

    Ranks become listening weights equal to the rank, the first view's
    non-zero cells become tag assignments by the first user (tag ids are
    feature indices) and publications become ``tags.dat`` values. Dates are
    fixed placeholders.
    """
    directory = Path(directory)
    rank = dataset.rank
    listens = [
        (rank.user_ids[u], rank.item_ids[k], int(rank.values[u, k]))
        for u, k in zip(*np.nonzero(rank.values))
    ]
    friends = [
        (dataset.user_ids[i], dataset.user_ids[j]) for i, j in zip(*np.nonzero(dataset.follow))
    ]

    tag_names: dict[str, int] = {}
    tagged = []
    for u in dataset.user_ids:
        rated = np.flatnonzero(rank.values[rank.user_index(u)])
        item = rank.item_ids[rated[0]] if rated.size else dataset.item_ids[0]
        for word in dataset.publications.get(u, []):
            tag = tag_names.setdefault(word, len(tag_names) + 1)
            tagged.append((u, item, tag, 1, 1, 2011))
    # unnamed tags carry the first view's support
    offset = len(tag_names) + 1
    for k, f in zip(*np.nonzero(dataset.views[0].data)):
        tagged.append((dataset.user_ids[0], dataset.item_ids[k], offset + int(f), 1, 1, 2011))

    files = {
        "user_artists.dat": _tsv(("userID", "artistID", "weight"), listens),
        "user_friends.dat": _tsv(("userID", "friendID"), friends),
        "user_taggedartists.dat": _tsv(
            ("userID", "artistID", "tagID", "day", "month", "year"), tagged
        ),
        "tags.dat": _tsv(("tagID", "tagValue"), ((t, w) for w, t in tag_names.items())),
    }
    written = []
    for name, text in files.items():
        atomic_write_text(directory / name, text)
        written.append(directory / name)
    track_event("synthetic_written", directory=str(directory), files=len(written))
    return written
