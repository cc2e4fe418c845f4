"""The recommendation experiment: four model variants over a 75/25 user split.

RM-SV   single-view clustering list only
RM-MV   multi-view clustering list only
RM-SVS  socialized list merged with the single-view clustering list
PPSR    socialized list merged with the multi-view clustering list

Test users are cold-start: Alice sees none of their ratings except a few
revealed liked items. The clustering list holds the cluster neighbors of the
revealed items, most popular (in training) first. The socialized list comes
from the two-party protocol, or from the identical plaintext computation.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from ppsr import __version__
from ppsr.config import PPSRConfig, config_digest
from ppsr.data_io import Dataset, generate_synthetic, load_hetrec
from ppsr.errors import ConfigError, NoNeighborsError
from ppsr.evaluation import (
    BASELINE_METHODS,
    EvalSplit,
    MetricReport,
    baseline_cluster,
    clustering_report,
    frame_to_tsv,
    make_split,
    metric_at,
    precision_recall_at_k,
    summarize_curves,
    write_reports,
)
from ppsr.events import track_event
from ppsr.matrixfile import atomic_write_text
from ppsr.multiview_nmf import multiview_factorize, nearest_neighbors, nmf_factorize, normalize_view
from ppsr.paillier import PaillierKeypair, keygen, load_keypair
from ppsr.protocol import (
    AliceParty,
    BobParty,
    CandidateList,
    Provenance,
    RankMatrix,
    derive_seed,
    merge_lists,
    plaintext_socialized_ranking,
    run_protocol,
)
from ppsr.social_similarity import similarity_table
from ppsr.transport import TRANSPORTS

logger = logging.getLogger(__name__)

MODELS = ("RM-SV", "RM-MV", "RM-SVS", "PPSR")


@dataclass
class ExperimentResult:
    per_run: pd.DataFrame
    curves: pd.DataFrame
    clustering: list[MetricReport]
    digest: str
    files: dict[str, Path] = field(default_factory=dict)

    def precision_at(self, model: str, k: int) -> float:
        return metric_at(self.curves, model, k, "precision")

    def recall_at(self, model: str, k: int) -> float:
        return metric_at(self.curves, model, k, "recall")


def load_experiment_dataset(config: PPSRConfig) -> tuple[Dataset, str]:
    exp = config.experiment
    if exp.dataset:
        return load_hetrec(exp.dataset, exp.dataset_kind), exp.dataset_kind
    return generate_synthetic(exp.synthetic), "synthetic"


def experiment_keypair(config: PPSRConfig) -> PaillierKeypair:
    crypto = config.crypto
    if crypto.key_file:
        return load_keypair(crypto.key_file)
    return keygen(crypto.key_bits, seed=crypto.key_seed)


def build_split(dataset: Dataset, config: PPSRConfig, seed: int) -> EvalSplit:
    """Split users, then pick each test user's revealed and held-out likes."""
    exp = config.experiment
    split = make_split(dataset.user_ids, exp.train_fraction, exp.split_seed + seed)
    rng = np.random.default_rng([exp.split_seed, seed])
    rank = dataset.rank
    revealed, relevant = {}, {}
    for u in split.test_users:
        row = rank.values[rank.user_index(u)]
        liked = [rank.item_ids[k] for k in np.flatnonzero(row >= exp.relevance_threshold)]
        order = rng.permutation(len(liked))
        shown = tuple(sorted(liked[i] for i in order[: exp.revealed_items]))
        revealed[u] = shown
        relevant[u] = frozenset(liked) - frozenset(shown)
    return dataclasses.replace(split, revealed=revealed, relevant=relevant)


def training_rank(dataset: Dataset, split: EvalSplit, rank_max: int) -> RankMatrix:
    masked = dataset.rank.masked(split.test_users)
    return RankMatrix(masked.values, masked.user_ids, masked.item_ids, rank_max)


def clustering_list(
    assignment: np.ndarray, rank: RankMatrix, revealed, popularity: np.ndarray
) -> CandidateList:
    """Cluster neighbors of the revealed items, by popularity then item id."""
    shown = [rank.item_index(t) for t in revealed]
    neighbors: set[int] = set()
    for k in shown:
        neighbors |= nearest_neighbors(assignment, k)
    neighbors -= set(shown)
    ordered = sorted(neighbors, key=lambda k: (-popularity[k], rank.item_ids[k]))
    return CandidateList(tuple(rank.item_ids[k] for k in ordered), Provenance.CLUSTERING)


class SocialRanker:
    """Socialized lists for one run, plaintext or through the protocol."""

    def __init__(
        self,
        config: PPSRConfig,
        profiles,
        rank: RankMatrix,
        seed: int,
        keypair: Optional[PaillierKeypair] = None,
    ):
        self.config = config
        self.profiles = profiles
        self.weights = config.similarity.weights()
        self.rank = rank
        self.seed = seed
        self.codec = config.crypto.codec()
        if config.experiment.mode == "protocol":
            if keypair is None:
                raise ConfigError("protocol mode needs a keypair")
            self.bob = BobParty.from_profiles(keypair, profiles, self.weights, self.codec)
            self.alice = AliceParty(
                rank, self.codec, seed=seed, mask_bits=config.crypto.mask_bits
            )
            self.transport = TRANSPORTS[config.experiment.transport](
                timeout=config.experiment.timeout
            )

    def ranked(self, target: int) -> Optional[CandidateList]:
        """The socialized list, or None when it carries no signal."""
        try:
            if self.config.experiment.mode == "protocol":
                result, transcript = run_protocol(self.alice, self.bob, target, self.transport)
                degenerate = transcript.degenerate
            else:
                table = similarity_table(target, self.profiles, self.weights)
                result, degenerate = plaintext_socialized_ranking(
                    table,
                    self.rank,
                    target,
                    self.codec,
                    seed=derive_seed(self.seed, target),
                    mask_bits=self.config.crypto.mask_bits,
                )
        except NoNeighborsError:
            return None
        if degenerate:
            logger.debug("discarding degenerate socialized list for user %s", target)
            return None
        return result


def _recommend(soc: Optional[CandidateList], fallback: CandidateList, revealed, k: int):
    if soc is None:
        return fallback.top(k)
    shown = set(revealed)
    soc = CandidateList(tuple(t for t in soc if t not in shown), Provenance.SOCIALIZED)
    return merge_lists(soc, fallback, k).items


def _cluster_runs(dataset: Dataset, config: PPSRConfig, seed: int, mv_assignment) -> dict:
    K = config.clustering.K
    preds = {}
    for s, view in enumerate(dataset.views, start=1):
        for method in BASELINE_METHODS:
            preds[f"{method}-view{s}"] = baseline_cluster(normalize_view(view), K, method, seed)
    preds["multiview"] = mv_assignment
    return preds


def run_experiment(
    config: PPSRConfig,
    dataset: Optional[Dataset] = None,
    keypair: Optional[PaillierKeypair] = None,
    write: bool = True,
) -> ExperimentResult:
    """Run every model over every seed and write the result files."""
    exp = config.experiment
    digest = config_digest(config)
    if dataset is None:
        dataset, label = load_experiment_dataset(config)
    else:
        label = dataset.kind
    if exp.single_view >= len(dataset.views):
        raise ConfigError(
            f"single_view={exp.single_view} but the dataset has {len(dataset.views)} views"
        )
    if config.clustering.K > dataset.n_items:
        raise ConfigError(f"K={config.clustering.K} exceeds {dataset.n_items} items")
    if exp.mode == "protocol" and keypair is None:
        keypair = experiment_keypair(config)

    profiles = dataset.profiles(min_df=config.similarity.min_df)
    ks = range(exp.k_min, exp.k_max + 1)
    frames = []
    cluster_preds: dict[str, list] = {}

    for seed in exp.seeds:
        clus = config.clustering.model_copy(update={"seed": seed})
        sv_view = normalize_view(dataset.views[exp.single_view])
        sv_assignment = nmf_factorize(sv_view, clus.K, clus).assignment
        mv_assignment = multiview_factorize(dataset.views, clus).assignment
        if dataset.planted is not None:
            for name, pred in _cluster_runs(dataset, config, seed, mv_assignment).items():
                cluster_preds.setdefault(name, []).append(pred)

        split = build_split(dataset, config, seed)
        rank = training_rank(dataset, split, config.crypto.rank_max)
        popularity = (rank.values >= exp.relevance_threshold).sum(axis=0)
        social = SocialRanker(config, profiles, rank, seed, keypair)

        recs: dict[str, dict] = {m: {} for m in MODELS}
        for u in split.test_users:
            if not split.relevant[u]:
                continue
            shown = split.revealed[u]
            sv = clustering_list(sv_assignment, rank, shown, popularity)
            mv = clustering_list(mv_assignment, rank, shown, popularity)
            soc = social.ranked(u)
            recs["RM-SV"][u] = sv.top(exp.k_max)
            recs["RM-MV"][u] = mv.top(exp.k_max)
            recs["RM-SVS"][u] = _recommend(soc, sv, shown, exp.k_max)
            recs["PPSR"][u] = _recommend(soc, mv, shown, exp.k_max)

        for model in MODELS:
            curve = precision_recall_at_k(recs[model], split.relevant, ks)
            curve.insert(0, "seed", seed)
            curve.insert(0, "model", model)
            frames.append(curve)
        track_event("experiment_run", level=logging.DEBUG, seed=seed, test_users=len(recs["PPSR"]))

    per_run = pd.concat(frames, ignore_index=True)
    curves = summarize_curves(per_run)
    reports = [
        clustering_report(preds, dataset.planted, name, label)
        for name, preds in cluster_preds.items()
    ]
    result = ExperimentResult(per_run, curves, reports, digest)
    if write:
        result.files = write_outputs(result, config, label)
    track_event(
        "experiment_finished",
        dataset=label,
        seeds=len(exp.seeds),
        mode=exp.mode,
        ppsr_p5=result.precision_at("PPSR", 5) if 5 in ks else None,
    )
    return result


def write_outputs(result: ExperimentResult, config: PPSRConfig, label: str) -> dict[str, Path]:
    out = Path(config.output.dir)
    files = {
        "metrics": out / "metrics.tsv",
        "curves": out / "curves.tsv",
        "run": out / "run.json",
    }
    atomic_write_text(files["metrics"], frame_to_tsv(result.per_run))
    atomic_write_text(files["curves"], frame_to_tsv(result.curves))
    if result.clustering:
        files["clustering"] = out / "clustering.tsv"
        write_reports(files["clustering"], result.clustering)
    stamp = {
        "version": __version__,
        "config_digest": result.digest,
        "dataset": label,
        "seeds": list(config.experiment.seeds),
        "split_seed": config.experiment.split_seed,
        "mode": config.experiment.mode,
        "models": list(MODELS),
        "files": sorted(p.name for p in files.values()),
    }
    atomic_write_text(files["run"], json.dumps(stamp, indent=2, sort_keys=True) + "\n")
    return files
