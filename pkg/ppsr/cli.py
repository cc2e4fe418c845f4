"""Command-line front end for the PPSR toolkit.

Every command reads the same JSON config (``--config`` or ``PPSR_CONFIG``)
and accepts ``--set section.key=value`` overrides. Without an
``experiment.dataset`` directory the commands run on the synthetic dataset
described by ``experiment.synthetic``.

Exit codes: 0 success, 2 config error, 3 data error, 4 protocol error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any

from ppsr import __version__
from ppsr.config import PPSRConfig, config_json, load_config
from ppsr.errors import DataError, PPSRError
from ppsr.events import configure_logging


def _config(args: argparse.Namespace) -> PPSRConfig:
    return load_config(args.config, args.overrides)


def _print_json(obj: Any) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _dataset(config: PPSRConfig):
    from ppsr.experiment import load_experiment_dataset

    return load_experiment_dataset(config)


def cmd_config_show(args: argparse.Namespace) -> int:
    sys.stdout.write(config_json(_config(args)))
    return 0


def cmd_cluster(args: argparse.Namespace) -> int:
    from ppsr.evaluation import clustering_accuracy, nmi, pairwise_f1
    from ppsr.multiview_nmf import multiview_factorize

    config = _config(args)
    dataset, label = _dataset(config)
    model = multiview_factorize(dataset.views, config.clustering)
    if args.model_out:
        model.save(args.model_out)
    summary: dict[str, Any] = {
        "dataset": label,
        "items": dataset.n_items,
        "views": list(dataset.view_names),
        "K": model.K,
        "iterations": model.iterations,
        "objective": model.objective_trace[-1] if model.objective_trace else None,
        "cluster_sizes": [int((model.assignment == c).sum()) for c in range(model.K)],
    }
    if dataset.planted is not None:
        summary["accuracy"] = clustering_accuracy(model.assignment, dataset.planted)
        summary["f1"] = pairwise_f1(model.assignment, dataset.planted)
        summary["nmi"] = nmi(model.assignment, dataset.planted)
    _print_json(summary)
    return 0


def cmd_baselines(args: argparse.Namespace) -> int:
    from ppsr.evaluation import BASELINE_METHODS, baseline_cluster, clustering_report, write_reports
    from ppsr.multiview_nmf import multiview_factorize, normalize_view

    config = _config(args)
    dataset, label = _dataset(config)
    if dataset.planted is None:
        raise DataError(f"{label} has no ground-truth item clusters to score against")
    K = config.clustering.K
    preds: dict[str, list] = {}
    for seed in config.experiment.seeds:
        for s, view in enumerate(dataset.views, start=1):
            for method in BASELINE_METHODS:
                pred = baseline_cluster(normalize_view(view), K, method, seed)
                preds.setdefault(f"{method}-view{s}", []).append(pred)
        clus = config.clustering.model_copy(update={"seed": seed})
        preds.setdefault("multiview", []).append(multiview_factorize(dataset.views, clus).assignment)

    reports = [clustering_report(p, dataset.planted, name, label) for name, p in preds.items()]
    out = Path(config.output.dir) / "clustering.tsv"
    write_reports(out, reports)
    print(f"{'algorithm':<16} {'acc':>14} {'f1':>14} {'nmi':>14}")
    for r in reports:
        print(
            f"{r.algorithm:<16} {r.accuracy:6.3f} ±{r.accuracy_std:5.3f}  "
            f"{r.f1:6.3f} ±{r.f1_std:5.3f}  {r.nmi:6.3f} ±{r.nmi_std:5.3f}"
        )
    print(f"wrote {out}")
    return 0


def cmd_similarity(args: argparse.Namespace) -> int:
    from ppsr.social_similarity import similarity_table, write_similarity_table

    config = _config(args)
    dataset, _ = _dataset(config)
    profiles = dataset.profiles(min_df=config.similarity.min_df)
    table = similarity_table(args.target, profiles, config.similarity.weights())
    if args.out:
        write_similarity_table(args.out, args.target, table)
        print(f"wrote {len(table)} scores to {args.out}")
    else:
        for user, score in sorted(table.items()):
            print(f"{args.target}\t{user}\t{score:.6f}")
    return 0


def cmd_keygen(args: argparse.Namespace) -> int:
    from ppsr.paillier import keygen, save_keypair

    config = _config(args)
    bits = args.bits or config.crypto.key_bits
    keypair = keygen(bits, seed=args.seed)
    save_keypair(args.out, keypair)
    _print_json({"bits": bits, "key_id": keypair.key_id, "path": str(args.out)})
    return 0


def _keypair(args: argparse.Namespace, config: PPSRConfig):
    from ppsr.experiment import experiment_keypair
    from ppsr.paillier import load_keypair

    if getattr(args, "key", None):
        return load_keypair(args.key)
    return experiment_keypair(config)


def cmd_recommend(args: argparse.Namespace) -> int:
    from ppsr.experiment import clustering_list
    from ppsr.multiview_nmf import multiview_factorize
    from ppsr.protocol import AliceParty, BobParty, CandidateList, Provenance, merge_lists, run_protocol
    from ppsr.transport import HttpTransport, InProcessTransport, SocketTransport

    config = _config(args)
    dataset, _ = _dataset(config)
    codec = config.crypto.codec()
    alice = AliceParty(dataset.rank, codec, seed=args.seed, mask_bits=config.crypto.mask_bits)
    timeout = args.timeout if args.timeout is not None else config.experiment.timeout

    if args.transport == "http":
        if not args.url:
            print("--url is required with --transport http", file=sys.stderr)
            return 2
        bob = None
        transport = HttpTransport(base_url=args.url, timeout=timeout)
    else:
        profiles = dataset.profiles(min_df=config.similarity.min_df)
        bob = BobParty.from_profiles(
            _keypair(args, config), profiles, config.similarity.weights(), codec
        )
        transport = (
            SocketTransport(timeout=timeout)
            if args.transport == "socket"
            else InProcessTransport(timeout=timeout)
        )

    result, transcript = run_protocol(alice, bob, args.target, transport)
    revealed = [t for t in args.liked if t in set(dataset.item_ids)]
    socialized = CandidateList(
        tuple(t for t in result if t not in set(revealed)), Provenance.SOCIALIZED
    )
    out: dict[str, Any] = {
        "target": args.target,
        "transport": args.transport,
        "degenerate": transcript.degenerate,
        "socialized": list(socialized.top(args.top_k)),
    }
    if revealed:
        model = multiview_factorize(dataset.views, config.clustering)
        popularity = (dataset.rank.values >= config.experiment.relevance_threshold).sum(axis=0)
        clustered = clustering_list(model.assignment, dataset.rank, revealed, popularity)
        merged = clustered.top(args.top_k) if transcript.degenerate else merge_lists(
            socialized, clustered, args.top_k
        ).items
        out["merged"] = list(merged)
    _print_json(out)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    from ppsr.experiment import run_experiment

    config = _config(args)
    result = run_experiment(config)
    print(result.curves.to_string(index=False, float_format=lambda x: f"{x:.4f}"))
    for name, path in sorted(result.files.items()):
        print(f"wrote {name}: {path}")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    from ppsr.data_io import generate_synthetic, write_synthetic
    from ppsr.matrixfile import dump_matrix

    config = _config(args)
    dataset = generate_synthetic(config.experiment.synthetic)
    out = Path(args.out)
    written = write_synthetic(dataset, out)
    if args.dump_views:
        for name, view in zip(dataset.view_names, dataset.views):
            dump_matrix(out / f"{name}.matrix", view.data)
            written.append(out / f"{name}.matrix")
        dump_matrix(out / "planted.matrix", dataset.planted[None, :])
        written.append(out / "planted.matrix")
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    from ppsr.protocol import BobParty
    from ppsr.server import serve

    config = _config(args)
    dataset, _ = _dataset(config)
    profiles = dataset.profiles(min_df=config.similarity.min_df)
    bob = BobParty.from_profiles(
        _keypair(args, config), profiles, config.similarity.weights(), config.crypto.codec()
    )
    serve(bob, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="Config file (else PPSR_CONFIG/defaults)")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override a config key, e.g. clustering.K=4 (repeatable)",
    )

    p = argparse.ArgumentParser(
        prog="ppsr", description="Privacy-preserving socialized recommendation toolkit"
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="More logging (-v, -vv)")
    sub = p.add_subparsers(dest="cmd", required=True)

    # cluster
    p_cluster = sub.add_parser("cluster", parents=[common], help="Run multi-view clustering")
    p_cluster.add_argument("--model-out", default=None, help="Save the factor model here")
    p_cluster.set_defaults(func=cmd_cluster)

    # baselines
    p_base = sub.add_parser("baselines", parents=[common], help="Compare clustering baselines")
    p_base.set_defaults(func=cmd_baselines)

    # similarity
    p_sim = sub.add_parser("similarity", parents=[common], help="Similarity table for one user")
    p_sim.add_argument("--target", type=int, required=True)
    p_sim.add_argument("--out", default=None, help="TSV path (default: stdout)")
    p_sim.set_defaults(func=cmd_similarity)

    # keygen
    p_key = sub.add_parser("keygen", parents=[common], help="Generate a Paillier keypair")
    p_key.add_argument("--out", required=True, help="Keypair JSON path")
    p_key.add_argument("--bits", type=int, default=None, help="Modulus size (default: crypto.key_bits)")
    p_key.add_argument("--seed", type=int, default=None, help="Reproducible keys (testing only)")
    p_key.set_defaults(func=cmd_keygen)

    # recommend
    p_rec = sub.add_parser("recommend", parents=[common], help="Run the protocol for one user")
    p_rec.add_argument("--target", type=int, required=True)
    p_rec.add_argument("--transport", choices=["inprocess", "socket", "http"], default="inprocess")
    p_rec.add_argument("--url", default=None, help="Bob server base URL (http transport)")
    p_rec.add_argument("--key", default=None, help="Keypair JSON (else crypto.key_file/new key)")
    p_rec.add_argument("--liked", type=int, nargs="*", default=[], help="Items the target liked")
    p_rec.add_argument("--top-k", type=int, default=10)
    p_rec.add_argument("--seed", type=int, default=None, help="Seed tokens and mask (testing only)")
    p_rec.add_argument(
        "--timeout",
        type=float,
        default=None,
        help="Seconds to wait per frame (default: experiment.timeout)",
    )
    p_rec.set_defaults(func=cmd_recommend)

    # eval
    p_eval = sub.add_parser("eval", parents=[common], help="Run the recommendation experiment")
    p_eval.set_defaults(func=cmd_eval)

    # synth
    p_syn = sub.add_parser("synth", parents=[common], help="Write a synthetic dataset")
    p_syn.add_argument("--out", required=True, help="Output directory")
    p_syn.add_argument("--dump-views", action="store_true", help="Also dump view matrices")
    p_syn.set_defaults(func=cmd_synth)

    # serve
    p_srv = sub.add_parser("serve", parents=[common], help="Run Bob's HTTP service")
    p_srv.add_argument("--host", default="127.0.0.1")
    p_srv.add_argument("--port", type=int, default=8000)
    p_srv.add_argument("--key", default=None, help="Keypair JSON (else crypto.key_file/new key)")
    p_srv.set_defaults(func=cmd_serve)

    # config
    p_cfg = sub.add_parser("config", help="Inspect the effective config")
    cfg_sub = p_cfg.add_subparsers(dest="cfg_cmd", required=True)
    p_show = cfg_sub.add_parser("show", parents=[common], help="Print the effective config")
    p_show.set_defaults(func=cmd_config_show)

    return p


def main(argv: list[str] | None = None) -> None:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)
    try:
        rc = int(args.func(args))
    except PPSRError as e:
        print(f"error: {e}", file=sys.stderr)
        rc = e.exit_code
    raise SystemExit(rc)


if __name__ == "__main__":
    main()
