"""Command-line interface: fit, encode, decode, eval, sweep, inspect, gen."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import evaluation, io, synth, tokenizer
from .core import ROLES, Trajectory

log = logging.getLogger("trajcodec")


def _load_corpus(path: str, roles: str | None, rate_hz: float) -> list[Trajectory]:
    if path.endswith(".csv"):
        if not roles:
            raise ValueError("CSV corpora need --roles (comma-separated, one per column)")
        role_list = [r.strip() for r in roles.split(",")]
        for role in role_list:
            if role not in ROLES:
                raise ValueError(f"unknown role {role!r}; expected one of {ROLES}")
        return [io.load_trajectory_csv(path, role_list, rate_hz)]
    return io.load_corpus_jsonl(path)


def _load_config(path: str | None) -> tokenizer.TokenizerConfig:
    if path is None:
        return tokenizer.TokenizerConfig()
    with open(path, "r", encoding="utf-8") as fh:
        return tokenizer.TokenizerConfig.from_dict(json.load(fh))


def _cmd_fit(args) -> int:
    corpus = _load_corpus(args.corpus, args.roles, args.rate_hz)
    config = _load_config(args.config)
    started = time.perf_counter()
    artifact = tokenizer.fit(corpus, config, seed=args.seed)
    tokenizer.save_artifact(artifact, args.out)
    log.info(
        "fitted %d trajectories (%d chunks) in %.1fs -> %s",
        len(corpus),
        artifact.metadata["n_chunks"],
        time.perf_counter() - started,
        args.out,
    )
    return 0


def _cmd_encode(args) -> int:
    artifact = tokenizer.load_artifact(args.artifact)
    corpus = _load_corpus(args.corpus, args.roles, args.rate_hz)
    tokenized = [tokenizer.tokenize(artifact, traj) for traj in corpus]
    io.save_tokens_jsonl(tokenized, args.out)
    total = sum(t.n_ids for t in tokenized)
    log.info("encoded %d trajectories into %d ids -> %s", len(corpus), total, args.out)
    return 0


def _cmd_decode(args) -> int:
    artifact = tokenizer.load_artifact(args.artifact)
    tokenized = io.load_tokens_jsonl(args.tokens)
    with open(args.out, "w", encoding="utf-8") as fh:
        for entry in tokenized:
            values = tokenizer.detokenize(artifact, entry.chunks, args.embodiment)
            traj = Trajectory(
                values=values,
                channels=artifact.channels,
                rate_hz=args.rate_hz,
                embodiment=args.embodiment or "reconstruction",
                traj_id=entry.traj_id,
            )
            fh.write(json.dumps(io.trajectory_to_record(traj), sort_keys=True))
            fh.write("\n")
    log.info("decoded %d trajectories -> %s", len(tokenized), args.out)
    return 0


def _cmd_eval(args) -> int:
    artifact = tokenizer.load_artifact(args.artifact)
    corpus = _load_corpus(args.corpus, args.roles, args.rate_hz)
    apply_bpe = None
    if args.baseline_bpe != "auto":
        apply_bpe = args.baseline_bpe == "on"
    started = time.perf_counter()
    report = evaluation.evaluate(artifact, corpus, baseline=args.baseline, apply_bpe=apply_bpe)
    elapsed = time.perf_counter() - started
    payload = json.dumps(report.to_dict(), sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(payload)
            fh.write("\n")
    else:
        print(payload)
    # Wall-clock stays out of the report so repeated runs compare bytewise.
    log.info(
        "eval(%s): mae=%.3e R=%.3f pre=%.3f gain=%.3f in %.1fs",
        report.tokenizer,
        report.mae,
        report.ratio,
        report.pre_ratio,
        report.bpe_gain,
        elapsed,
    )
    return 0


def _cmd_sweep(args) -> int:
    with open(args.grid, "r", encoding="utf-8") as fh:
        grid = json.load(fh)
    corpus = _load_corpus(args.corpus, args.roles, args.rate_hz)
    config = _load_config(args.config)
    rows = evaluation.sweep(grid, corpus, seed=args.seed, base_config=config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    evaluation.write_sweep_outputs(rows, out_dir / "sweep.json", out_dir / "frontier.csv")
    failures = [r["label"] for r in rows if "error" in r]
    log.info("sweep wrote %d rows to %s (%d failed)", len(rows), out_dir, len(failures))
    return 1 if failures else 0


def _cmd_inspect(args) -> int:
    artifact = tokenizer.load_artifact(args.artifact)
    usage = []
    for group, book in sorted(artifact.books.items()):
        for layer in range(book.n_layers):
            counts = book.ema_counts[layer]
            total = counts.sum()
            probs = counts[counts > 0] / total if total > 0 else np.array([])
            perplexity = float(np.exp(-np.sum(probs * np.log(probs)))) if probs.size else 0.0
            usage.append(
                {
                    "group": group,
                    "layer": layer,
                    "ema_perplexity": perplexity,
                    "low_mass": int(np.count_nonzero(counts < 1e-2)),
                }
            )
    payload = {
        "version": artifact.version,
        "config": artifact.config.to_dict(),
        "channels": [{"name": c.name, "role": c.role} for c in artifact.channels],
        "base_vocab": artifact.layout.base_vocab,
        "vocab_size": artifact.merges.vocab_size,
        "n_merges": len(artifact.merges.merges),
        "usage": usage,
        "metadata": {
            k: v for k, v in artifact.metadata.items() if k != "losses"
        },
    }
    print(json.dumps(payload, sort_keys=True, indent=2))
    return 0


def _cmd_gen(args) -> int:
    corpus = synth.gen_corpus(
        n_chunks=args.chunks,
        seed=args.seed,
        preset=args.preset,
        horizon=args.horizon,
        rate_hz=args.rate_hz,
        noise=args.noise,
        ragged=args.ragged,
    )
    io.save_corpus_jsonl(corpus, args.out)
    log.info("generated %d trajectories -> %s", len(corpus), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajcodec",
        description="Compress action trajectories into discrete token streams and back.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_corpus_opts(p):
        p.add_argument("--corpus", required=True, help="JSONL corpus (or a single-trajectory CSV)")
        p.add_argument("--roles", help="comma-separated part roles for CSV columns")
        p.add_argument("--rate-hz", type=float, default=30.0, help="sampling rate for CSV input")

    p = sub.add_parser("fit", help="train a tokenizer artifact on a corpus")
    add_corpus_opts(p)
    p.add_argument("--config", help="JSON config file (defaults otherwise)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="artifact JSON path")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("encode", help="tokenize a corpus with a fitted artifact")
    p.add_argument("--artifact", required=True)
    add_corpus_opts(p)
    p.add_argument("--out", required=True, help="token JSONL path")
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("decode", help="reconstruct trajectories from token files")
    p.add_argument("--artifact", required=True)
    p.add_argument("--tokens", required=True, help="token JSONL path")
    p.add_argument("--embodiment", default="", help="stats key for per-embodiment artifacts")
    p.add_argument("--rate-hz", type=float, default=30.0, help="rate recorded on decoded output")
    p.add_argument("--out", required=True, help="reconstructed corpus JSONL path")
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("eval", help="measure reconstruction error and compression")
    p.add_argument("--artifact", required=True)
    add_corpus_opts(p)
    p.add_argument("--baseline", choices=evaluation.BASELINES, help="evaluate a reference tokenizer instead")
    p.add_argument(
        "--baseline-bpe",
        choices=("auto", "on", "off"),
        default="auto",
        help="pair the baseline with BPE (auto: only the DCT baseline)",
    )
    p.add_argument("--out", help="report JSON path (stdout otherwise)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="train/evaluate a config grid on a 9:1 split")
    p.add_argument("--grid", required=True, help="JSON object: config field -> list of values")
    add_corpus_opts(p)
    p.add_argument("--config", help="base config JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("inspect", help="summarize a fitted artifact")
    p.add_argument("--artifact", required=True)
    p.set_defaults(func=_cmd_inspect)

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    p.add_argument("--preset", choices=synth.PRESETS, default="sinusoid")
    p.add_argument("--chunks", type=int, required=True, help="minimum number of full chunks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=int, default=30)
    p.add_argument("--rate-hz", type=float, default=30.0)
    p.add_argument("--noise", type=float, default=5e-4)
    p.add_argument("--ragged", action="store_true", help="include partial trailing chunks")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
