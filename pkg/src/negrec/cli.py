"""``negrec`` command-line entry point.

Exit codes: 0 success, 1 runtime failure (including unreadable inputs),
2 usage error, 3 verification failure. Every failure also writes a single
``negrec: error kind=<kind> message=<json string>`` line to stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from pathlib import Path

from negrec import checks
from negrec.catalog import Corpus, SizingError, generate_corpus
from negrec.model import (
    CheckpointError,
    CheckpointVersionError,
    ChecksumError,
    CorruptCheckpointError,
    DimensionError,
    ModelPolicy,
    load_checkpoint,
    save_checkpoint,
)
from negrec.responsiveness import (
    SUMMARY_HEADER,
    ResponsivenessReport,
    measure_responsiveness,
    merge_reports,
)
from negrec.simenv import RandomPolicy, SimConfig, generate_logs, load_logs, save_logs
from negrec.train import TrainConfig, Variant, train

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_VERIFY = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int = EXIT_RUNTIME):
        super().__init__(message)
        self.kind, self.code = kind, code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError("usage", message, EXIT_USAGE)


def _report_error(kind: str, message: str) -> None:
    print(f"negrec: error kind={kind} message={json.dumps(message)}", file=sys.stderr)


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_path, command: str, config: dict, seeds: dict, inputs: list, outputs: list, started: float):
    manifest = {
        "command": command,
        "config": config,
        "seeds": seeds,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {str(p): sha256_file(p) for p in outputs},
        "duration_seconds": round(time.perf_counter() - started, 3),
    }
    Path(str(out_path) + ".manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


_CHECKPOINT_KINDS = (
    (ChecksumError, "checksum"),
    (CheckpointVersionError, "version"),
    (CorruptCheckpointError, "corrupt-checkpoint"),
    (DimensionError, "dimension"),
)


def _read(loader, path, what: str):
    try:
        return loader(path)
    except CheckpointError as exc:
        kind = next(k for cls, k in _CHECKPOINT_KINDS + ((CheckpointError, "checkpoint"),) if isinstance(exc, cls))
        raise CliError(kind, f"cannot load {what} {path}: {exc}") from exc
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CliError("unreadable-input", f"cannot read {what} {path}: {exc}") from exc


def _sim_config(path) -> SimConfig:
    if path is None:
        return SimConfig()
    return _read(lambda p: SimConfig.from_dict(json.loads(Path(p).read_text())), path, "sim config")


# --- subcommands -------------------------------------------------------------


def cmd_gen_corpus(args) -> int:
    started = time.perf_counter()
    try:
        corpus = generate_corpus(
            args.items, args.clusters, args.creators, args.topic_dim, args.seed,
            sigma=args.sigma, creator_weight=args.creator_weight,
        )
    except SizingError as exc:
        raise CliError("sizing", str(exc), EXIT_USAGE) from exc
    corpus.save(args.out)
    write_manifest(args.out, "gen-corpus", corpus.params, {"seed": args.seed}, [], [args.out], started)
    return EXIT_OK


def cmd_gen_logs(args) -> int:
    started = time.perf_counter()
    corpus = _read(Corpus.load, args.corpus, "corpus")
    config = _sim_config(args.sim_config)
    inputs = [args.corpus] + ([args.sim_config] if args.sim_config else [])
    if args.policy == "random":
        policy = RandomPolicy(len(corpus), config.slate_sample_size)
    elif args.policy.startswith("model:"):
        ckpt = args.policy[len("model:"):]
        params = _read(lambda p: load_checkpoint(p, len(corpus)), ckpt, "checkpoint")
        policy = ModelPolicy(params, config.slate_sample_size)
        inputs.append(ckpt)
    else:
        raise CliError("usage", f"unknown policy {args.policy!r}; use random or model:PATH", EXIT_USAGE)
    logs = generate_logs(args.users, args.length, policy, args.seed, corpus, config, workers=args.workers)
    save_logs(logs, args.out)
    write_manifest(
        args.out, "gen-logs",
        {"users": args.users, "length": args.length, "policy": args.policy, "sim": config.to_dict()},
        {"seed": args.seed}, inputs, [args.out], started,
    )
    return EXIT_OK


def cmd_train(args) -> int:
    started = time.perf_counter()
    corpus = _read(Corpus.load, args.corpus, "corpus")
    logs = _read(load_logs, args.logs, "logs")
    doc = {}
    if args.config:
        doc = _read(lambda p: json.loads(Path(p).read_text()), args.config, "train config")
    doc["variant"] = args.variant
    try:
        config = TrainConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise CliError("bad-config", str(exc), EXIT_USAGE) from exc
    params, report = train(logs, config, len(corpus))
    save_checkpoint(params, args.out)
    # relative to the report so reruns in another directory stay byte-identical
    report.checkpoint_path = os.path.relpath(args.out, Path(args.report).parent)
    report.write(args.report)
    curve = Path(args.report).with_suffix(".csv")
    inputs = [args.corpus, args.logs] + ([args.config] if args.config else [])
    write_manifest(args.out, "train", config.to_dict(), {"seed": config.seed}, inputs,
                   [args.out, args.report, curve], started)
    return EXIT_OK


def cmd_measure(args) -> int:
    started = time.perf_counter()
    corpus = _read(Corpus.load, args.corpus, "corpus")
    params = _read(lambda p: load_checkpoint(p, len(corpus)), args.ckpt, "checkpoint")
    config = _sim_config(args.sim_config)
    report = measure_responsiveness(
        params, corpus, args.sims, args.k, args.slate, args.seed, config,
        workers=args.workers, prefork_policy=args.prefork_policy,
    )
    report.write(args.out)
    inputs = [args.corpus, args.ckpt] + ([args.sim_config] if args.sim_config else [])
    write_manifest(
        args.out, "measure",
        {"sims": args.sims, "k": args.k, "slate": args.slate, "prefork_policy": args.prefork_policy,
         "sim": config.to_dict()},
        {"seed": args.seed}, inputs, [args.out, Path(args.out).with_suffix(".csv")], started,
    )
    return EXIT_OK


def cmd_report(args) -> int:
    started = time.perf_counter()
    paths = sorted(p for p in Path(args.input).glob("*.json") if not p.name.endswith(".manifest.json"))
    reports = []
    for p in paths:
        doc = _read(lambda q: json.loads(Path(q).read_text()), p, "report")
        if isinstance(doc, dict) and {"responsiveness", "similarity", "ci"} <= set(doc):
            reports.append(ResponsivenessReport.from_dict(doc))
    if not reports:
        raise CliError("unreadable-input", f"no responsiveness reports found in {args.input}")
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_HEADER)
        writer.writerows(merge_reports(reports))
    write_manifest(args.out, "report", {}, {}, paths, [args.out], started)
    return EXIT_OK


def cmd_verify(args) -> int:
    ok = True
    errors = checks.gradient_suite(args.seed, args.instances)
    for i, err in enumerate(errors):
        passed = err < 1e-4
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} gradient_instance_{i:02d} max_rel_err={err:.3g}")
    for name, passed, detail in checks.property_suite(args.seed):
        ok &= bool(passed)
        print(f"{'PASS' if passed else 'FAIL'} {name} {detail}")
    if not ok:
        raise CliError("verification", "one or more checks failed", EXIT_VERIFY)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="negrec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-corpus", help="generate a synthetic corpus")
    p.add_argument("--items", type=int, required=True)
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--creators", type=int, required=True)
    p.add_argument("--topic-dim", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--sigma", type=float, default=0.25)
    p.add_argument("--creator-weight", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("gen-logs", help="simulate interaction logs")
    p.add_argument("--corpus", required=True)
    p.add_argument("--users", type=int, required=True)
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--policy", default="random", help="random | model:PATH")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--sim-config")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_logs)

    p = sub.add_parser("train", help="train one model variant")
    p.add_argument("--corpus", required=True)
    p.add_argument("--logs", required=True)
    p.add_argument("--variant", required=True, choices=[v.value for v in Variant])
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("measure", help="counterfactual responsiveness measurement")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--sims", type=int, default=2000)
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--slate", type=int, default=50)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--sim-config")
    p.add_argument("--prefork-policy", choices=["model", "random"], default="model")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("report", help="merge responsiveness reports")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("verify", help="gradient and loss self-checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        for name in ("out", "report"):
            if getattr(args, name, None):
                Path(getattr(args, name)).parent.mkdir(parents=True, exist_ok=True)
        return args.func(args)
    except CliError as exc:
        _report_error(exc.kind, str(exc))
        return exc.code
    except Exception as exc:  # noqa: BLE001 - surface as a runtime failure line
        _report_error("runtime", f"{type(exc).__name__}: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
