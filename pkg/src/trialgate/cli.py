"""Operator command line: ingest corpora, query a store, benchmark,
and verify recall against the oracle.

Subcommands write NDJSON to standard output by default (`--format
table` renders fixed-width rows instead), take the store path from
`--store` or the SATIR_STORE environment variable, and exit 0 on
success, 1 on runtime failure, 2 when an ingest produced no entities,
and 64 on usage errors.
"""

import argparse
import json
import os
import statistics
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .closure import RuleSet, from_patient_record, load_rules, run_closure
from .errors import TrialGateError
from .ontology import Ontology, load_ontology
from .projection import (
    GateCNF,
    SaliencePolicy,
    load_policy,
    load_targets,
    project_patient,
    project_trial,
)
from .retrieval import MatchResult, explain, objective_named, retrieve
from .smtparse import parse_patient_facts, parse_trial_program
from .store import build_store, entity_ids, open_store
from .worldgen import build_world_store, generate_world, oracle_match, verify_full_recall

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_EMPTY_INGEST = 2
EXIT_USAGE = 64

_OBJECTIVES = ("treat-chief", "treat-any", "relevant-to-any")


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; the contract here is 64.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class RunConfig:
    """Resolved option set shared by the subcommands."""

    store_path: Optional[Path]
    ontology: Optional[Ontology]
    rules: Optional[RuleSet]
    policy: SaliencePolicy
    objective: str
    knockouts: bool
    workers: int
    seed: int
    fmt: str


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--store", help="store file (default: $SATIR_STORE)")
    parser.add_argument("--ontology", help="ontology JSONL file")
    parser.add_argument("--rules", help="relation rules JSON file")
    parser.add_argument("--policy", help="salience policy JSON file")
    parser.add_argument("--objective", choices=_OBJECTIVES, default="treat-chief")
    parser.add_argument("--knockouts", action="store_true",
                        help="enforce exclusion knockouts")
    parser.add_argument("--workers", type=int, default=1, metavar="N")
    parser.add_argument("--seed", type=int, default=0, metavar="N")
    parser.add_argument("--format", choices=("ndjson", "table"), default="ndjson",
                        dest="fmt")


def build_parser() -> _Parser:
    parser = _Parser(prog="trialgate",
                     description="Constraint-gate retrieval over trial and patient stores.")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    ingest = sub.add_parser("ingest", help="parse corpora and build a store",
                            parents=[], add_help=True)
    ingest.add_argument("trial_dir", help="directory of *_inclusion_program.smt2 / "
                                          "*_exclusion_program.smt2 files")
    ingest.add_argument("patient_dir", help="directory of patient fact JSON files")
    _add_common(ingest)

    query = sub.add_parser("query", help="retrieve matching pairs from a store")
    query.add_argument("patients", nargs="*", metavar="patient_id",
                       help="restrict to these patients (default: all)")
    query.add_argument("--explain", action="store_true",
                       help="attach a clause-level explanation to each match")
    _add_common(query)

    bench = sub.add_parser("bench", help="time per-patient retrieval on a synthetic world")
    bench.add_argument("--trials", type=int, default=200, metavar="N")
    bench.add_argument("--patients", type=int, default=10, metavar="N")
    bench.add_argument("--concepts", type=int, default=40, metavar="N")
    bench.add_argument("--reps", type=int, default=3, metavar="N")
    _add_common(bench)

    verify = sub.add_parser("verify", help="check engine recall against the oracle")
    verify.add_argument("--worlds", type=int, default=25, metavar="N")
    verify.add_argument("--concepts", type=int, default=16, metavar="N")
    verify.add_argument("--trials", type=int, default=8, metavar="N")
    verify.add_argument("--patients", type=int, default=8, metavar="N")
    verify.add_argument("--depth", type=int, default=3, metavar="N")
    verify.add_argument("--missingness", type=float, default=0.35, metavar="RATE")
    verify.add_argument("--lossless", action="store_true",
                        help="generate worlds where engine and oracle must agree exactly")
    _add_common(verify)

    return parser


def _config_from(args: argparse.Namespace, parser: _Parser) -> RunConfig:
    store = args.store or os.environ.get("SATIR_STORE")
    ontology = None
    if args.ontology:
        ontology = load_ontology(Path(args.ontology).read_text())
    rules = load_rules(Path(args.rules).read_text()) if args.rules else None
    policy = SaliencePolicy()
    if args.policy:
        if ontology is None:
            parser.error("--policy requires --ontology")
        policy = load_policy(Path(args.policy).read_text(), ontology)
    if args.workers < 1:
        parser.error("--workers must be at least 1")
    return RunConfig(
        store_path=Path(store) if store else None,
        ontology=ontology, rules=rules, policy=policy,
        objective=args.objective, knockouts=args.knockouts,
        workers=args.workers, seed=args.seed, fmt=args.fmt,
    )


def _emit(record: Dict[str, object], fmt: str, columns: Sequence[str] = ()) -> None:
    if fmt == "ndjson":
        print(json.dumps(record, sort_keys=True))
        return
    keys = columns or sorted(record)
    print("  ".join(f"{k}={record[k]}" for k in keys))


# ---------------------------------------------------------------------------
# ingest


def _trial_file_identity(path: Path) -> Tuple[str, str]:
    stem = path.stem
    for side in ("inclusion", "exclusion"):
        suffix = f"_{side}_program"
        if stem.endswith(suffix):
            return stem[: -len(suffix)], side
    raise TrialGateError(
        f"{path.name}: expected <trial_id>_inclusion_program.smt2 or "
        f"<trial_id>_exclusion_program.smt2")


def _ingest_trial(path: Path, cfg: RunConfig) -> GateCNF:
    trial_id, side = _trial_file_identity(path)
    program = parse_trial_program(path.read_text(), trial_id=trial_id, side=side)
    targets = ()
    sidecar = path.parent / f"{trial_id}_targets.json"
    if side == "inclusion" and sidecar.is_file():
        targets = load_targets(sidecar.read_text())
    return project_trial(program, cfg.ontology, cfg.policy, targets=targets)


def _ingest_patient(path: Path, cfg: RunConfig) -> GateCNF:
    records = parse_patient_facts(path.read_text())
    closed = run_closure([from_patient_record(r) for r in records],
                         cfg.ontology, rules=cfg.rules)
    return project_patient(closed.facts, patient_id=path.stem)


def cmd_ingest(args: argparse.Namespace, cfg: RunConfig, parser: _Parser) -> int:
    if cfg.ontology is None:
        parser.error("ingest requires --ontology")
    if cfg.store_path is None:
        parser.error("ingest requires --store or SATIR_STORE")
    trial_files = sorted(Path(args.trial_dir).glob("*.smt2"))
    patient_files = sorted(Path(args.patient_dir).glob("*.json"))

    gates: List[GateCNF] = []
    errors: List[Dict[str, str]] = []
    counts = {"trials": 0, "patients": 0}

    def attempt(path: Path, kind: str, worker) -> None:
        try:
            gates.append(worker(path, cfg))
            counts[kind] += 1
        except (TrialGateError, OSError, ValueError, KeyError) as exc:
            errors.append({"file": path.name, "error": str(exc)})

    jobs = [(p, "trials", _ingest_trial) for p in trial_files] + \
           [(p, "patients", _ingest_patient) for p in patient_files]
    if cfg.workers > 1:
        # Projection is pure per file; only the result lists are shared.
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            list(pool.map(lambda job: attempt(*job), jobs))
    else:
        for job in jobs:
            attempt(*job)

    gates.sort(key=lambda g: (g.entity_kind, g.owner, g.side, g.subcohort))
    report = {
        "store": str(cfg.store_path),
        "trial_gates": counts["trials"],
        "patient_gates": counts["patients"],
        "errors": sorted(errors, key=lambda e: e["file"]),
    }
    if not gates:
        _emit(report, cfg.fmt)
        print("error: nothing ingested", file=sys.stderr)
        return EXIT_EMPTY_INGEST
    build_store(gates, cfg.store_path).close()
    _emit(report, cfg.fmt)
    return EXIT_OK


# ---------------------------------------------------------------------------
# query


def _result_record(result: MatchResult) -> Dict[str, object]:
    return {
        "trial_id": result.trial_id,
        "subcohort": result.subcohort,
        "patient_id": result.patient_id,
        "supported_clause_count": result.supported_clause_count,
        "relevant_clause_count": result.relevant_clause_count,
    }


def cmd_query(args: argparse.Namespace, cfg: RunConfig, parser: _Parser) -> int:
    if cfg.store_path is None:
        parser.error("query requires --store or SATIR_STORE")
    obj = objective_named(cfg.objective, enforce_knockouts=cfg.knockouts)
    with open_store(cfg.store_path) as handle:
        wanted = list(args.patients) or None
        if cfg.workers > 1:
            if wanted is None:
                wanted = sorted({e for e, _, _ in entity_ids(handle, "Patient")})

            def one(patient_id: str) -> List[MatchResult]:
                with open_store(cfg.store_path) as h:
                    return retrieve(h, obj, patients=[patient_id],
                                    ontology=cfg.ontology)

            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                chunks = list(pool.map(one, wanted))
            results = sorted((r for chunk in chunks for r in chunk),
                             key=lambda r: r.key())
        else:
            results = retrieve(handle, obj, patients=wanted, ontology=cfg.ontology)
        for result in results:
            record = _result_record(result)
            if args.explain:
                report = explain(handle, result.trial_id, result.patient_id,
                                 obj, ontology=cfg.ontology)
                record["explanation"] = report.render()
            _emit(record, cfg.fmt, columns=(
                "trial_id", "subcohort", "patient_id",
                "supported_clause_count", "relevant_clause_count"))
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench


def _store_row_counts(handle) -> Dict[str, int]:
    out = {}
    for table in ("ECNF", "CNFD", "AB", "AN"):
        row = handle.conn.execute(f"SELECT COUNT(*) FROM {table}").fetchone()
        out[table.lower()] = row[0]
    return out


def cmd_bench(args: argparse.Namespace, cfg: RunConfig, parser: _Parser) -> int:
    obj = objective_named(cfg.objective, enforce_knockouts=cfg.knockouts)
    report: Dict[str, object] = {"objective": cfg.objective}
    with tempfile.TemporaryDirectory() as tmp:
        if cfg.store_path and cfg.store_path.is_file():
            handle = open_store(cfg.store_path)
            world = None
            report["store"] = str(cfg.store_path)
        else:
            world = generate_world(cfg.seed, n_concepts=args.concepts,
                                   n_trials=args.trials, n_patients=args.patients)
            started = time.perf_counter()
            handle = build_world_store(world, Path(tmp) / "bench.sqlite3")
            report["build_seconds"] = round(time.perf_counter() - started, 4)
            report["seed"] = cfg.seed
        try:
            patients = sorted({e for e, _, _ in entity_ids(handle, "Patient")})
            report["rows"] = _store_row_counts(handle)
            report["trials"] = len({e for e, _, _ in entity_ids(handle, "Trial")})
            report["patients"] = len(patients)
            latencies: List[float] = []
            pairs = 0
            for _ in range(max(1, args.reps)):
                for patient_id in patients:
                    started = time.perf_counter()
                    results = retrieve(handle, obj, patients=[patient_id])
                    latencies.append(time.perf_counter() - started)
                    pairs += len(results)
            report["matched_pairs"] = pairs // max(1, args.reps)
            report["per_patient_median_seconds"] = round(
                statistics.median(latencies), 6) if latencies else None
            report["per_patient_max_seconds"] = round(
                max(latencies), 6) if latencies else None
        finally:
            handle.close()
        if world is not None:
            started = time.perf_counter()
            oracle_match(world, obj, max_atoms=10 ** 9)
            report["naive_per_pair_seconds"] = round(
                time.perf_counter() - started, 4)
    _emit(report, cfg.fmt)
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify


def cmd_verify(args: argparse.Namespace, cfg: RunConfig, parser: _Parser) -> int:
    obj = objective_named(cfg.objective, enforce_knockouts=cfg.knockouts)

    def one(seed: int) -> Dict[str, object]:
        world = generate_world(seed, n_concepts=args.concepts,
                               n_trials=args.trials, n_patients=args.patients,
                               depth=args.depth,
                               missingness_rate=args.missingness,
                               lossless=args.lossless)
        report = verify_full_recall(world, obj)
        report["seed"] = seed
        report["missed"] = [list(pair) for pair in report["missed"]]
        return report

    seeds = range(cfg.seed, cfg.seed + max(0, args.worlds))
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            reports = list(pool.map(one, seeds))
    else:
        reports = [one(seed) for seed in seeds]

    missed_total = 0
    for report in reports:
        missed_total += len(report["missed"])
        _emit(report, cfg.fmt, columns=(
            "seed", "oracle_count", "engine_count", "extra_count", "recall"))
    summary = {
        "worlds": len(reports),
        "missed_total": missed_total,
        "min_recall": min((r["recall"] for r in reports), default=1.0),
        "extra_total": sum(r["extra_count"] for r in reports),
    }
    _emit(summary, cfg.fmt)
    return EXIT_OK if missed_total == 0 else EXIT_FAILURE


_COMMANDS = {
    "ingest": cmd_ingest,
    "query": cmd_query,
    "bench": cmd_bench,
    "verify": cmd_verify,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config_from(args, parser)
        return _COMMANDS[args.command](args, cfg, parser)
    except (TrialGateError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
