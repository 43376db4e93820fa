"""Command-line entry point: ``greenrec filter|optimize|evaluate|report``.

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .agents import evaluate, seed_prompt_text
from .config import RunConfig
from .domain import CandidateKind, CandidateSet, Catalog, Prompt, Session
from .errors import (
    BackendError,
    ConfigError,
    GreenRecError,
    MissingArtifact,
    ParseError,
)
from .ingest import load_catalog, load_sessions, read_candidates, sample_candidates
from .llm.backend import Backend, build_backend
from .metrics import SessionResult, aggregate
from .optimizer import RESULT_FILE, TRIALS_LOG, optimize
from .reranker import filter_candidates, make_scorer
from .runstore import RunStore, default_run_dir

log = logging.getLogger("greenrec")

CANDIDATES_FILE = "candidates.jsonl"
DIAGNOSTICS_FILE = "filter_diagnostics.jsonl"
RETENTION_FILE = "retention.json"
METRICS_FILE = "metrics.json"
PER_SESSION_FILE = "per_session.jsonl"
SPLITS = ("train", "valid", "test")


# -- shared plumbing -----------------------------------------------------------


def resolve_run_dir(cfg: RunConfig) -> Path:
    """Explicit ``paths.run_dir``, else the newest run with the same data hash."""
    if cfg.paths.run_dir:
        return cfg.resolve(cfg.paths.run_dir)
    root = cfg.resolve(cfg.paths.runs_root)
    suffix = "-" + cfg.data_hash()
    if root.is_dir():
        matches = sorted(p for p in root.iterdir() if p.is_dir() and p.name.endswith(suffix))
        if matches:
            return matches[-1]
    return default_run_dir(root, cfg.data_hash())


def snapshot_config(store: RunStore, cfg: RunConfig, command: str) -> None:
    clean = replace(cfg, paths=replace(cfg.paths, run_dir=""))
    store.path(f"config.{command}.toml").write_text(clean.dumps(), encoding="utf-8")


def make_backend(cfg: RunConfig, store: RunStore) -> Backend:
    bcfg = cfg.backend
    if bcfg.kind == "mock" and bcfg.mock_script:
        bcfg = replace(bcfg, mock_script=str(cfg.resolve(bcfg.mock_script)))
    return build_backend(bcfg, store.path("llm_trace.jsonl") if bcfg.trace else None)


def load_split_sessions(cfg: RunConfig, catalog: Catalog, split: str) -> list[Session]:
    path = getattr(cfg.paths, split)
    if not path:
        return []
    return load_sessions(cfg.resolve(path), catalog)


def filtered_candidates(store: RunStore, split: str) -> dict[str, CandidateSet]:
    if not store.exists(CANDIDATES_FILE):
        raise MissingArtifact(str(store.path(CANDIDATES_FILE)))
    return {
        cs.session_id: cs
        for raw, cs in read_candidates(store.path(CANDIDATES_FILE), CandidateKind.FILTERED)
        if raw.get("split") == split
    }


# -- commands ------------------------------------------------------------------


def cmd_filter(cfg: RunConfig, out=None) -> Path:
    cfg.require_files("catalog", "train", "test")
    if cfg.paths.valid:
        cfg.require_files("valid")
    catalog = load_catalog(cfg.resolve(cfg.paths.catalog))
    scorer = make_scorer(cfg.reranker.scorer, cfg.reranker.endpoint)
    store = RunStore(resolve_run_dir(cfg))
    snapshot_config(store, cfg, "filter")

    cand_rows, diag_rows, retention = [], [], {}
    for split in SPLITS:
        sessions = load_split_sessions(cfg, catalog, split)
        if not sessions:
            continue
        kept = 0
        for s in sessions:
            initial = sample_candidates(s, catalog, cfg.ingest.n_initial, cfg.ingest.seed)
            filtered, diag = filter_candidates(scorer, s, initial, catalog, cfg.reranker.k_filter)
            cand_rows.append({**initial.to_json(), "split": split})
            cand_rows.append({**filtered.to_json(), "split": split})
            diag_rows.append({"split": split, **diag.to_json()})
            kept += diag.target_retained
        retention[split] = {"n_sessions": len(sessions), "retained": kept, "rate": kept / len(sessions)}
        print(f"{split}: {len(sessions)} sessions, target retention {kept / len(sessions):.4f}", file=out)

    store.rewrite_jsonl(CANDIDATES_FILE, cand_rows)
    store.rewrite_jsonl(DIAGNOSTICS_FILE, diag_rows)
    store.write_json(RETENTION_FILE, retention)
    print(f"wrote {store.path(CANDIDATES_FILE)}", file=out)
    return store.dir


def cmd_optimize(cfg: RunConfig, out=None) -> Path:
    cfg.require_files("catalog", "train")
    catalog = load_catalog(cfg.resolve(cfg.paths.catalog))
    train = load_split_sessions(cfg, catalog, "train")
    if not train:
        raise GreenRecError("training split is empty")
    store = RunStore(resolve_run_dir(cfg))
    if not store.exists(CANDIDATES_FILE):
        cmd_filter(cfg, out)
    snapshot_config(store, cfg, "optimize")
    candidates = filtered_candidates(store, "train")
    missing = [s.session_id for s in train if s.session_id not in candidates]
    if missing:
        raise MissingArtifact(f"{store.path(CANDIDATES_FILE)} (no filtered set for session {missing[0]!r})")

    backend = make_backend(cfg, store)
    result = optimize(cfg.optimizer, train, catalog, backend, candidates=candidates, store=store)
    stats = result.pool.stats[result.best_prompt.id]
    print(f"{len(result.trials)} trials; best prompt {result.best_prompt.id} "
          f"({result.best_prompt.origin.value}) mean reward {stats.mean:.4f} over {stats.pull_count} pulls",
          file=out)
    print(f"wrote {store.path(RESULT_FILE)}", file=out)
    return store.dir


def _read_prompt(path: Path) -> str:
    text = path.read_text(encoding="utf-8").strip()
    if not text:
        raise ConfigError(f"prompt file is empty: {path}")
    return text


def cmd_evaluate(cfg: RunConfig, prompt_path: str | None = None, out=None) -> Path:
    cfg.require_files("catalog", "test")
    catalog = load_catalog(cfg.resolve(cfg.paths.catalog))
    test = load_split_sessions(cfg, catalog, "test")
    if not test:
        raise GreenRecError("test split is empty; no report written")
    store = RunStore(resolve_run_dir(cfg))
    if not store.exists(CANDIDATES_FILE):
        cmd_filter(cfg, out)
    candidates = filtered_candidates(store, "test")

    if prompt_path is not None:
        if not Path(prompt_path).is_file():
            raise ConfigError(f"prompt file not found: {prompt_path}")
        text = _read_prompt(Path(prompt_path))
    elif store.exists("best_prompt.txt"):
        text = _read_prompt(store.path("best_prompt.txt"))
    else:
        text = seed_prompt_text()
    prompt = Prompt(0, text)

    backend = make_backend(cfg, store)

    def run(session: Session) -> SessionResult:
        cands = candidates[session.session_id]
        try:
            ranked = evaluate(backend, prompt, session, cands, catalog)
        except (BackendError, ParseError) as exc:
            log.warning("session %s failed: %s", session.session_id, exc)
            ranked = None
        return SessionResult(session.session_id, session.target, ranked,
                             retained=session.target in cands.candidates, failed=ranked is None)

    with ThreadPoolExecutor(max_workers=backend.concurrency) as ex:
        results = list(ex.map(run, test))
    report = aggregate(results, catalog, cfg.metrics.cutoffs)

    snapshot_config(store, cfg, "evaluate")
    payload = report.to_json()
    payload["prompt_sha256"] = hashlib.sha256(text.encode()).hexdigest()
    store.write_json(METRICS_FILE, payload)
    store.rewrite_jsonl(PER_SESSION_FILE, report.rows)
    for k in report.cutoffs:
        print(f"HR@{k} {report.hr[k]:.4f}  NDCG@{k} {report.ndcg[k]:.4f}", file=out)
    print(f"failure rate {report.failure_rate:.4f}", file=out)
    print(f"wrote {store.path(METRICS_FILE)}", file=out)
    return store.dir


def _metric_rows(metrics: dict) -> list[tuple[str, str]]:
    rows = []
    for key, value in metrics.items():
        if key == "cutoffs":
            continue
        if isinstance(value, float):
            rows.append((key, f"{value:.4f}"))
        else:
            rows.append((key, str(value)))
    return rows


def _prompt_rows(result: dict | None) -> list[dict]:
    return result["pool"] if result else []


def cmd_report(run_dir: str | Path, fmt: str = "table", out=None) -> None:
    store_dir = Path(run_dir)
    if not (store_dir / METRICS_FILE).is_file():
        raise MissingArtifact(str(store_dir / METRICS_FILE))
    store = RunStore(store_dir)
    metrics = store.read_json(METRICS_FILE)
    result = store.read_json(RESULT_FILE) if store.exists(RESULT_FILE) else None
    n_trials = len(store.read_jsonl(TRIALS_LOG))
    prompts = _prompt_rows(result)

    if fmt == "json":
        print(json.dumps({"metrics": metrics, "trials": n_trials, "prompts": prompts}, indent=2), file=out)
        return
    if fmt == "tsv":
        print("metric\tvalue", file=out)
        for key, value in _metric_rows(metrics):
            print(f"{key}\t{value}", file=out)
        if prompts:
            print(file=out)
            print("prompt_id\torigin\tparent\tpull_count\tmean_reward\tevicted", file=out)
            for p in prompts:
                print(f"{p['id']}\t{p['origin']}\t{p['parent'] if p['parent'] is not None else ''}\t"
                      f"{p['pull_count']}\t{p['mean_reward']:.4f}\t{str(p['evicted']).lower()}", file=out)
        return

    rows = _metric_rows(metrics)
    width = max(len(k) for k, _ in rows)
    print(f"{'Metric'.ljust(width)}  Value", file=out)
    print(f"{'-' * width}  ------", file=out)
    for key, value in rows:
        print(f"{key.ljust(width)}  {value}", file=out)
    if prompts:
        print(file=out)
        print(f"Trials: {n_trials}   best prompt: {result['best_prompt_id']}", file=out)
        print(f"{'Prompt':>6}  {'Origin':<8}  {'Parent':>6}  {'Pulls':>5}  {'Mean':>6}", file=out)
        for p in prompts:
            parent = "-" if p["parent"] is None else str(p["parent"])
            mark = "  (evicted)" if p["evicted"] else ""
            print(f"{p['id']:>6}  {p['origin']:<8}  {parent:>6}  {p['pull_count']:>5}  "
                  f"{p['mean_reward']:>6.4f}{mark}", file=out)


# -- argument parsing ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="greenrec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--seed", type=int, help="override ingest and optimizer seeds")
        p.add_argument("--run-dir", help="run directory (default: newest matching run under paths.runs_root)")
        p.add_argument("--backend", choices=("mock", "http"), help="override backend.kind")
        p.add_argument("--mock-script", help="JSON script for the mock backend")

    common(sub.add_parser("filter", help="sample 100 candidates per session and keep the top 20"))
    p_opt = sub.add_parser("optimize", help="run the prompt-optimization loop on the train split")
    common(p_opt)
    p_opt.add_argument("--max-trials", type=int, help="override optimizer.max_trials")
    p_eval = sub.add_parser("evaluate", help="score a prompt on the test split")
    common(p_eval)
    p_eval.add_argument("--prompt", help="prompt text file (default: the run's best prompt)")
    p_rep = sub.add_parser("report", help="print a run's metrics and prompt summary")
    p_rep.add_argument("run_dir")
    p_rep.add_argument("--format", choices=("table", "json", "tsv"), default="table")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            cmd_report(args.run_dir, args.format)
            return 0
        cfg = RunConfig.load(args.config).with_overrides(
            seed=args.seed, backend=args.backend, mock_script=args.mock_script, run_dir=args.run_dir,
            max_trials=getattr(args, "max_trials", None),
        )
        if args.command == "filter":
            cmd_filter(cfg)
        elif args.command == "optimize":
            cmd_optimize(cfg)
        else:
            cmd_evaluate(cfg, args.prompt)
    except ConfigError as exc:
        print(f"greenrec: config error: {exc}", file=sys.stderr)
        return 2
    except GreenRecError as exc:
        print(f"greenrec: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
