"""
Command-line entry point.

Exit status: 0 clean, 1 findings (warnings, violations, escalations, failed
CI, aborted plans), 2 usage or input error. Machine output is JSON on stdout;
diagnostics go to stderr.

State lives in a directory (``--state-dir``, ``$SGXSUPPLY_STATE_DIR`` or the
working directory)::

    scheduler.toml          configuration
    scheduler_state.json    caches, last merges, review queue, escalations
    decisions.jsonl         append-only merge decisions
    ci_history.jsonl        append-only CI records
    repos/<library>/        commits/<id>.json, HEADS.json, escalations.jsonl
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path
from typing import Any, Sequence

from . import auditor, ci, merge, planner, registry, scheduler, store, svn
from .config import Config, ConfigError, load_config

EXIT_OK, EXIT_FINDINGS, EXIT_USAGE = 0, 1, 2
STATE_ENV = "SGXSUPPLY_STATE_DIR"


class UsageError(Exception):
    pass


def _emit(obj: Any) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=False) + "\n")


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from None


def _read_json(path: str) -> Any:
    text = _read_text(path)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def _read_jsonl(path: str) -> list:
    out = []
    for lineno, line in enumerate(_read_text(path).splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from None
    return out


class Context:
    def __init__(self, args: argparse.Namespace) -> None:
        self.state_dir = Path(args.state_dir or os.environ.get(STATE_ENV) or ".")
        config_path = args.config or self.state_dir / "scheduler.toml"
        self.config: Config = load_config(config_path)

    @property
    def repos_dir(self) -> Path:
        return self.state_dir / "repos"

    def library_names(self) -> list[str]:
        if not self.repos_dir.is_dir():
            return []
        return sorted(p.name for p in self.repos_dir.iterdir() if (p / "HEADS.json").exists())

    def load_repos(self) -> dict[str, merge.RepoState]:
        return {name: merge.load_repo(self.repos_dir / name) for name in self.library_names()}

    def save_repos(self, repos: dict[str, merge.RepoState]) -> None:
        for name, repo in repos.items():
            merge.save_repo(repo, self.repos_dir / name)


def _now(args: argparse.Namespace) -> int:
    return int(args.now) if args.now is not None else int(time.time())


def _load_graph(path: str) -> registry.RegistryGraph:
    return registry.load_registry(_read_json(path))


# registry

def cmd_registry_report(args, ctx) -> int:
    graph = _load_graph(args.snapshot)
    ranked = registry.parse_name_list(_read_text(args.ranked))
    top = args.top if args.top is not None else len(ranked)
    report = registry.coverage_report(graph, ranked, top).to_dict()
    if args.format == "text":
        for key, value in report.items():
            print(f"{key}: {value}")
    else:
        _emit(report)
    return EXIT_OK


def cmd_registry_histogram(args, ctx) -> int:
    graph = _load_graph(args.snapshot)
    if args.roots:
        roots = registry.parse_name_list(_read_text(args.roots))
    else:
        roots = sorted(n for n, r in graph.packages.items() if r.status is registry.Status.PORTED)
    hist = registry.closure_histogram(graph, roots)
    if args.format == "text":
        for label, count in hist.buckets.items():
            print(f"{label:>6} {count}")
    else:
        _emit(hist.to_dict())
    return EXIT_OK


def cmd_registry_tally(args, ctx) -> int:
    tally = registry.category_tally(_load_graph(args.snapshot))
    _emit({"categories": tally, "total": sum(tally.values())})
    return EXIT_OK


def cmd_registry_dependents(args, ctx) -> int:
    manifests = registry.load_manifests(_read_text(args.manifests))
    _emit(registry.find_dependents(manifests, args.keyword))
    return EXIT_OK


def cmd_registry_admit(args, ctx) -> int:
    met = {c.strip() for c in (args.criteria or "").split(",") if c.strip()}
    unknown = met - set(registry.ADMISSION_CRITERIA)
    if unknown:
        raise UsageError(f"unknown criteria: {', '.join(sorted(unknown))}")
    report = registry.admission_check({c: True for c in met})
    _emit({"score": report.score, "admitted_hint": report.admitted_hint, "met": list(report.met)})
    return EXIT_OK


# plan

def cmd_plan(args, ctx) -> int:
    graph = _load_graph(args.snapshot)
    if args.root not in graph:
        raise UsageError(f"unknown root package {args.root!r}")
    request = _read_json(args.usages) if args.usages else {}
    try:
        usages, tests, features = planner.parse_plan_request(request)
    except (KeyError, ValueError) as exc:
        raise UsageError(f"{args.usages}: bad plan request: {exc}") from None
    try:
        plan = planner.build_plan(graph, args.root, usages, tests, features)
    except planner.PortAborted as exc:
        print(f"abort: {exc}", file=sys.stderr)
        _emit({"aborted": True, "root": exc.root, "blockers": exc.blockers})
        return EXIT_FINDINGS
    _emit(plan.to_dict())
    return EXIT_OK


# scheduler

def cmd_scheduler_ingest(args, ctx) -> int:
    try:
        patches = [scheduler.Patch.from_dict(raw) for raw in _read_jsonl(args.patches)]
    except (KeyError, ValueError) as exc:
        raise UsageError(f"{args.patches}: bad patch record: {exc}") from None
    state = scheduler.load_state(ctx.state_dir)
    state, skipped = scheduler.enqueue_all(state, ctx.config.scheduler, patches)
    scheduler.save_state(state, ctx.state_dir, written_at=0)
    _emit({"enqueued": len(patches) - len(skipped), "skipped": skipped})
    return EXIT_OK


def _record_escalations(ctx: Context, actions) -> None:
    for a in actions:
        if a.escalation is not None:
            merge.record_escalation(ctx.repos_dir / a.library, a.escalation)


def cmd_scheduler_step(args, ctx) -> int:
    now = _now(args)
    state = scheduler.load_state(ctx.state_dir)
    repos = ctx.load_repos()
    before = len(state.decision_log)
    state, actions = scheduler.scheduler_step(state, ctx.config.scheduler, repos, now)
    ctx.save_repos(repos)
    _record_escalations(ctx, actions)
    scheduler.save_state(state, ctx.state_dir, written_at=now)
    _emit(
        {
            "now": now,
            "decisions": [d.to_dict() for d in state.decision_log[before:]],
            "actions": [a.to_dict() for a in actions],
            "review_queue": [e.to_dict() for e in state.review_queue],
        }
    )
    findings = any(a.kind in ("escalation", "manual_review") for a in actions)
    return EXIT_FINDINGS if findings else EXIT_OK


def cmd_scheduler_approve(args, ctx) -> int:
    now = _now(args)
    state = scheduler.load_state(ctx.state_dir)
    repos = ctx.load_repos()
    state, action = scheduler.approve_review(
        state, args.library, args.approver, now, repos.get(args.library)
    )
    ctx.save_repos(repos)
    _record_escalations(ctx, [action])
    scheduler.save_state(state, ctx.state_dir, written_at=now)
    _emit(action.to_dict())
    return EXIT_FINDINGS if action.kind == "escalation" else EXIT_OK


def cmd_scheduler_resolve(args, ctx) -> int:
    now = _now(args)
    state = scheduler.load_state(ctx.state_dir)
    repos = ctx.load_repos()
    if args.library not in repos:
        raise scheduler.MissingRepo(args.library)
    tree = merge.FileTree.from_dict(_read_json(args.tree))
    state, merged = scheduler.resolve_pending(
        state, args.library, repos[args.library], tree, args.resolver, now
    )
    ctx.save_repos(repos)
    scheduler.save_state(state, ctx.state_dir, written_at=now)
    _emit({"library": args.library, "fork_head": merged.fork_head, "merge_base": merged.merge_base})
    return EXIT_OK


def cmd_scheduler_status(args, ctx) -> int:
    _emit(scheduler.load_state(ctx.state_dir).to_dict(include_log=False))
    return EXIT_OK


# ci

def _runner(args, ctx) -> ci.Runner:
    script = getattr(args, "script", None) or ctx.config.ci.script
    if script:
        path = Path(script)
        if not path.is_absolute() and not path.exists():
            path = ctx.state_dir / path
        return ci.ScriptedRunner(_read_json(str(path)))
    if ctx.config.ci.command:
        return ci.CommandRunner(ctx.config.ci.command)
    raise ci.RunnerUnavailable("configure ci.command or ci.script, or pass --script")


def _history(ctx: Context) -> store.AppendLog:
    return store.AppendLog(ctx.state_dir / "ci_history.jsonl")


def cmd_ci_run(args, ctx) -> int:
    cfg = ctx.config.ci
    configs = ci.expand_matrix(cfg.matrix)
    records = ci.run_ci(
        args.library, configs, _runner(args, ctx), cfg.retry_budget,
        when=_now(args), max_parallel=cfg.max_parallel,
    )
    _history(ctx).extend(r.to_dict() for r in records)
    _emit([r.to_dict() for r in records])
    return EXIT_OK if all(r.passed for r in records) else EXIT_FINDINGS


def cmd_ci_sweep(args, ctx) -> int:
    cfg = ctx.config.ci
    libraries = (
        registry.parse_name_list(_read_text(args.libraries)) if args.libraries else ctx.library_names()
    )
    records, event = ci.daily_sweep(
        libraries, ci.expand_matrix(cfg.matrix), _runner(args, ctx), _now(args),
        cfg.mass_failure_threshold, cfg.retry_budget, max_parallel=cfg.max_parallel,
    )
    _history(ctx).extend(r.to_dict() for r in records)
    failing = sorted({r.library for r in records if not r.passed})
    _emit(
        {
            "libraries": len(libraries),
            "failing": failing,
            "mass_failure": None if event is None else event.to_dict(),
        }
    )
    return EXIT_FINDINGS if failing else EXIT_OK


def collect_attempts(ctx: Context) -> list[ci.Attempt]:
    """CI invocations plus merge attempts (successful decisions and escalations)."""
    records = [ci.CiRecord.from_dict(r) for r in _history(ctx).replay()]
    attempts = ci.attempts_from_records(records)
    for d in store.AppendLog(ctx.state_dir / scheduler.DECISIONS_FILE).replay():
        if d["routed_to"] == scheduler.Route.AUTO_MERGE.value or d.get("approver"):
            attempts.append(ci.Attempt(int(d["timestamp"]), False, d["library"], "merge"))
    for name in ctx.library_names():
        for e in store.AppendLog(ctx.repos_dir / name / "escalations.jsonl").replay():
            attempts.append(ci.Attempt(int(e["created_at"]), True, name, "merge"))
    return attempts


def cmd_ci_report(args, ctx) -> int:
    reports = ci.weekly_aggregate(collect_attempts(ctx), ctx.config.ci.epoch)
    if args.format == "json":
        _emit([r.to_dict() for r in reports])
    else:
        sys.stdout.write(ci.weekly_csv(reports))
    return EXIT_OK


# svn

def cmd_svn_check(args, ctx) -> int:
    try:
        events = [svn.event_from_dict(raw) for raw in _read_jsonl(args.events)]
    except (KeyError, ValueError) as exc:
        raise UsageError(f"{args.events}: bad event: {exc}") from None
    if args.enforce_latest:
        events = svn.enforce_latest_only(events)
    result = svn.check_linear(svn.derive_order(events))
    _emit(result.to_dict())
    return EXIT_OK if result.ok else EXIT_FINDINGS


# audit

def cmd_audit(args, ctx) -> int:
    if args.facts:
        doc = _read_json(args.facts)
    elif args.sources:
        if not args.patterns:
            raise UsageError("--sources requires --patterns")
        root = Path(args.sources)
        if not root.is_dir():
            raise UsageError(f"{root} is not a directory")
        sources = {
            str(p.relative_to(root)).replace(os.sep, "/"): p.read_text(encoding="utf-8", errors="replace")
            for p in sorted(root.rglob("*"))
            if p.is_file() and p.suffix in args.suffix
        }
        doc = auditor.extract_facts(sources, _read_json(args.patterns))
        if args.emit_facts:
            Path(args.emit_facts).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    else:
        raise UsageError("audit needs --facts or --sources")
    warnings = auditor.audit(auditor.load_facts(doc))
    if args.format == "text":
        sys.stdout.write(auditor.text_report(warnings))
    else:
        _emit([w.to_dict() for w in warnings])
    return EXIT_FINDINGS if warnings else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sgxsupply", description="Maintain a fleet of enclave-ported libraries."
    )
    parser.add_argument("--state-dir", help=f"state directory (default ${STATE_ENV} or .)")
    parser.add_argument("--config", help="config file (default <state-dir>/scheduler.toml)")
    sub = parser.add_subparsers(dest="command", required=True)

    reg = sub.add_parser("registry", help="registry reports").add_subparsers(dest="sub", required=True)
    p = reg.add_parser("report", help="coverage of a popularity ranking")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--ranked", required=True)
    p.add_argument("--top", type=int)
    p.add_argument("--format", choices=("json", "text"), default="json")
    p.set_defaults(func=cmd_registry_report)
    p = reg.add_parser("histogram", help="closure-size histogram")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--roots", help="names file (default: all ported packages)")
    p.add_argument("--format", choices=("json", "text"), default="json")
    p.set_defaults(func=cmd_registry_histogram)
    p = reg.add_parser("tally", help="ported packages per category")
    p.add_argument("--snapshot", required=True)
    p.set_defaults(func=cmd_registry_tally)
    p = reg.add_parser("dependents", help="screened projects naming a keyword")
    p.add_argument("--manifests", required=True)
    p.add_argument("--keyword", required=True)
    p.set_defaults(func=cmd_registry_dependents)
    p = reg.add_parser("admit", help="score a candidate against selection criteria")
    p.add_argument("--criteria", default="", help="comma-separated criteria met")
    p.set_defaults(func=cmd_registry_admit)

    p = sub.add_parser("plan", help="porting plan for a package")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--root", required=True)
    p.add_argument("--usages", help="plan-request JSON")
    p.set_defaults(func=cmd_plan)

    sch = sub.add_parser("scheduler", help="patch cache and merge scheduler").add_subparsers(dest="sub", required=True)
    p = sch.add_parser("ingest")
    p.add_argument("--patches", required=True)
    p.set_defaults(func=cmd_scheduler_ingest)
    p = sch.add_parser("step")
    p.add_argument("--now", type=int)
    p.set_defaults(func=cmd_scheduler_step)
    p = sch.add_parser("approve")
    p.add_argument("--library", required=True)
    p.add_argument("--approver", required=True)
    p.add_argument("--now", type=int)
    p.set_defaults(func=cmd_scheduler_approve)
    p = sch.add_parser("resolve")
    p.add_argument("--library", required=True)
    p.add_argument("--tree", required=True, help="resolved tree JSON {path: [lines]}")
    p.add_argument("--resolver", required=True)
    p.add_argument("--now", type=int)
    p.set_defaults(func=cmd_scheduler_resolve)
    p = sch.add_parser("status")
    p.set_defaults(func=cmd_scheduler_status)

    cip = sub.add_parser("ci", help="CI runs and reports").add_subparsers(dest="sub", required=True)
    p = cip.add_parser("run")
    p.add_argument("--library", required=True)
    p.add_argument("--now", type=int)
    p.add_argument("--script", help="scripted runner outcomes JSON")
    p.set_defaults(func=cmd_ci_run)
    p = cip.add_parser("sweep")
    p.add_argument("--now", type=int)
    p.add_argument("--libraries", help="names file (default: repos in the state dir)")
    p.add_argument("--script", help="scripted runner outcomes JSON")
    p.set_defaults(func=cmd_ci_sweep)
    p = cip.add_parser("report")
    p.add_argument("--weekly", action="store_true", default=True)
    p.add_argument("--format", choices=("json", "text"), default="json", help="text is CSV")
    p.set_defaults(func=cmd_ci_report)

    sv = sub.add_parser("svn", help="security version checks").add_subparsers(dest="sub", required=True)
    p = sv.add_parser("check")
    p.add_argument("--events", required=True)
    p.add_argument("--enforce-latest", action="store_true", help="apply the latest-only rewrite first")
    p.set_defaults(func=cmd_svn_check)

    p = sub.add_parser("audit", help="untrusted-resource reachability audit")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--facts")
    src.add_argument("--sources")
    p.add_argument("--patterns")
    p.add_argument("--suffix", nargs="+", default=[".rs"])
    p.add_argument("--emit-facts", help="also write the extracted facts document here")
    p.add_argument("--format", choices=("json", "text"), default="json")
    p.set_defaults(func=cmd_audit)
    return parser


INPUT_ERRORS = (
    UsageError,
    ConfigError,
    registry.RegistryError,
    merge.MergeError,
    scheduler.SchedulerError,
    ci.CiError,
    svn.RetireUnknownVersion,
    auditor.AuditError,
    store.StoreError,
)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        ctx = Context(args)
        return args.func(args, ctx)
    except INPUT_ERRORS as exc:
        field = getattr(exc, "field", None)
        prefix = f"{field}: " if field else ""
        print(f"error: {prefix}{exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
