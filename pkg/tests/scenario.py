"""Scripted end-to-end run of the CLI over five libraries.

    python tests/scenario.py --regen    # rewrite the golden transcript

Libraries: ``rustls`` (mandatory review), ``sgx-lib-000`` (its upstream fix
conflicts with the enclave patch), ``sgx-lib-001`` (keyword-triggered),
``sgx-lib-002`` (capacity-triggered) and ``sgx-lib-003`` (age-triggered).
"""

from __future__ import annotations

import contextlib
import io
import json
import sys
from pathlib import Path

from sgxsupply import cli
from sgxsupply.merge import FileTree, RepoState, save_repo
from sgxsupply.scheduler import DAY

GOLDEN = Path(__file__).parent / "fixtures" / "e2e_golden.txt"

BASE_SRC = ["pub fn parse(input: &[u8]) -> Result<u32, Error> {", "    let n = read_len(input)?;",
            "    Ok(n)", "}"]
SGX_HEADER = ["#![no_std]", "extern crate sgx_tstd as std;"]

LIBS = ["rustls", "sgx-lib-000", "sgx-lib-001", "sgx-lib-002", "sgx-lib-003"]


def _write_jsonl(path: Path, rows) -> None:
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))


def setup(root: Path) -> dict[str, list[dict]]:
    """Create repos and return the two patch feeds (day 1 and day 33)."""
    (root / "scheduler.toml").write_text(
        'keywords = ["fix", "bug", "issue", "release"]\n'
        "max_age_days = 30\ncapacity = 10\n"
        'manual_review = ["rustls", "webpki", "ring", "cryptocorrosion", "wasmi"]\n'
        "\n[ci]\nepoch = 0\nretry_budget = 2\nmass_failure_threshold = 0.25\n"
    )
    feeds = {"day1": [], "day33": []}
    for lib in LIBS:
        base = FileTree({"src/lib.rs": BASE_SRC, "Cargo.toml": [f'name = "{lib}"']})
        repo = RepoState.init(lib, base, timestamp=0)
        forked = dict(base.files)
        forked["src/lib.rs"] = SGX_HEADER + list(BASE_SRC)
        if lib == "sgx-lib-000":
            forked["src/lib.rs"][3] = "    let n = read_len(input).map_err(sgx_err)?;"
        repo.commit_fork(FileTree(forked), "port to sgx", 0)

        def upstream(edit, message, ts):
            files = {p: list(v) for p, v in repo.upstream_tree.files.items()}
            edit(files)
            return repo.commit_upstream(FileTree(files), message, ts)

        def patch(pid, message, ts, commit, feed="day1"):
            feeds[feed].append(
                {"id": pid, "library": lib, "message": message, "timestamp": ts, "upstream_commit": commit}
            )

        if lib == "sgx-lib-000":
            c = upstream(lambda f: f["src/lib.rs"].__setitem__(1, "    let n = read_len(input).context(\"len\")?;"),
                         "bug: report short reads", DAY)
            patch("000-a", "bug: report short reads", DAY, c)
        elif lib == "sgx-lib-002":
            for i in range(10):
                c = upstream(lambda f, i=i: f["src/lib.rs"].append(f"// note {i}"), f"tidy {i}", DAY + i)
                patch(f"002-{i}", f"tidy comments {i}", DAY + i, c)
        else:
            msg = {"rustls": "Fix handshake state machine", "sgx-lib-001": "Fix overflow in parser",
                   "sgx-lib-003": "docs: clarify README"}[lib]
            c = upstream(lambda f: f["Cargo.toml"].append('version = "1.0.1"'), msg, DAY)
            patch(f"{lib[-3:]}-a", msg, DAY, c)
            if lib == "rustls":
                c2 = upstream(lambda f: f["Cargo.toml"].append("# 0.17"), "release 0.17", 33 * DAY)
                patch("tls-b", "release 0.17", 33 * DAY, c2, feed="day33")
        save_repo(repo, root / "repos" / lib)

    _write_jsonl(root / "feed-day1.jsonl", feeds["day1"])
    _write_jsonl(root / "feed-day33.jsonl", feeds["day33"])
    (root / "ci-script.json").write_text(json.dumps({
        "sgx-lib-001": ["network", "pass"],
        "sgx-lib-002:cargo/ubuntu-18.04/debug": ["deterministic"],
        "sgx-lib-003": ["external"],
    }, indent=1))
    return feeds


def _resolved_tree(root: Path) -> Path:
    from sgxsupply.merge import load_repo

    repo = load_repo(root / "repos" / "sgx-lib-000")
    files = {p: list(v) for p, v in repo.fork_tree.files.items()}
    files["src/lib.rs"][3] = '    let n = read_len(input).context("len").map_err(sgx_err)?;'
    path = root / "resolved-000.json"
    path.write_text(json.dumps(files, indent=1))
    return path


COMMANDS = [
    ["scheduler", "ingest", "--patches", "feed-day1.jsonl"],
    ["scheduler", "step", "--now", str(2 * DAY)],
    ["ci", "run", "--library", "sgx-lib-001", "--now", str(2 * DAY), "--script", "ci-script.json"],
    ["ci", "run", "--library", "sgx-lib-002", "--now", str(2 * DAY), "--script", "ci-script.json"],
    ["scheduler", "approve", "--library", "rustls", "--approver", "maintainer-a", "--now", str(3 * DAY)],
    ["scheduler", "step", "--now", str(10 * DAY)],
    ["scheduler", "ingest", "--patches", "feed-day33.jsonl"],
    ["scheduler", "step", "--now", str(33 * DAY)],
    ["scheduler", "resolve", "--library", "sgx-lib-000", "--tree", "resolved-000.json",
     "--resolver", "maintainer-b", "--now", str(34 * DAY)],
    ["ci", "sweep", "--now", str(35 * DAY), "--script", "ci-script.json"],
    ["scheduler", "status"],
    ["ci", "report", "--weekly", "--format", "text"],
]


def run(root: Path) -> str:
    """Run the scenario in ``root`` and return the transcript."""
    import os

    setup(root)
    out = []
    cwd = os.getcwd()
    os.chdir(root)
    try:
        for argv in COMMANDS:
            if argv[:2] == ["scheduler", "resolve"]:
                _resolved_tree(root)
            stdout, stderr = io.StringIO(), io.StringIO()
            with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(stderr):
                code = cli.main(["--state-dir", ".", *argv])
            out.append(f"$ sgxsupply {' '.join(argv)}\n[exit {code}]\n{stdout.getvalue()}")
            if stderr.getvalue():
                out.append(f"[stderr]\n{stderr.getvalue()}")
    finally:
        os.chdir(cwd)
    for name in ("decisions.jsonl", "repos/sgx-lib-000/escalations.jsonl"):
        out.append(f"=== {name}\n{(root / name).read_text()}")
    return "".join(out)


if __name__ == "__main__":
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        text = run(Path(tmp))
    if "--regen" in sys.argv:
        GOLDEN.write_text(text)
    sys.stdout.write(text)
