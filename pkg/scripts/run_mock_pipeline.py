#!/usr/bin/env python3
"""End-to-end dry run of the pipeline against the scripted mock endpoint.

Uses the shipped synthetic fixture: starts the mock (10% malformed, seed 42),
annotates all 200 entities with a 7-run self-ensemble, scores the votes
against the fixture gold, and prints the run manifest and report paths.

    python scripts/run_mock_pipeline.py [workdir]
"""

import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
FIXTURE = ROOT / "tests" / "fixtures" / "synthetic"

from entilabel.cli import main as cli_main  # noqa: E402
from entilabel.mockllm import MockScript, start_mock_server  # noqa: E402


def main() -> int:
    workdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="entilabel-"))
    workdir.mkdir(parents=True, exist_ok=True)
    print(f"working directory: {workdir}")

    script = MockScript.from_file(FIXTURE / "mock_script.json")
    server, _ = start_mock_server(script)
    print(f"mock endpoint: {server.url}")
    try:
        run_dir = workdir / "run"
        status = cli_main([
            "annotate",
            "--entities", str(FIXTURE / "entities.jsonl"),
            "--endpoint", server.url,
            "--ensemble", "7",
            "--fallback", "plurality",
            "--out-dir", str(run_dir),
        ])
        if status != 0:
            return status
    finally:
        server.shutdown()

    status = cli_main([
        "metrics",
        "--project", str(FIXTURE),
        "--gold", str(FIXTURE / "expected_gold.jsonl"),
        "--pred", str(run_dir / "votes.jsonl"),
        "--out", str(workdir / "report.json"),
        "--text", str(workdir / "report.txt"),
    ])
    if status != 0:
        return status

    print((workdir / "report.txt").read_text())
    print(f"artifacts: {run_dir}/runs.jsonl, {run_dir}/votes.jsonl, "
          f"{run_dir}/manifest.json, {workdir}/report.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())
