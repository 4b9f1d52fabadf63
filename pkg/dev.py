#!/usr/bin/env python3

"""
Development script for normrecon.
Wraps the test suite, linters, servers and a couple of end-to-end smoke runs.
"""

import json
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

CACHE_DIRS = [".pytest_cache", ".ruff_cache", ".hypothesis", "__pycache__"]

SMOKE_EXPERIMENT = {
    "teacher_width": 4,
    "n_train": 500,
    "n_test": 500,
    "student_widths": [4, 16],
    "sparsities": [0.5, 1.0],
    "seeds": [0, 1, 2],
    "sgd": {"epochs": 2, "batch_size": 64},
    "record_wall_time": False,
}


def run_command(cmd, description):
    """Run a shell command, echoing its output; returns True on success."""
    print(f"🔄 {description}...")
    try:
        result = subprocess.run(cmd, shell=True, check=True, capture_output=True, text=True)
    except subprocess.CalledProcessError as e:
        print(f"❌ {description} failed (exit {e.returncode}):")
        print(f"{e.stdout}{e.stderr}")
        return False
    print(f"✅ {description} completed")
    if result.stdout:
        print(result.stdout)
    return True


def serve(args, banner):
    print(banner)
    print("Press Ctrl+C to stop the server")
    try:
        subprocess.run(args, check=True)
    except KeyboardInterrupt:
        print("\n👋 Server stopped")
    except subprocess.CalledProcessError as e:
        print(f"❌ Server exited with {e.returncode}")
        sys.exit(1)


def demo():
    """sample-target -> construct-wide -> construct-deep -> verify in a scratch directory."""
    with tempfile.TemporaryDirectory() as scratch:
        work = Path(scratch)
        target, wide, deep = work / "g.json", work / "f.json", work / "deep.json"
        steps = [
            (f"uv run normrecon sample-target --dim 8 --depth 2 --seed 0 --out {target}", "Sampling target"),
            (
                f"uv run normrecon construct-wide --target {target} --seed 1 --out {wide} --verify 1000",
                "Wide construction",
            ),
            (
                f"uv run normrecon construct-deep --target {target} --chunk 2 --seed 1 --out {deep} --verify 1000",
                "Deep construction (k=2)",
            ),
            (f"uv run normrecon verify --network {deep} --target {target} --samples 1000", "Verifying deep network"),
        ]
        return all(run_command(cmd, description) for cmd, description in steps)


def sweep_smoke():
    """Small width/sparsity sweep; leaves results in ./sweep-smoke."""
    out = Path("sweep-smoke")
    out.mkdir(exist_ok=True)
    config = out / "experiment.json"
    config.write_text(json.dumps(SMOKE_EXPERIMENT, indent=2))
    return run_command(
        f"uv run normrecon sweep --config {config} --out {out / 'results.csv'} "
        f"--report {out / 'summary.json'} --figures {out / 'figures'}",
        "Running smoke sweep",
    )


def clean():
    for cache_dir in CACHE_DIRS:
        if Path(cache_dir).exists():
            shutil.rmtree(cache_dir)
            print(f"🧹 Cleaned {cache_dir}")
    for pyc_file in Path(".").rglob("*.pyc"):
        pyc_file.unlink()
    print("✅ Cleanup completed")
    return True


COMMANDS = {
    "test": ("Run the fast test suite", lambda: run_command('uv run pytest -m "not slow"', "Running tests")),
    "test-all": ("Run every test, including slow acceptance checks", lambda: run_command("uv run pytest", "Running all tests")),
    "lint": ("Run ruff", lambda: run_command("uv run ruff check .", "Running linting")),
    "format": ("Format code with black", lambda: run_command("uv run black .", "Formatting code")),
    "demo": ("Sample a target, construct wide and deep networks, verify", demo),
    "sweep": ("Run a small SGD vs. construction sweep", sweep_smoke),
    "server": (
        "Start the HTTP server (FastAPI + MCP) on port 8000",
        lambda: serve(
            ["uv", "run", "uvicorn", "normrecon.server:app", "--port", "8000"],
            "🚀 Starting normrecon server on http://localhost:8000 ...",
        ),
    ),
    "mcp": (
        "Start the MCP server over stdio",
        lambda: serve(["uv", "run", "run_mcp_server.py"], "🚀 Starting normrecon MCP server (stdio) ..."),
    ),
    "install": (
        "Install dependencies including dev extras",
        lambda: run_command("uv sync --extra dev", "Installing dependencies"),
    ),
    "clean": ("Remove cache files", clean),
}


def usage():
    print("\n🚀 normrecon Development Script\n\nUsage:\n  python dev.py <command>\n\nCommands:")
    for name, (description, _) in COMMANDS.items():
        print(f"  {name:<10}  - {description}")


def main():
    if len(sys.argv) < 2 or sys.argv[1].lower() in ("help", "-h", "--help"):
        usage()
        return

    command = sys.argv[1].lower()
    if command not in COMMANDS:
        print(f"❌ Unknown command: {command}")
        usage()
        sys.exit(1)

    _, action = COMMANDS[command]
    if action() is False:
        sys.exit(1)


if __name__ == "__main__":
    main()
