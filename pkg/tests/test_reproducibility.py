#!/usr/bin/env python3
"""
Basic Reproducibility Test
==========================

Checks that the pipeline scripts compile and that a recorded run replays to
byte-identical outputs.

Usage:
    pytest tests/test_reproducibility.py
    python tests/test_reproducibility.py
"""

import py_compile
import sys
import tempfile
from pathlib import Path

CODE_DIR = Path(__file__).resolve().parents[1] / "code"
sys.path.insert(0, str(CODE_DIR))

import fkuq  # noqa: E402
from connectome import LOBE_NAMES  # noqa: E402
from field import reference_posterior, save_field_json  # noqa: E402


def test_scripts_compile():
    """Every pipeline script byte-compiles."""
    scripts = sorted(CODE_DIR.glob("*.py"))
    assert scripts, f"no scripts found in {CODE_DIR}"
    for script in scripts:
        py_compile.compile(str(script), doraise=True)
    print(f"✓ {len(scripts)} scripts compile OK")


def test_config_paths():
    import config_paths

    assert config_paths.CODE_DIR == CODE_DIR
    assert config_paths.DEFAULT_THREADS >= 1
    print("✓ Config paths import OK")


def _replay_check(workdir: Path) -> None:
    graph = workdir / "graph.json"
    assert fkuq.run(["gen-synthetic", "--out", str(graph), "--seed", "5", "--quiet"]) == 0

    posterior = save_field_json(workdir / "posterior.json", LOBE_NAMES, posterior=reference_posterior())
    out = workdir / "mc.csv"
    argv = [
        "uq-mc", "--graph", str(graph),
        "--posterior", str(posterior),
        "--c0", str(workdir / "graph_scan1.csv"), "--already-scaled",
        "--T", "1.0", "--dt", "0.1", "--times", "0.5,1",
        "--samples", "16", "--seed", "7", "--out", str(out), "--quiet",
    ]
    assert fkuq.run(argv) == 0
    manifest = out.with_name("mc.manifest.json")
    first_output = out.read_bytes()
    first_manifest = manifest.read_bytes()

    out.unlink()
    assert fkuq.run(["replay", "--manifest", str(manifest), "--quiet"]) == 0
    assert out.read_bytes() == first_output
    assert manifest.read_bytes() == first_manifest


def test_replay_is_byte_identical(tmp_path):
    _replay_check(tmp_path)
    print("✓ Replay reproduces outputs byte for byte")


if __name__ == '__main__':
    print("Running reproducibility tests...")

    success = True
    for check in (test_scripts_compile, test_config_paths):
        try:
            check()
        except (AssertionError, py_compile.PyCompileError) as exc:
            print(f"ERROR: {check.__name__}: {exc}")
            success = False
    with tempfile.TemporaryDirectory() as tmp:
        try:
            test_replay_is_byte_identical(Path(tmp))
        except AssertionError as exc:
            print(f"ERROR: replay: {exc}")
            success = False

    if success:
        print("\n✓ All tests passed! Project is reproducible.")
        sys.exit(0)
    else:
        print("\n✗ Some tests failed.")
        sys.exit(1)
