import sys

import numpy as np
import pytest

from gsaug import AssetLibrary, load_scene, make_asset_library, make_demo_bundle


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Replay the acceptance verdict block so piped logs keep one
    PASS/FAIL line per criterion."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "ACCEPTANCE_LINES", ()) if mod else ()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def demo_paths(tmp_path_factory):
    """(bundle.json path, asset manifest path) for the synthetic crossroads."""
    root = tmp_path_factory.mktemp("demo-data")
    bundle = make_demo_bundle(root / "scene")
    manifest = make_asset_library(root / "assets")
    return bundle, manifest


@pytest.fixture(scope="session")
def demo_scene(demo_paths):
    return load_scene(demo_paths[0])


@pytest.fixture(scope="session")
def demo_assets(demo_paths):
    return AssetLibrary.load(demo_paths[1])


@pytest.fixture(autouse=True)
def _no_thread_env(monkeypatch):
    # keep renderer worker count at its default unless a test sets it
    monkeypatch.delenv("GSA_THREADS", raising=False)


@pytest.fixture
def rng():
    return np.random.default_rng(20240911)
