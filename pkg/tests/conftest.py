import json
import os
import time

import pytest

from spikeforge import cli

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DESK_CONFIG = os.path.join(ROOT, "configs", "desk.json")
TINY_CONFIG = os.path.join(ROOT, "configs", "tiny.json")


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """The committed desk pipeline, run once and shared read-only."""
    outdir = str(tmp_path_factory.mktemp("desk"))
    t0 = time.monotonic()
    rc = cli.main(["--config", DESK_CONFIG, "--outdir", outdir, "run"])
    elapsed = time.monotonic() - t0
    assert rc == 0
    return {"outdir": outdir, "elapsed": elapsed}


@pytest.fixture(scope="session")
def desk_report(desk_run):
    with open(os.path.join(desk_run["outdir"], "report.json")) as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def desk_sweep(desk_run):
    outdir = desk_run["outdir"]
    rc = cli.main(["--config", DESK_CONFIG, "--outdir", outdir, "sweep"])
    assert rc == 0
    with open(os.path.join(outdir, "sweep.json")) as fh:
        return json.load(fh)
