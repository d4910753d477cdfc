import json
import time

import pytest

from synthcorpus import make_corpus

from termspot import cli


@pytest.fixture(scope="session")
def synth_corpus(tmp_path_factory):
    """The acceptance-sized synthetic corpus: 30 templates, 200 utterances."""
    root = tmp_path_factory.mktemp("synth200")
    manifest_path, alignments_path = make_corpus(root, n_templates=30, n_utterances=200, seed=718)
    return {"dir": root, "manifest": manifest_path, "alignments": alignments_path}


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A small corpus for service/CLI tests: 6 templates, 16 utterances."""
    root = tmp_path_factory.mktemp("synth_small")
    manifest_path, alignments_path = make_corpus(
        root,
        n_templates=6,
        n_utterances=16,
        seed=42,
        template_dur=(0.25, 0.4),
        gap_range=(0.08, 0.2),
        words_range=(3, 5),
    )
    return {"dir": root, "manifest": manifest_path, "alignments": alignments_path}


def _simulate(corpus, out, workers: int, extra=()):
    argv = [
        "simulate",
        "--manifest",
        str(corpus["manifest"]),
        "--alignments",
        str(corpus["alignments"]),
        "--out",
        str(out),
        "--features",
        "mfcc",
        "--mvn",
        "--workers",
        str(workers),
        "--initial-words",
        "10",
        "--words-per-iteration",
        "10",
        "--iterations",
        "3",
        "--hits-per-word",
        "10",
        "--max-extra-exemplars",
        "5",
        *extra,
    ]
    started = time.time()
    code = cli.main(argv)
    elapsed = time.time() - started
    assert code == 0
    return {"dir": out, "elapsed": elapsed, "report": json.loads((out / "report.json").read_text())}


@pytest.fixture(scope="session")
def sim_run_w1(synth_corpus, tmp_path_factory):
    """Full synthetic run, single worker (the acceptance run)."""
    return _simulate(synth_corpus, tmp_path_factory.mktemp("run_w1"), workers=1)


@pytest.fixture(scope="session")
def sim_run_w8(synth_corpus, tmp_path_factory):
    """Same run with 8 workers, for the determinism criterion."""
    return _simulate(synth_corpus, tmp_path_factory.mktemp("run_w8"), workers=8)
