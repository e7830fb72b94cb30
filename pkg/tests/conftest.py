import pytest

from shiftselect.harness.config import RunConfig
from shiftselect.synthdata import CorpusSpec, generate_corpus

TINY_SPEC = dict(frames=4, grid=2, patch_dim=4, n_objects=6, n_motions=2, objects_per_video=1, motions_per_video=1)


def tiny_config(**overrides) -> RunConfig:
    cfg = RunConfig.from_dict(
        {
            "model": {"channels": 8, "heads": 2, "text_layers": 1, "video_layers": 2, "select_layers": 1},
            "shift": {"layers": [2], "ratio": 0.5},
            "select": {"k": 2, "samples": 20},
            "optim": {"steps": 4, "batch_size": 4},
        }
    )
    for key, value in overrides.items():
        cfg = cfg.override(key.replace("__", "."), value)
    return cfg


def tiny_corpus(n=8, seed=0, **spec):
    return generate_corpus(CorpusSpec(n_samples=n, seed=seed, **{**TINY_SPEC, **spec}))


@pytest.fixture
def corpus():
    return tiny_corpus()


# acceptance lines, echoed in the terminal summary so they survive output capture
CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        CRITERIA[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[number])
