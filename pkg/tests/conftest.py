import pytest

from resdob.config import RunConfig


@pytest.fixture
def small_cfg(tmp_path):
    """Short-episode configuration with a fixed observer bound (no calibration)."""
    def make(mode="res_dob_cbf", seed=0, iterations=2, preset="goal1", **sections):
        cfg = RunConfig().with_overrides(
            run={"seed": seed, "filter_mode": mode, "iterations": iterations, "out": str(tmp_path / mode)},
            task={"preset": preset, "episode_length": 100},
            dob={"error_bound": "0.3"},
            rl={"minibatch": 50, "epochs": 2},
        )
        return cfg.with_overrides(**sections) if sections else cfg
    return make


ACCEPTANCE_LINES = {}


def record(criterion, passed, detail):
    """Store one PASS/FAIL line for the end-of-session acceptance summary."""
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES[criterion] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
