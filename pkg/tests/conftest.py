import numpy as np
import pytest

from farmtreat.panel import Panel


def twin_panel(n_controls=6, T=60, t0=40, seed=3):
    """Treated unit identical to control ``c1`` at every period, no effect."""
    rng = np.random.default_rng(seed)
    controls = rng.normal(size=(n_controls, T)).cumsum(axis=1) * 0.3 + rng.normal(size=(n_controls, 1))
    y = np.vstack([controls[1], controls])
    ids = ["treated"] + [f"c{j}" for j in range(n_controls)]
    return Panel(outcomes=y, unit_ids=ids, time_index=np.arange(1, T + 1), treated_units=(0,), t0=t0)


@pytest.fixture
def perfect_twin():
    return twin_panel()


@pytest.fixture
def small_csv(tmp_path):
    path = tmp_path / "panel.csv"
    lines = ["unit,time,value"]
    for u in range(3):
        for t in range(1, 6):
            lines.append(f"u{u},{t},{10 * u + t}")
    path.write_text("\n".join(lines) + "\n")
    return path


ACCEPTANCE = {}


def record(criterion: int, ok: bool, detail: str):
    """Remember an acceptance outcome for the end-of-run summary."""
    ACCEPTANCE[criterion] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
