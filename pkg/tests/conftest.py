import os

import pytest

from o2c.analyzer import build_plan, optimize_plan
from o2c.scenario import compartment_cfg, compartment_ir, compartment_spec

ACCEPTANCE_LINES: list[str] = []

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def record_acceptance(name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def image():
    """The scenario compartment: IR, CFG, spec and both plans."""
    ir, cfg, spec = compartment_ir(), compartment_cfg(), compartment_spec()
    raw = build_plan(ir, cfg, spec)
    return {"ir": ir, "cfg": cfg, "spec": spec, "raw": raw, "opt": optimize_plan(raw, ir, spec)}
