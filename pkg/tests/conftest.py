import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rulegen import lpcore  # noqa: E402
from rulegen.rug import lemma_violations  # noqa: E402

# Running totals over every LP solved anywhere in the session.
AUDIT = {"solves": 0, "optimal": 0, "max_rel_gap": 0.0, "rmp_checked": 0, "lemma_violations": 0}

# One verdict line per acceptance criterion, echoed in the terminal summary.
CRITERIA: list[str] = []


def verdict(number, ok: bool, detail: str) -> str:
    return f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"


def report(number, ok: bool, detail: str) -> bool:
    line = verdict(number, ok, detail)
    CRITERIA.append(line)
    print(line)
    return ok


def _audit(model, sol):
    AUDIT["solves"] += 1
    if sol.status != lpcore.OPTIMAL:
        return
    AUDIT["optimal"] += 1
    rel = sol.duality_gap / (1.0 + abs(sol.objective))
    AUDIT["max_rel_gap"] = max(AUDIT["max_rel_gap"], rel)
    assert rel <= 1e-8, f"duality gap {sol.duality_gap} at objective {sol.objective}"
    if model.kind == "rmp" and not any(t[0] == "fair" for t in model.row_tags):
        AUDIT["rmp_checked"] += 1
        beta = sol.row_duals("cover")
        assert np.all(beta >= -1e-9) and np.all(beta <= 1 + 1e-9), "covering dual outside [0, 1]"
        bad = lemma_violations(sol.values("v"), beta)
        AUDIT["lemma_violations"] += bad
        assert bad == 0, f"{bad} samples break the slack/dual relations"


@pytest.fixture(autouse=True, scope="session")
def solve_audit():
    lpcore.SOLVE_OBSERVERS.append(_audit)
    yield AUDIT
    lpcore.SOLVE_OBSERVERS.remove(_audit)


def pytest_terminal_summary(terminalreporter):
    a = AUDIT
    terminalreporter.write_line(
        f"LP audit: {a['solves']} solves, {a['optimal']} optimal, max relative duality gap "
        f"{a['max_rel_gap']:.2e}, {a['rmp_checked']} master LPs checked, "
        f"{a['lemma_violations']} slack/dual violations"
    )
    if a["solves"]:
        CRITERIA.append(verdict(
            "2+3 (whole session)",
            a["max_rel_gap"] <= 1e-8 and a["lemma_violations"] == 0,
            f"max relative duality gap {a['max_rel_gap']:.2e} <= 1e-8, "
            f"{a['lemma_violations']} slack/dual violations over {a['rmp_checked']} master LPs",
        ))
    for line in CRITERIA:
        terminalreporter.write_line(line)
