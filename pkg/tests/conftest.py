"""Shared pytest hooks: collects acceptance-criterion verdicts and prints them at the end."""

CRITERIA = {
    1: "T-dissipativity",
    2: "collision-step oracle",
    3: "conservation and bounds",
    4: "L1 contraction and comparison",
    5: "flux boundedness",
    6: "diffusive limit",
    7: "limit-solver oracle",
    8: "barrier sign certificates",
    9: "ansatz sandwich",
    10: "lower/upper bound persistence",
    11: "horizon arithmetic",
}

RESULTS: dict[int, tuple[bool, str]] = {}


def record(k: int, passed: bool, detail: str) -> str:
    line = f"CRITERION {k:2d} {'PASS' if passed else 'FAIL'}  {CRITERIA[k]}: {detail}"
    RESULTS[k] = (passed, line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k, name in CRITERIA.items():
        if k in RESULTS:
            terminalreporter.write_line(RESULTS[k][1])
        else:
            terminalreporter.write_line(f"CRITERION {k:2d} FAIL  {name}: no result (test did not finish)")
