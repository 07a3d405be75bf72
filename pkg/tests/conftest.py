"""Prints the acceptance summary after the run, one line per criterion."""

ACCEPTANCE: dict[int, list[tuple[str, str]]] = {}


def record(criterion: int, status: str, detail: str) -> None:
    ACCEPTANCE.setdefault(criterion, []).append((status, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        entries = ACCEPTANCE[n]
        statuses = {s for s, _ in entries}
        status = "FAIL" if "FAIL" in statuses else "SKIP" if statuses == {"SKIP"} else "PASS"
        shown = [d for s, d in entries if s == status] or [d for _, d in entries]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {'; '.join(shown)}")
