import sys


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance verdicts collected by test_acceptance, one line per criterion."""
    for mod in list(sys.modules.values()):
        results = getattr(mod, "ACCEPTANCE_RESULTS", None)
        if results is None or not results:
            continue
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            parts = results[n]
            ok = all(p[1] for p in parts)
            detail = "; ".join(f"{name}: {'ok' if good else 'FAIL'} ({info})" for name, good, info in parts)
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        break
