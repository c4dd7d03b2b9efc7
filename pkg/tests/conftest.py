def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdicts so they appear even when output is captured."""
    from tests import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
