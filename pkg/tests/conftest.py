def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS, _line

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for i in sorted(RESULTS):
            terminalreporter.write_line(_line(i, *RESULTS[i]))
