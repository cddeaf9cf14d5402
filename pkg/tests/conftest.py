import torch

# one line per acceptance criterion, echoed in the terminal summary
VERDICTS = []

torch.set_num_threads(1)


def record(criterion, passed, detail):
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
    VERDICTS.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
