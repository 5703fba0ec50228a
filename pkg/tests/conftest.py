import sys
from pathlib import Path

import torch

sys.path.insert(0, str(Path(__file__).parent))
torch.set_num_threads(1)

from hypothesis import settings

# single-core CI boxes make per-example timings noisy
settings.register_profile("default", deadline=None)
settings.load_profile("default")


def pytest_terminal_summary(terminalreporter):
    from acceptance_support import RESULTS, format_line

    if RESULTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(format_line(n))
