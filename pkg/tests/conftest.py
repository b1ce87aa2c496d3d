"""Shared fixtures.

The expensive trained-model bundle lives in its own module-scoped fixtures in
the tests that need it; everything here is cheap enough to build per session.
"""

import sys

import pytest

from textforge.glyphs import default_atlas
from textforge.tokenizer import default_tokenizer


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance scoreboard (one line per criterion) after the run."""
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "_SCOREBOARD", None) if module else None
    if lines:
        terminalreporter.write_sep("=", "acceptance scoreboard")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def atlas():
    return default_atlas()


@pytest.fixture(scope="session")
def tokenizer():
    return default_tokenizer()


@pytest.fixture(scope="session")
def short_tokenizer():
    from textforge.harness import TOY_CONTEXT

    return default_tokenizer(context_length=TOY_CONTEXT)
