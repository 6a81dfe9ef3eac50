"""
Pytest configuration for posr.

Registers the custom markers and tags everything under tests/commands as
integration (those tests drive the CLI end to end and write files).
"""

import pytest


def pytest_configure(config):
    """Configure pytest with custom markers."""
    config.addinivalue_line(
        "markers", "slow: end-to-end training runs (minutes on a laptop CPU)"
    )
    config.addinivalue_line(
        "markers", "integration: mark test as integration test"
    )


def pytest_collection_modifyitems(config, items):
    """Add markers to tests based on their location."""
    for item in items:
        if "commands" in str(item.fspath):
            item.add_marker(pytest.mark.integration)
