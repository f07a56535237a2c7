"""Bundled workload and fault scripts."""

from importlib import resources

BUNDLED = ("basic.wl", "chat_resilience.wl", "faults_kill_chat.fs")


def load_text(name: str) -> str:
    """Read a bundled script by file name."""
    return (resources.files(__package__) / name).read_text(encoding="utf-8")
