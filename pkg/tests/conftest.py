import os
import socket
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np
import pytest

from tsreasoner.core import Frame, TimeSeries


class NetworkAccessAttempted(RuntimeError):
    pass


@pytest.fixture(autouse=True)
def _no_network(monkeypatch):
    """The suite is hermetic: any outbound connection fails loudly."""

    def refuse(self, address, *args, **kwargs):
        if isinstance(address, str) or (isinstance(address, tuple) and address and address[0] in ("", None)):
            return _orig_connect(self, address, *args, **kwargs)
        raise NetworkAccessAttempted(f"test tried to connect to {address!r}")

    _orig_connect = socket.socket.connect
    monkeypatch.setattr(socket.socket, "connect", refuse)
    monkeypatch.setattr(socket, "create_connection", lambda *a, **k: (_ for _ in ()).throw(
        NetworkAccessAttempted(f"test tried create_connection{a!r}")))


def series(values, name="value", start=datetime(2020, 1, 1), step=timedelta(hours=1)):
    return TimeSeries(np.asarray(values, dtype=float), start, step, name)


def frame(columns: dict):
    return Frame(tuple(series(v, k) for k, v in columns.items()))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


SNAPSHOT_DIR = Path(__file__).parent / "snapshots"


def assert_snapshot(name: str, text: str):
    """Compare against tests/snapshots/<name>; UPDATE_SNAPSHOTS=1 rewrites it."""
    path = SNAPSHOT_DIR / name
    if os.environ.get("UPDATE_SNAPSHOTS") == "1":
        path.parent.mkdir(exist_ok=True)
        path.write_text(text)
    assert path.exists(), f"missing snapshot {path}; run with UPDATE_SNAPSHOTS=1"
    assert text == path.read_text()


# acceptance criteria outcomes, printed once at the end of the session
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {n:>2}. {title}: {detail}")
