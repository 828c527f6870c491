"""Stored value of the critical parameter and its integrity hash."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

from .errors import FixtureMismatch

FIXTURE_NAME = "T_fixture.json"


@dataclass(frozen=True)
class Fixture:
    T: float
    method: str
    tolerance: float
    bracket: tuple
    settings: dict
    hash: str

    def as_dict(self):
        return {"T": self.T, "method": self.method, "tolerance": self.tolerance,
                "bracket": list(self.bracket), "settings": self.settings, "hash": self.hash}


def _canonical(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()


def compute_hash(payload: dict) -> str:
    body = {k: v for k, v in payload.items() if k != "hash"}
    return hashlib.sha256(_canonical(body)).hexdigest()


def make_fixture(result, settings: dict) -> Fixture:
    payload = {"T": result.T, "method": result.method.value, "tolerance": result.bracket_width,
               "bracket": list(result.bracket), "settings": settings}
    return Fixture(result.T, payload["method"], payload["tolerance"], tuple(payload["bracket"]),
                   settings, compute_hash(payload))


def write_fixture(fixture: Fixture, path):
    with open(path, "w") as fh:
        json.dump(fixture.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_fixture(path=None) -> Fixture:
    if path is None:
        text = (Path(__file__).parent / "data" / FIXTURE_NAME).read_text()
    else:
        text = Path(path).read_text()
    payload = json.loads(text)
    expected = compute_hash(payload)
    if payload.get("hash") != expected:
        raise FixtureMismatch(f"fixture hash {payload.get('hash')!r} does not match contents ({expected})")
    return Fixture(float(payload["T"]), payload["method"], float(payload["tolerance"]),
                   tuple(payload["bracket"]), payload["settings"], payload["hash"])


@lru_cache(maxsize=None)
def default_fixture() -> Fixture:
    return read_fixture()


_active: Fixture | None = None


def activate(fixture=None) -> Fixture:
    """Make ``fixture`` (a Fixture, a path, or None for the packaged one) the process default."""
    global _active
    if fixture is not None and not isinstance(fixture, Fixture):
        fixture = read_fixture(fixture)
    _active = fixture
    from . import metric
    metric.build_metric.cache_clear()
    return active_fixture()


def active_fixture() -> Fixture:
    return _active if _active is not None else default_fixture()


def default_T() -> float:
    return active_fixture().T
