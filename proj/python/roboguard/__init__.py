"""Python interface to the roboguard monitoring core.

Runs scenarios headless, scores run directories, converts traces and drives
an in-memory system step by step. Structured results come back as plain
dicts and lists.
"""

from __future__ import annotations

import json
from typing import Any, Iterable, Optional

from . import _roboguard
from ._roboguard import Error

__all__ = ["Error", "Session", "convert_trace", "evaluate", "instantaneous_risk", "run", "trace_sha256"]


def run(
    scenario: str,
    out_dir: str,
    *,
    inject: Iterable[str] = (),
    seed: Optional[int] = None,
    detectors: str = "",
    envelope: str = "",
    grouping: str = "",
    validity_filter: Optional[bool] = None,
) -> dict[str, Any]:
    """Run a scenario to its end and write the run directory."""
    return json.loads(
        _roboguard.run(scenario, out_dir, list(inject), seed, detectors, envelope, grouping, validity_filter)
    )


def evaluate(dirs: Iterable[str], out_path: str, window_ms: int = 1000) -> dict[str, Any]:
    """Score run directories; also writes the report to ``out_path``."""
    return json.loads(_roboguard.evaluate(list(dirs), out_path, window_ms))


def convert_trace(text: str, from_format: str, to_format: str) -> str:
    """Re-encode a trace between jsonl, csv and yaml."""
    return _roboguard.convert_trace(text, from_format, to_format)


def trace_sha256(text: str, format: str = "jsonl") -> str:
    """Hash of the canonical jsonl bytes of a trace in any format."""
    return _roboguard.trace_sha256(text, format)


def instantaneous_risk(phi: Iterable[float], envelope_yaml: str) -> float:
    """Risk of one state vector against an envelope given as YAML text."""
    return _roboguard.instantaneous_risk(list(phi), envelope_yaml)


class Session:
    """An in-memory system built from a scenario file and its configs."""

    def __init__(
        self,
        scenario: str,
        *,
        inject: Iterable[str] = (),
        seed: Optional[int] = None,
        detectors: str = "",
        envelope: str = "",
        grouping: str = "",
        validity_filter: Optional[bool] = None,
    ) -> None:
        self._s = _roboguard.Session(scenario, list(inject), seed, detectors, envelope, grouping, validity_filter)

    def step(self) -> bool:
        return self._s.step()

    def run_until(self, t_ms: int) -> None:
        self._s.run_until(t_ms)

    def run_to_end(self) -> None:
        self._s.run_to_end()

    @property
    def now_ms(self) -> int:
        return self._s.now_ms

    @property
    def ended(self) -> bool:
        return self._s.ended

    @property
    def mode(self) -> str:
        return self._s.mode

    def alarms(self, state: Optional[str] = None) -> list[dict[str, Any]]:
        return json.loads(self._s.alarms(state))

    def feedback(self, alarm_id: int, action: str) -> dict[str, Any]:
        return json.loads(self._s.feedback(alarm_id, action))

    def inject(self, kind: str, magnitude: float, duration_ms: int) -> int:
        return self._s.inject(kind, magnitude, duration_ms)

    def enter_safe_mode(self, trigger: str = "operator") -> dict[str, Any]:
        return json.loads(self._s.enter_safe_mode(trigger))

    def exit_safe_mode(self) -> dict[str, Any]:
        return json.loads(self._s.exit_safe_mode())

    def snapshot(self, node: str) -> dict[str, Any]:
        return json.loads(self._s.snapshot(node))

    def frames(self, limit: int = 0) -> list[dict[str, Any]]:
        return json.loads(self._s.frames(limit))

    def health(self) -> dict[str, Any]:
        return json.loads(self._s.health())

    def metrics(self) -> dict[str, Any]:
        return json.loads(self._s.metrics())

    def risk(self) -> dict[str, Any]:
        return json.loads(self._s.risk())

    def trace(self, format: str = "jsonl") -> str:
        return self._s.trace(format)
