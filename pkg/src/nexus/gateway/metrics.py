"""Pass-rate arithmetic and a scripted benchmark harness.

The harness drives one session per task, then classifies the produced
artifact with a two-stage external checker: a compile stage (syntax-level
pass) and a test stage (functional-level pass, only attempted when the
compile stage succeeded). Checker commands run inside the session's
working directory, so Python-style and HDL-style checks share the same
protocol.
"""
from __future__ import annotations

import subprocess
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Callable, Iterable

import yaml

from ..backend import Backend, BackendError, scripted_backend
from ..config import ArchitectureConfig, ConfigError, cassette_path
from ..engine import EngineError, Finalize, start_session

TASK_KEYS = {"name", "prompt", "cassette", "compile", "test", "timeout_s"}


class InvalidCounts(ValueError):
    pass


def pass_rate(passed: int, total: int) -> float:
    """Percentage of passing samples, rounded half-up to two decimals."""
    for value in (passed, total):
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvalidCounts(f"counts must be integers, got {value!r}")
    if total <= 0:
        raise InvalidCounts(f"total must be positive, got {total}")
    if not 0 <= passed <= total:
        raise InvalidCounts(f"passed must be in [0, {total}], got {passed}")
    percent = Decimal(100) * Decimal(passed) / Decimal(total)
    return float(percent.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class PassRateReport:
    total: int
    syntax_pass: int
    functional_pass: int
    syntax_rate: float  # percent, 2 dp
    functional_rate: float  # percent, 2 dp

    def __post_init__(self) -> None:
        if not 0 <= self.functional_pass <= self.syntax_pass <= self.total:
            raise InvalidCounts(
                "expected 0 <= functional_pass <= syntax_pass <= total, got "
                f"{self.functional_pass}/{self.syntax_pass}/{self.total}"
            )

    @classmethod
    def from_counts(cls, total: int, syntax_pass: int, functional_pass: int) -> "PassRateReport":
        if total <= 0:
            raise InvalidCounts(f"total must be positive, got {total}")
        if not 0 <= functional_pass <= syntax_pass <= total:
            raise InvalidCounts(
                "expected 0 <= functional_pass <= syntax_pass <= total, got "
                f"{functional_pass}/{syntax_pass}/{total}"
            )
        return cls(
            total=total,
            syntax_pass=syntax_pass,
            functional_pass=functional_pass,
            syntax_rate=pass_rate(syntax_pass, total),
            functional_rate=pass_rate(functional_pass, total),
        )


@dataclass(frozen=True)
class BenchTask:
    name: str
    prompt: str
    cassette: str  # file path or packaged cassette name
    compile_cmd: str
    test_cmd: str
    timeout_s: float = 60.0


@dataclass
class TaskOutcome:
    name: str
    finalized: bool = False
    syntax_pass: bool = False
    functional_pass: bool = False
    error: str = ""


def load_taskset(path: str | Path) -> list[BenchTask]:
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict) or not isinstance(raw.get("tasks"), list):
        raise ValueError("taskset manifest must be a mapping with a `tasks` list")
    tasks: list[BenchTask] = []
    for i, item in enumerate(raw["tasks"]):
        where = f"tasks[{i}]"
        if not isinstance(item, dict):
            raise ValueError(f"{where}: expected a mapping")
        unknown = set(item) - TASK_KEYS
        if unknown:
            raise ValueError(f"{where}: unknown keys {sorted(unknown)}")
        missing = {"name", "prompt", "cassette", "compile", "test"} - set(item)
        if missing:
            raise ValueError(f"{where}: missing keys {sorted(missing)}")
        tasks.append(
            BenchTask(
                name=str(item["name"]),
                prompt=str(item["prompt"]),
                cassette=str(item["cassette"]),
                compile_cmd=str(item["compile"]),
                test_cmd=str(item["test"]),
                timeout_s=float(item.get("timeout_s", 60.0)),
            )
        )
    return tasks


def _resolve_cassette(ref: str) -> Path:
    path = Path(ref)
    if path.is_file():
        return path
    return cassette_path(ref)


def _stage_passes(cmd: str, cwd: Path, timeout_s: float) -> bool:
    try:
        proc = subprocess.run(
            cmd, shell=True, cwd=cwd, capture_output=True, timeout=timeout_s
        )
    except subprocess.TimeoutExpired:
        return False
    return proc.returncode == 0


def bench(
    config: ArchitectureConfig,
    tasks: Iterable[BenchTask],
    *,
    backend_factory: Callable[[BenchTask], Backend] | None = None,
    workdir: str | Path | None = None,
    on_task: Callable[[TaskOutcome], None] | None = None,
) -> PassRateReport:
    """Run every task through its own session and score the artifacts.

    Task failures (backend mismatch, engine abort, checker timeout) are
    recorded on the outcome and count as failures; they never stop the run.
    """
    tasks = list(tasks)
    if not tasks:
        raise InvalidCounts("taskset is empty")
    base = Path(workdir) if workdir else None
    syntax = functional = 0
    for task in tasks:
        outcome = TaskOutcome(name=task.name)
        try:
            backend = (
                backend_factory(task)
                if backend_factory
                else scripted_backend(_resolve_cassette(task.cassette))
            )
            session = start_session(
                config,
                backend,
                session_id=f"bench-{task.name}",
                workdir=base / task.name if base else None,
            )
            _, decision = session.user_turn(task.prompt)
            outcome.finalized = isinstance(decision, Finalize)
        except (EngineError, BackendError, ConfigError, OSError, ValueError) as exc:
            outcome.error = str(exc)
        else:
            outcome.syntax_pass = _stage_passes(
                task.compile_cmd, session.workdir, task.timeout_s
            )
            if outcome.syntax_pass:
                outcome.functional_pass = _stage_passes(
                    task.test_cmd, session.workdir, task.timeout_s
                )
        syntax += outcome.syntax_pass
        functional += outcome.functional_pass
        if on_task:
            on_task(outcome)
    return PassRateReport.from_counts(len(tasks), syntax, functional)
