"""Command line: validate configs, render graphs, run sessions, serve HTTP,
replay persisted logs, and benchmark scripted tasksets.

Exit codes: 0 success, 1 validation problems (bad config, corrupt log,
bad taskset), 2 runtime failures (aborted session, backend errors).
"""
from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from ..backend import BackendError, HttpBackend, scripted_backend
from ..config import (
    ArchitectureConfig,
    ConfigError,
    architecture_path,
    cassette_path,
    load_config,
    lower,
)
from ..engine import AskUser, EngineError, Finalize, start_session
from ..hierarchy import HierarchyError, render_graph
from ..memory import CorruptLog, EventRecord
from ..memory import replay as replay_log
from ..toolkit import ToolkitError
from .metrics import InvalidCounts, bench, load_taskset

VALIDATION_ERRORS = (ConfigError, HierarchyError, ToolkitError, OSError)


def _load(config_ref: str) -> ArchitectureConfig:
    """A path on disk, or the name of a packaged architecture."""
    path = Path(config_ref)
    if not path.is_file():
        path = architecture_path(config_ref)
    return load_config(path, dict(os.environ))


def _resolve_cassette(ref: str) -> Path:
    path = Path(ref)
    if path.is_file():
        return path
    return cassette_path(ref)


def _render_event(record: EventRecord) -> str:
    payload = json.dumps(record.payload, ensure_ascii=False)
    return f"[{record.seq}] {record.agent_id}/{record.kind.value}: {payload}"


@click.group()
def main() -> None:
    """Hierarchical multi-agent sessions: validate, inspect, run, serve."""


@main.command()
@click.argument("config")
def validate(config: str) -> None:
    """Parse and lower CONFIG; exit 0 if structurally valid."""
    try:
        lower(_load(config))
    except VALIDATION_ERRORS as exc:
        click.echo(f"invalid: {exc}", err=True)
        sys.exit(1)
    click.echo("ok")


@main.command()
@click.argument("config")
def graph(config: str) -> None:
    """Render the agent hierarchy of CONFIG as an indented tree."""
    try:
        lowered, _, _ = lower(_load(config))
    except VALIDATION_ERRORS as exc:
        click.echo(f"invalid: {exc}", err=True)
        sys.exit(1)
    click.echo(render_graph(lowered), nl=False)


@main.command()
@click.argument("config")
@click.option("--cassette", default=None,
              help="Scripted replies (file path or packaged name) instead of a live backend.")
@click.option("--session-id", default=None, help="Fixed session id (useful for reproducible logs).")
@click.option("--log-dir", type=click.Path(file_okay=False), default=None,
              help="Persist the event log here when the session ends.")
@click.option("--message", "messages", multiple=True,
              help="User message(s); when omitted, lines are read from stdin.")
@click.option("--workdir", type=click.Path(file_okay=False), default=None,
              help="Session working directory for tool files.")
def run(config, cassette, session_id, log_dir, messages, workdir) -> None:
    """Drive an interactive session in the terminal."""
    try:
        cfg = _load(config)
        backend = scripted_backend(_resolve_cassette(cassette)) if cassette else HttpBackend()
        session = start_session(cfg, backend, session_id=session_id, workdir=workdir)
    except VALIDATION_ERRORS as exc:
        click.echo(f"invalid: {exc}", err=True)
        sys.exit(1)

    def finish(code: int) -> None:
        if log_dir:
            path = session.store.persist(session.session_id, log_dir)
            click.echo(f"event log: {path}", err=True)
        sys.exit(code)

    source = iter(messages) if messages else map(str.rstrip, sys.stdin)
    for text in source:
        if not text:
            continue
        try:
            events, decision = session.user_turn(text)
        except (EngineError, BackendError) as exc:
            click.echo(f"session aborted: {exc}", err=True)
            finish(2)
        for record in events:
            click.echo(_render_event(record))
        if isinstance(decision, AskUser):
            click.echo(f"? {decision.question}")
            continue
        if isinstance(decision, Finalize):
            click.echo(f"= {decision.answer}")
            break
    finish(0)


@main.command()
@click.argument("config")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8787, show_default=True, type=int)
@click.option("--cassette", default=None,
              help="Serve scripted sessions from this cassette instead of a live backend.")
@click.option("--log-dir", type=click.Path(file_okay=False), default=None)
@click.option("--queue-size", default=256, show_default=True, type=int)
@click.option("--workdir", type=click.Path(file_okay=False), default=None)
def serve(config, host, port, cassette, log_dir, queue_size, workdir) -> None:
    """Run the HTTP/WebSocket service with CONFIG as the default architecture."""
    from .service import create_app  # deferred: fastapi only needed here

    try:
        cfg = _load(config)
        lower(cfg)
        backend_factory = None
        if cassette:
            path = _resolve_cassette(cassette)
            backend_factory = lambda body: scripted_backend(path)  # noqa: E731
    except VALIDATION_ERRORS as exc:
        click.echo(f"invalid: {exc}", err=True)
        sys.exit(1)
    app = create_app(
        default_config=cfg,
        backend_factory=backend_factory,
        queue_size=queue_size,
        log_dir=log_dir,
        workdir=workdir,
    )
    import uvicorn

    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command()
@click.argument("events_file", type=click.Path(exists=True, dir_okay=False))
def replay(events_file: str) -> None:
    """Re-render a persisted event log, one line per record."""
    try:
        store = replay_log(events_file)
    except CorruptLog as exc:
        click.echo(f"corrupt log: {exc}", err=True)
        sys.exit(1)
    for session_id in store.sessions():
        for record in store.records(session_id):
            click.echo(_render_event(record))


@main.command(name="bench")
@click.argument("config")
@click.argument("taskset", type=click.Path(exists=True, dir_okay=False))
@click.option("--workdir", type=click.Path(file_okay=False), default=None)
def bench_command(config, taskset, workdir) -> None:
    """Run a scripted taskset and print the pass-rate table."""
    try:
        cfg = _load(config)
        tasks = load_taskset(taskset)
    except (*VALIDATION_ERRORS, ValueError) as exc:
        click.echo(f"invalid: {exc}", err=True)
        sys.exit(1)

    def show(outcome) -> None:
        turn = "finalized" if outcome.finalized else "incomplete"
        stages = (
            f"compile={'pass' if outcome.syntax_pass else 'FAIL'} "
            f"test={'pass' if outcome.functional_pass else 'FAIL'}"
        )
        suffix = f"  error: {outcome.error}" if outcome.error else ""
        click.echo(f"{outcome.name:<20} {turn:<11} {stages}{suffix}")

    try:
        report = bench(cfg, tasks, workdir=workdir, on_task=show)
    except InvalidCounts as exc:
        click.echo(f"invalid: {exc}", err=True)
        sys.exit(1)
    click.echo(
        f"total {report.total}  "
        f"syntax {report.syntax_pass} ({report.syntax_rate:.2f}%)  "
        f"functional {report.functional_pass} ({report.functional_rate:.2f}%)"
    )


if __name__ == "__main__":
    main()
