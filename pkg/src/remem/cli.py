"""Command-line shell: chat REPL, scripted evaluation, bank inspection,
fixture generation, and the HTTP service runner.

Exit codes: 0 success, 1 metric floor not met, 2 usage error (click's
default for bad invocations).
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .config import RuntimeConfig, load_config
from .evaluation import (compare_modes, load_record, metrics_report,
                         render_comparison_table)
from .fixtures import write_fixtures
from .reranker import Reranker, load_params
from .transcripts import TranscriptStore


def _runtime(config_path, **overrides) -> RuntimeConfig:
    cfg = load_config(config_path)
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg


@click.group()
def main():
    """Long-term dialogue memory engine."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="Runtime config JSON.")
@click.option("--owner", default=None)
@click.option("--data-dir", default=None)
@click.option("--mode", default=None)
@click.option("--seed", type=int, default=None)
@click.option("--verbose", is_flag=True,
              help="Print selection traces, rewards, and update stats.")
def chat(config_path, owner, data_dir, mode, seed, verbose):
    """Interactive REPL for one owner; /end closes the session."""
    cfg = _runtime(config_path, owner=owner, data_dir=data_dir, mode=mode,
                   seed=seed)
    engine = cfg.make_engine()
    session_id = engine.start_session()
    click.echo(f"session {session_id} open; /end closes it, Ctrl-D quits")
    while True:
        try:
            line = input("> ").strip()
        except EOFError:
            click.echo()
            break
        if not line:
            continue
        if line == "/end":
            report = engine.end_session()
            click.echo(json.dumps(report.to_dict(), indent=2))
            session_id = engine.start_session()
            click.echo(f"session {session_id} open")
            continue
        result = engine.run_turn(line)
        click.echo(result.response)
        if verbose:
            detail = result.to_dict()
            detail.pop("response")
            click.echo(json.dumps(detail), err=True)
    if engine.session is not None and not engine.session.closed \
            and engine.session.turns:
        report = engine.end_session()
        click.echo(json.dumps(report.to_dict(), indent=2))


@main.command()
@click.argument("transcripts", type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None)
@click.option("--owner", default=None)
@click.option("--data-dir", default=None)
@click.option("--mode", default=None)
def ingest(transcripts, config_path, owner, data_dir, mode):
    """Replay a transcript JSONL file into the memory bank."""
    cfg = _runtime(config_path, owner=owner, data_dir=data_dir, mode=mode)
    engine = cfg.make_engine()
    engine.replay(TranscriptStore.load(transcripts))
    click.echo(json.dumps(engine.metrics(), indent=2))


@main.command("eval")
@click.argument("script", type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None)
@click.option("--mode", default=None)
@click.option("--seed", type=int, default=None)
@click.option("--record-out", type=click.Path(), default=None,
              help="Also write the full run record for later comparison.")
def eval_command(script, config_path, mode, seed, record_out):
    """Run a scripted evaluation and print the metrics report JSON."""
    cfg = _runtime(config_path, mode=mode, seed=seed)
    engine = cfg.make_engine()
    payload = json.loads(Path(script).read_text(encoding="utf-8"))
    record = engine.run_scripted(payload)
    if record_out:
        Path(record_out).write_text(json.dumps(record, indent=2) + "\n",
                                    encoding="utf-8")
    report = metrics_report(record)
    click.echo(report.to_json(), nl=False)
    for metric, floor in (cfg.metric_floors or {}).items():
        value = getattr(report, metric, None)
        if value is None or value < floor:
            click.echo(f"metric floor failed: {metric}={value} < {floor}",
                       err=True)
            sys.exit(1)


@main.command()
@click.argument("records", nargs=-1, required=True,
                type=click.Path(exists=True))
@click.option("--json-out", type=click.Path(), default=None)
def compare(records, json_out):
    """Tabulate metrics for several run records side by side."""
    comparison = compare_modes([load_record(p) for p in records])
    if json_out:
        Path(json_out).write_text(json.dumps(comparison, indent=2) + "\n",
                                  encoding="utf-8")
    click.echo(render_comparison_table(comparison))


@main.command("inspect-bank")
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None)
@click.option("--owner", default=None)
@click.option("--data-dir", default=None, required=False)
@click.option("--limit", type=int, default=10)
def inspect_bank(config_path, owner, data_dir, limit):
    """Summarise the persisted bank for one owner."""
    cfg = _runtime(config_path, owner=owner, data_dir=data_dir)
    engine = cfg.make_engine()
    entries = engine.bank.entries()
    click.echo(f"bank {engine.bank.bank_id}: {len(entries)} entries, "
               f"embedder {engine.bank.embedder.embedder_id}")
    for entry in entries[:limit]:
        segs = ", ".join(f"{s.session_id}:{list(s.turn_indices)}"
                         for s in entry.segments)
        click.echo(f"  {entry.entry_id} (merges={entry.merge_count}) "
                   f"{entry.topic_summary[:60]!r} <- {segs}")


@main.command("gen-fixtures")
@click.option("--out", "out_dir", type=click.Path(), required=True)
def gen_fixtures(out_dir):
    """Write the synthetic evaluation fixtures."""
    for path in write_fixtures(out_dir):
        click.echo(str(path))


@main.group()
def params():
    """Reranker parameter file utilities."""


@params.command("show")
@click.argument("path", type=click.Path(exists=True))
def params_show(path):
    loaded = load_params(path)
    click.echo(json.dumps({
        "dimension": loaded.dimension,
        "tau": loaded.tau, "eta": loaded.eta, "baseline": loaded.baseline,
        "rng_seed": loaded.rng_seed, "update_count": loaded.update_count,
        "w_q_norm": float((loaded.w_q ** 2).sum() ** 0.5),
        "w_m_norm": float((loaded.w_m ** 2).sum() ** 0.5),
    }, indent=2))


@params.command("reset")
@click.argument("path", type=click.Path(exists=True))
def params_reset(path):
    loaded = load_params(path)
    Reranker.zero_init(loaded.dimension, tau=loaded.tau, eta=loaded.eta,
                       baseline=loaded.baseline,
                       rng_seed=loaded.rng_seed).save(path)
    click.echo(f"reset {path} to zero-initialised adapters")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None)
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@click.option("--data-dir", default=None)
def serve(config_path, host, port, data_dir):
    """Run the HTTP service."""
    from .service import serve as run_service
    cfg = _runtime(config_path, bind_host=host, bind_port=port,
                   data_dir=data_dir)
    run_service(cfg)


if __name__ == "__main__":
    main()
