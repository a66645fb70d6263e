"""Command-line entry points.

    alice synth-gen   write a synthetic dataset tree (+ oracle script)
    alice run         scripted expert-in-the-loop run, report to a directory
    alice serve       HTTP service (and the browser console, if built)
    alice parse       parser debugging against a standalone lexicon
    alice eval        re-score a session snapshot on a dataset split

Exit codes: 0 success, 2 usage/validation error, 3 partial completion
(class pairs exhausted before k rounds), 1 internal error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import errors
from .feature_store import ConfusablePair, SynthParams, generate_synthetic
from .parsing import NoSegmentsFound, load_lexicon, parse as parse_text
from .reporting import write_report
from .session import (
    PHASE_AWAITING,
    SessionConfig,
    evaluate,
    load_session,
    start_session,
    submit_explanations,
    train_round,
)

_VALIDATION_ERRORS = (errors.InvalidParams, errors.MalformedManifest,
                      errors.MissingTensor, errors.DimMismatch,
                      errors.NonFiniteValue, errors.ConfigError)


def _fail(message: str, code: int = 2):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
def main():
    """Expert-in-the-loop training on precomputed feature grids."""


@main.command("synth-gen")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--classes", default=10, show_default=True)
@click.option("--groups", default=5, show_default=True, help="Coarse group count.")
@click.option("--pairs", default=5, show_default=True, help="Planted confusable pairs.")
@click.option("--height", default=8, show_default=True)
@click.option("--width", default=8, show_default=True)
@click.option("--channels", default=16, show_default=True)
@click.option("--n-train", default=15, show_default=True)
@click.option("--n-test", default=30, show_default=True)
@click.option("--n-pool", default=15, show_default=True)
@click.option("--delta", default=2.0, show_default=True)
@click.option("--sigma", default=1.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
def synth_gen(out_dir, classes, groups, pairs, height, width, channels,
              n_train, n_test, n_pool, delta, sigma, seed):
    """Generate a synthetic dataset with planted discriminating segments."""
    defaults = SynthParams()
    if pairs > classes // 2:
        _fail(f"--pairs {pairs} needs at least {2 * pairs} classes")
    segment_names = [s.name for s in defaults.segments]
    params = SynthParams(
        classes=classes, coarse_groups=groups, height=height, width=width,
        channels=channels, n_train=n_train, n_test=n_test, n_pool=n_pool,
        delta=delta, sigma=sigma,
        confusable_pairs=tuple(
            ConfusablePair(2 * i, 2 * i + 1, segment_names[i % len(segment_names)])
            for i in range(pairs)),
    )
    try:
        manifest = generate_synthetic(params, seed=seed, out_dir=out_dir)
    except _VALIDATION_ERRORS as exc:
        _fail(str(exc))
    click.echo(f"wrote {manifest.name}: {len(manifest.samples)} samples, "
               f"{manifest.num_classes} classes -> {out_dir}")


def _load_script(path: str, manifest) -> dict[frozenset, str]:
    script: dict[frozenset, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            pair = record["pair"]
            text = record["text"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise errors.ConfigError(f"{path}:{lineno}: bad script record: {exc}") from exc
        for name in pair:
            try:
                manifest.class_by_name(name)
            except KeyError:
                raise errors.ConfigError(
                    f"{path}:{lineno}: unknown class name {name!r}") from None
        script[frozenset(pair)] = text
    return script


@main.command("run")
@click.option("--dataset", required=True, type=click.Path())
@click.option("--script", "script_path", type=click.Path(), default=None,
              help="Oracle explanation script (jsonl); unmatched pairs are skipped.")
@click.option("--mode", default="full", show_default=True,
              type=click.Choice(["full", "no-grounding", "no-hierarchy",
                                 "random-grounding", "random-pairs", "extra-data"]))
@click.option("--k", default=4, show_default=True)
@click.option("--b", default=3, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--report", "report_dir", required=True, type=click.Path())
@click.option("--extra-fraction", default=0.0, show_default=True)
@click.option("--epochs", default=30, show_default=True)
@click.option("--base-lr", default=0.01, show_default=True)
@click.option("--batch-size", default=16, show_default=True)
@click.option("--m-queries", default=6, show_default=True)
def run(dataset, script_path, mode, k, b, seed, report_dir, extra_fraction,
        epochs, base_lr, batch_size, m_queries):
    """Drive a whole scripted session and write the report tree."""
    config = SessionConfig(
        dataset=dataset, k=k, b=b, mode=mode, extra_fraction=extra_fraction,
        epochs=epochs, base_lr=base_lr, batch_size=batch_size,
        m_queries=m_queries, seed=seed)
    try:
        config.validate()
        session = start_session(config)
        script = {}
        if mode != "extra-data":
            if script_path is None:
                _fail("--script is required except in extra-data mode")
            script = _load_script(script_path, session.manifest)
    except _VALIDATION_ERRORS as exc:
        _fail(str(exc))

    while session.phase == PHASE_AWAITING:
        answers = []
        for ticket in session.pending:
            text = script.get(frozenset(ticket.class_names))
            if text is None:
                answers.append({"ticket_id": ticket.ticket_id, "skip": True})
            else:
                answers.append({"ticket_id": ticket.ticket_id, "text": text})
        outcomes = submit_explanations(session, answers)
        for outcome in outcomes:
            if outcome["status"] == "error":
                # scripted text the parser rejects: skip the pair and move on
                submit_explanations(
                    session, [{"ticket_id": outcome["ticket_id"], "skip": True}])
        metrics = train_round(session)
        click.echo(f"round {metrics.round}: fine {metrics.fine_accuracy:.4f} "
                   f"coarse {metrics.coarse_accuracy:.4f}")

    write_report(session, report_dir)
    click.echo(f"report written to {report_dir}")
    if session.exhausted and session.rounds_completed < config.k:
        click.echo(f"stopped after {session.rounds_completed} of {config.k} rounds: "
                   "no class pairs left to query", err=True)
        sys.exit(3)


@main.command("serve")
@click.option("--dataset-root", type=click.Path(), default=None,
              help="Resolve relative dataset paths in configs against this root.")
@click.option("--bind", envvar="ALICE_BIND", default="127.0.0.1:7878",
              show_default=True)
@click.option("--data-dir", envvar="ALICE_DATA_DIR", default="./alice-sessions",
              show_default=True, type=click.Path())
@click.option("--static", "static_dir", type=click.Path(), default=None,
              help="Directory of console static files to mount at /ui.")
def serve(dataset_root, bind, data_dir, static_dir):
    """Serve the HTTP API (and the expert console when --static is given)."""
    import uvicorn

    from .server import create_app, parse_bind

    if static_dir is None:
        candidate = Path(__file__).parents[2] / "frontend" / "public"
        if candidate.is_dir():
            static_dir = str(candidate)
    host, port = parse_bind(bind)
    app = create_app(data_dir, dataset_root, static_dir)
    click.echo(f"serving on http://{host}:{port} (sessions in {data_dir})")
    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command("parse")
@click.option("--lexicon", "lexicon_path", required=True, type=click.Path())
@click.option("--text", required=True)
def parse_cmd(lexicon_path, text):
    """Parse one explanation against a standalone lexicon file."""
    try:
        lexicon = load_lexicon(lexicon_path)
    except _VALIDATION_ERRORS as exc:
        _fail(str(exc))
    try:
        parsed = parse_text(text, (0, 1), lexicon)
    except NoSegmentsFound as exc:
        click.echo(f"no segments found: {exc}")
        sys.exit(1)
    for name in parsed.segment_names:
        click.echo(name)


@main.command("eval")
@click.option("--session", "session_path", required=True, type=click.Path())
@click.option("--dataset", type=click.Path(), default=None,
              help="Dataset root override for relative snapshot paths.")
@click.option("--split", default="test", show_default=True)
def eval_cmd(session_path, dataset, split):
    """Re-score a session snapshot; prints the same metrics it recorded."""
    try:
        session = load_session(session_path, dataset)
        metrics = evaluate(session, split)
    except _VALIDATION_ERRORS + (errors.EmptySplit, errors.WrongPhase) as exc:
        _fail(str(exc))
    click.echo(f"split {split}: fine {metrics.fine_accuracy:.6f} "
               f"coarse {metrics.coarse_accuracy:.6f}")
    if session.metrics_history:
        last = session.metrics_history[-1]
        click.echo(f"recorded round {last.round}: fine {last.fine_accuracy:.6f} "
                   f"coarse {last.coarse_accuracy:.6f}")


if __name__ == "__main__":
    main()
