"""Report emission for scripted runs: delimited metrics, a text summary,
accuracy/loss figures, and the final model + session snapshots.

Everything written here is a pure function of the session state, so two
runs with the same flags and seed produce byte-identical report trees.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .session import Session, save_session  # noqa: E402
from .snapshot import model_to_bytes  # noqa: E402

_PNG_META = {"Software": "alice"}


def _csv_cell(value) -> str:
    if value is None:
        return ""
    return str(value)


def write_metrics_csv(session: Session, path: Path):
    rows = ["round,fine_accuracy,coarse_accuracy,global_loss,local_loss"]
    for m in session.metrics_history:
        rows.append(",".join([
            str(m.round),
            _csv_cell(m.fine_accuracy),
            _csv_cell(m.coarse_accuracy),
            _csv_cell(m.train_losses.get("global")),
            _csv_cell(m.train_losses.get("local")),
        ]))
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")


def write_summary(session: Session, path: Path):
    cfg = session.config
    manifest = session.manifest
    lines = [
        f"dataset: {manifest.name} ({manifest.num_classes} classes, "
        f"grid {manifest.grid.h}x{manifest.grid.w}x{manifest.grid.d})",
        f"mode: {cfg.mode}  k: {cfg.k}  b: {cfg.b}  seed: {cfg.seed}",
        f"rounds completed: {session.rounds_completed}"
        + ("  (pairs exhausted early)" if session.exhausted else ""),
        "",
        "round  fine_acc  coarse_acc",
    ]
    for m in session.metrics_history:
        lines.append(f"{m.round:>5}  {m.fine_accuracy:8.4f}  {m.coarse_accuracy:10.4f}")
    lines.append("")
    if session.arch.groups:
        lines.append("groups formed:")
        for g in session.arch.groups:
            names = ", ".join(manifest.class_name(c) for c in g.members)
            lines.append(f"  group {g.group_id}: {names}")
    else:
        lines.append("groups formed: none")
    total_patches = sum(r.patches_created for r in session.grounding_reports)
    lines.append(f"patches created: {total_patches}")
    skipped = [e for e in session.query_log if e["status"] == "skipped"]
    if skipped:
        lines.append(f"tickets skipped: {len(skipped)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_figures(session: Session, out_dir: Path):
    rounds = [m.round for m in session.metrics_history]
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.plot(rounds, [m.fine_accuracy for m in session.metrics_history],
            marker="o", label="fine")
    ax.plot(rounds, [m.coarse_accuracy for m in session.metrics_history],
            marker="s", label="coarse")
    ax.set_xlabel("round")
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0.0, 1.02)
    ax.set_xticks(rounds)
    ax.legend(loc="lower right")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_dir / "accuracy_vs_round.png", metadata=_PNG_META)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.plot(rounds, [m.train_losses.get("global") for m in session.metrics_history],
            marker="o", label="global head")
    local = [(m.round, m.train_losses["local"])
             for m in session.metrics_history if "local" in m.train_losses]
    if local:
        ax.plot([r for r, _ in local], [v for _, v in local],
                marker="s", label="local heads")
    ax.set_xlabel("round")
    ax.set_ylabel("final-epoch training loss")
    ax.set_xticks(rounds)
    ax.legend(loc="upper right")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_dir / "training_loss.png", metadata=_PNG_META)
    plt.close(fig)


def write_report(session: Session, out_dir: str | Path):
    """Write the full report tree for a finished (or partial) run."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(session, out / "metrics.csv")
    write_summary(session, out / "summary.txt")
    write_figures(session, out)
    if session.model is not None:
        cfg = session.config
        hyper = {"m_queries": cfg.m_queries, "epochs": cfg.epochs,
                 "base_lr": cfg.base_lr, "batch_size": cfg.batch_size}
        (out / "model.bin").write_bytes(
            model_to_bytes(session.model, session.arch, hyper))
    save_session(session, out / "session.json")
