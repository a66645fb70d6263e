"""The expert-in-the-loop session: train, query, ingest explanations,
ground, morph, retrain, evaluate.

Phase machine: round-0 training happens inside start_session, then the
session cycles (awaiting-explanations -> ready-to-train -> training) k
times and ends done. Every head and the shared attention queries are
re-initialized at each round with a seed derived from (config seed,
round), so a full run under a fixed config and scripted answers is
bit-deterministic.

Features are frozen inputs (no encoder fine-tuning), so class profiles
are fitted once and round-to-round query variation comes only from the
exclusion set (answered, skipped, and co-grouped pairs).

Ablation modes
    full             the whole mechanism
    no-grounding     merges + local heads, but no patch creation
    no-hierarchy     flat classifier; patches join the flat training set
    random-grounding parsed segments replaced by seeded random ones
    random-pairs     seeded random pair selection instead of lowest-JSD
    extra-data       flat training with extra pool samples, no queries
"""

from __future__ import annotations

import base64
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    EmptySplit,
    InvalidParams,
    MalformedManifest,
    NoPairsAvailable,
    UnknownTicket,
    WrongPhase,
)
from .feature_store import DatasetManifest, load_manifest
from .grounding import (
    GroundingReport,
    PatchSample,
    crop_resize,
    ground_explanation,
    substitute_random_segments,
)
from .heads import (
    ModelParams,
    OptimizerState,
    global_forward,
    global_loss_and_grads,
    init_model,
    local_forward,
    local_loss_and_grads,
    sgd_step,
)
from .morph import Delegate, Final, coarse_label_of, initial_state, merge_pair, route, state_from_groups
from .parsing import NoSegmentsFound, default_lexicon, parse
from .profiles import fit_profile, jsd, pool_features, select_pairs
from .snapshot import model_from_bytes, model_to_bytes

MODES = ("full", "no-grounding", "no-hierarchy", "random-grounding",
         "random-pairs", "extra-data")

PHASE_AWAITING = "awaiting-explanations"
PHASE_READY = "ready-to-train"
PHASE_DONE = "done"

# Purpose tags for per-round seed derivation.
_SEED_INIT = 0
_SEED_GLOBAL_SHUFFLE = 1
_SEED_LOCAL_SHUFFLE = 2
_SEED_PAIR_DRAW = 3
_SEED_GROUND_SUB = 4
_SEED_EXTRA_DRAW = 5

SESSION_FORMAT = "alice-session-v1"


def _rng(seed: int, round_index: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, round_index, purpose]))


@dataclass
class SessionConfig:
    dataset: str
    k: int = 4
    b: int = 3
    mode: str = "full"
    extra_fraction: float = 0.0
    m_queries: int = 6
    epochs: int = 30
    base_lr: float = 0.01
    batch_size: int = 16
    seed: int = 0
    covariance: str = "diagonal"
    epsilon: float = 1e-6

    def validate(self):
        if not self.dataset:
            raise ConfigError("dataset path is required")
        if not isinstance(self.k, int) or self.k < 0:
            raise ConfigError(f"k must be an integer >= 0, got {self.k!r}")
        if not isinstance(self.b, int) or self.b < 1:
            raise ConfigError(f"b must be an integer >= 1, got {self.b!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.extra_fraction < 0:
            raise ConfigError("extra_fraction must be >= 0")
        if self.m_queries < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("m_queries, epochs, and batch_size must be >= 1")
        if self.base_lr <= 0 or self.epsilon <= 0:
            raise ConfigError("base_lr and epsilon must be positive")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        if self.covariance not in ("diagonal", "full"):
            raise ConfigError(f"covariance must be 'diagonal' or 'full', got {self.covariance!r}")

    @classmethod
    def from_dict(cls, raw: dict) -> "SessionConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            cfg = cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        cfg.validate()
        return cfg


@dataclass(frozen=True)
class QueryTicket:
    ticket_id: str
    pair: tuple[int, int]
    class_names: tuple[str, str]
    prompt: str
    jsd: float
    index: int  # position within the round, for derived seeds


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    fine_accuracy: float
    coarse_accuracy: float
    per_class: tuple[float, ...]
    train_losses: dict[str, float] = field(default_factory=dict)


class Session:
    """One expert-in-the-loop run over a frozen-feature dataset."""

    def __init__(self, config: SessionConfig, manifest: DatasetManifest):
        self.config = config
        self.manifest = manifest
        self.arch = initial_state(manifest.num_classes)
        self.model: ModelParams | None = None
        self.phase = PHASE_READY
        self.rounds_completed = 0
        self.exhausted = False
        self.pending: list[QueryTicket] = []
        self.query_log: list[dict] = []
        self.excluded: set[tuple[int, int]] = set()
        self.patches: list[PatchSample] = []
        self.grounding_reports: list[GroundingReport] = []
        self.metrics_history: list[RoundMetrics] = []
        self.extra_sample_ids: list[int] = []
        self.lexicon = default_lexicon(manifest.segment_catalog)
        self._ticket_serial = 0

        # Frozen-feature caches: full maps for train/test, pooled for all.
        self._maps: dict[int, np.ndarray] = {}
        self._pooled: dict[int, np.ndarray] = {}
        for record in manifest.samples:
            amap = manifest.load_activation(record)
            if record.split in ("train", "test"):
                self._maps[record.sample_id] = amap
            self._pooled[record.sample_id] = pool_features(amap)

        self.profiles = {}
        for fc in manifest.fine_classes:
            feats = [self._pooled[s.sample_id] for s in manifest.samples_of("train", fc.id)]
            self.profiles[fc.id] = fit_profile(
                feats, fc.id, mode=config.covariance, epsilon=config.epsilon)

    # -- views -------------------------------------------------------------

    @property
    def next_round(self) -> int:
        return self.rounds_completed + 1

    def map_of(self, sample_id: int) -> np.ndarray:
        if sample_id in self._maps:
            return self._maps[sample_id]
        record = self.manifest.sample_by_id(sample_id)
        return self.manifest.load_activation(record)

    def cogrouped_pairs(self) -> set[tuple[int, int]]:
        pairs = set()
        for group in self.arch.groups:
            ms = group.members
            for i in range(len(ms)):
                for j in range(i + 1, len(ms)):
                    pairs.add((ms[i], ms[j]))
        return pairs


def start_session(config: SessionConfig) -> Session:
    """Fit class profiles, train the round-0 flat classifier, and open
    the first query round (or finish immediately for k=0 / extra-data)."""
    config.validate()
    manifest = load_manifest(Path(config.dataset))
    session = Session(config, manifest)

    if config.mode == "extra-data":
        pool = manifest.samples_of("pool")
        if not pool:
            raise InvalidParams("extra-data mode needs a non-empty pool split")
        n_train = len(manifest.samples_of("train"))
        n_extra = min(int(config.extra_fraction * n_train), len(pool))
        rng = _rng(config.seed, 0, _SEED_EXTRA_DRAW)
        order = sorted(pool, key=lambda s: s.sample_id)
        chosen = rng.choice(len(order), size=n_extra, replace=False)
        session.extra_sample_ids = sorted(order[i].sample_id for i in chosen)

    _train_and_score(session, round_index=0)
    if config.k == 0 or config.mode == "extra-data":
        session.phase = PHASE_DONE
    else:
        _generate_tickets(session)
    return session


def propose_queries(session: Session) -> list[QueryTicket]:
    if session.phase != PHASE_AWAITING:
        raise WrongPhase(f"no queries to propose in phase '{session.phase}'")
    return list(session.pending)


def submit_explanations(session: Session, answers) -> list[dict]:
    """Apply expert answers (or skips) to pending tickets.

    Each answer is {"ticket_id": ..., "text": ...} or {"ticket_id": ...,
    "skip": true}. Parse failures leave the ticket pending and are
    reported per ticket; all ticket ids must be pending up front.
    """
    if session.phase != PHASE_AWAITING:
        raise WrongPhase(f"cannot submit explanations in phase '{session.phase}'")
    by_id = {t.ticket_id: t for t in session.pending}
    for answer in answers:
        tid = answer.get("ticket_id")
        if tid not in by_id:
            raise UnknownTicket(f"ticket {tid!r} is not pending")

    cfg = session.config
    outcomes = []
    for answer in answers:
        ticket = by_id[answer["ticket_id"]]
        if answer.get("skip"):
            session.pending.remove(ticket)
            session.excluded.add(ticket.pair)
            session.query_log.append({
                "round": session.next_round, "ticket_id": ticket.ticket_id,
                "pair": list(ticket.pair), "status": "skipped",
            })
            outcomes.append({"ticket_id": ticket.ticket_id, "status": "skipped"})
            continue

        text = answer.get("text") or ""
        try:
            parsed = parse(text, ticket.pair, session.lexicon)
        except NoSegmentsFound as exc:
            outcomes.append({"ticket_id": ticket.ticket_id, "status": "error",
                             "error": str(exc)})
            continue

        grounded = parsed
        if cfg.mode == "random-grounding":
            seed = np.random.SeedSequence(
                [cfg.seed, session.next_round, _SEED_GROUND_SUB, ticket.index])
            grounded = substitute_random_segments(parsed, session.manifest, seed)
        if cfg.mode != "no-grounding":
            patches, report = ground_explanation(grounded, session.manifest)
            session.patches.extend(patches)
            session.grounding_reports.append(report)
        if cfg.mode != "no-hierarchy":
            session.arch = merge_pair(session.arch, ticket.pair)

        session.pending.remove(ticket)
        session.excluded.add(ticket.pair)
        session.query_log.append({
            "round": session.next_round, "ticket_id": ticket.ticket_id,
            "pair": list(ticket.pair), "status": "answered", "text": text,
            "segments": list(parsed.segment_names),
            "grounded_segments": list(grounded.segment_names),
        })
        outcomes.append({"ticket_id": ticket.ticket_id, "status": "ok",
                         "segments": list(parsed.segment_names),
                         "grounded_segments": list(grounded.segment_names)})

    if not session.pending:
        session.phase = PHASE_READY
    return outcomes


def train_round(session: Session) -> RoundMetrics:
    """Re-initialize and retrain all heads for the next round, evaluate,
    and open the following query round (or finish after k rounds)."""
    if session.phase != PHASE_READY:
        raise WrongPhase(f"cannot train in phase '{session.phase}'"
                         + (": tickets pending" if session.pending else ""))
    metrics = _train_and_score(session, round_index=session.next_round)
    session.rounds_completed += 1
    if session.rounds_completed >= session.config.k:
        session.phase = PHASE_DONE
        session.pending = []
    else:
        _generate_tickets(session)
    return metrics


def predict(session: Session, amap: np.ndarray) -> int:
    """Fine-class prediction from a full activation map (never patches)."""
    model = session.model
    if model is None:
        raise WrongPhase("session has no trained model yet")
    node_index = int(np.argmax(global_forward(model.global_head, pool_features(amap))))
    outcome = route(session.arch, node_index)
    if isinstance(outcome, Final):
        return outcome.fine_class
    group = session.arch.group_by_id(outcome.group_id)
    logits = local_forward(model.attention, model.local_heads[group.group_id], amap)
    return group.members[int(np.argmax(logits))]


def evaluate(session: Session, split: str = "test") -> RoundMetrics:
    records = sorted(session.manifest.samples_of(split), key=lambda s: s.sample_id)
    if not records:
        raise EmptySplit(f"split '{split}' has no samples")
    manifest = session.manifest
    n_classes = manifest.num_classes
    seen = np.zeros(n_classes, dtype=int)
    fine_hits = np.zeros(n_classes, dtype=int)
    coarse_hits = 0
    for record in records:
        pred = predict(session, session.map_of(record.sample_id))
        seen[record.fine_label] += 1
        if pred == record.fine_label:
            fine_hits[record.fine_label] += 1
        if coarse_label_of(manifest, pred) == coarse_label_of(manifest, record.fine_label):
            coarse_hits += 1
    per_class = tuple(
        float(fine_hits[c] / seen[c]) if seen[c] else 0.0 for c in range(n_classes))
    round_index = session.metrics_history[-1].round if session.metrics_history else 0
    return RoundMetrics(
        round=round_index,
        fine_accuracy=float(fine_hits.sum() / seen.sum()),
        coarse_accuracy=float(coarse_hits / seen.sum()),
        per_class=per_class,
    )


# -- internals ------------------------------------------------------------------

def _generate_tickets(session: Session):
    cfg = session.config
    round_index = session.next_round
    excluded = set(session.excluded) | session.cogrouped_pairs()
    all_profiles = [session.profiles[c] for c in sorted(session.profiles)]

    if cfg.mode == "random-pairs":
        candidates = [(i, j)
                      for i in range(session.manifest.num_classes)
                      for j in range(i + 1, session.manifest.num_classes)
                      if (i, j) not in excluded]
        if not candidates:
            session.exhausted = True
            session.phase = PHASE_DONE
            session.pending = []
            return
        rng = _rng(cfg.seed, round_index, _SEED_PAIR_DRAW)
        take = min(cfg.b, len(candidates))
        chosen = rng.choice(len(candidates), size=take, replace=False)
        picks = [(candidates[i], jsd(session.profiles[candidates[i][0]],
                                     session.profiles[candidates[i][1]]))
                 for i in sorted(int(i) for i in chosen)]
    else:
        try:
            ranked = select_pairs(all_profiles, cfg.b, excluded)
        except NoPairsAvailable:
            session.exhausted = True
            session.phase = PHASE_DONE
            session.pending = []
            return
        picks = [(pd.pair, pd.jsd) for pd in ranked]

    tickets = []
    for index, (pair, distance) in enumerate(picks):
        names = (session.manifest.class_name(pair[0]), session.manifest.class_name(pair[1]))
        tickets.append(QueryTicket(
            ticket_id=f"t{round_index}-{index}",
            pair=pair,
            class_names=names,
            prompt=f"How would you differentiate class {names[0]} and class {names[1]}?",
            jsd=float(distance),
            index=index,
        ))
    session.pending = tickets
    session.phase = PHASE_AWAITING


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _train_global(session: Session, model: ModelParams, round_index: int) -> float:
    cfg = session.config
    manifest = session.manifest
    xs, ys = [], []
    for record in sorted(manifest.samples_of("train"), key=lambda s: s.sample_id):
        xs.append(session._pooled[record.sample_id])
        ys.append(session.arch.node_of(record.fine_label))
    for sample_id in session.extra_sample_ids:
        record = manifest.sample_by_id(sample_id)
        xs.append(session._pooled[sample_id])
        ys.append(session.arch.node_of(record.fine_label))
    if cfg.mode == "no-hierarchy":
        # Flat label space: grounded patches join the global training set.
        for patch in session.patches:
            xs.append(pool_features(patch.map))
            ys.append(session.arch.node_of(patch.fine_label))
    x = np.stack(xs)
    y = np.asarray(ys, dtype=int)

    head = model.global_head
    params = {"weights": head.weights, "biases": head.biases}
    opt = OptimizerState(base_lr=cfg.base_lr)
    rng = _rng(cfg.seed, round_index, _SEED_GLOBAL_SHUFFLE)
    epoch_loss = 0.0
    for epoch in range(cfg.epochs):
        opt.epoch = epoch
        losses = []
        for idx in _batches(len(y), cfg.batch_size, rng):
            loss, grads = global_loss_and_grads(head, x[idx], y[idx])
            sgd_step(params, grads, opt, no_decay={"biases"})
            losses.append(loss)
        epoch_loss = float(np.mean(losses))
    return epoch_loss


def _train_locals(session: Session, model: ModelParams, round_index: int) -> float | None:
    cfg = session.config
    groups = session.arch.groups
    if not groups:
        return None
    maps, group_ids, labels = [], [], []
    for group in groups:
        label_of = {c: i for i, c in enumerate(group.members)}
        for member in group.members:
            for record in sorted(session.manifest.samples_of("train", member),
                                 key=lambda s: s.sample_id):
                maps.append(session._maps[record.sample_id])
                group_ids.append(group.group_id)
                labels.append(label_of[member])
        for patch in session.patches:
            if patch.fine_label in label_of:
                maps.append(patch.map)
                group_ids.append(group.group_id)
                labels.append(label_of[patch.fine_label])
    stack = np.stack(maps)
    group_ids = np.asarray(group_ids)
    labels = np.asarray(labels, dtype=int)

    params = {"queries": model.attention.queries}
    for gid in sorted(model.local_heads):
        params[f"head{gid}:weights"] = model.local_heads[gid].weights
        params[f"head{gid}:biases"] = model.local_heads[gid].biases
    no_decay = {name for name in params if name.endswith(":biases")}
    opt = OptimizerState(base_lr=cfg.base_lr)
    rng = _rng(cfg.seed, round_index, _SEED_LOCAL_SHUFFLE)

    epoch_loss = 0.0
    for epoch in range(cfg.epochs):
        opt.epoch = epoch
        losses = []
        for idx in _batches(len(labels), cfg.batch_size, rng):
            batch_total = len(idx)
            loss = 0.0
            grads = {"queries": np.zeros_like(model.attention.queries)}
            for gid in sorted(set(int(g) for g in group_ids[idx])):
                sub = idx[group_ids[idx] == gid]
                head = model.local_heads[gid]
                sub_loss, sub_grads = local_loss_and_grads(
                    model.attention, head, stack[sub], labels[sub],
                    weight=len(sub) / batch_total)
                loss += sub_loss
                grads["queries"] += sub_grads["queries"]
                grads[f"head{gid}:weights"] = sub_grads["weights"]
                grads[f"head{gid}:biases"] = sub_grads["biases"]
            sgd_step(params, grads, opt, no_decay=no_decay)
            losses.append(loss)
        epoch_loss = float(np.mean(losses))
    return epoch_loss


def _train_and_score(session: Session, round_index: int) -> RoundMetrics:
    cfg = session.config
    session.arch = session.arch.with_round(round_index)
    seed = np.random.SeedSequence([cfg.seed, round_index, _SEED_INIT])
    session.model = init_model(
        session.arch, session.manifest.grid.d, cfg.m_queries, seed)
    losses = {"global": _train_global(session, session.model, round_index)}
    local_loss = _train_locals(session, session.model, round_index)
    if local_loss is not None:
        losses["local"] = local_loss
    scored = evaluate(session, "test")
    metrics = RoundMetrics(
        round=round_index,
        fine_accuracy=scored.fine_accuracy,
        coarse_accuracy=scored.coarse_accuracy,
        per_class=scored.per_class,
        train_losses=losses,
    )
    session.metrics_history.append(metrics)
    return metrics


# -- persistence -------------------------------------------------------------------

def session_to_dict(session: Session) -> dict:
    cfg = session.config
    model_blob = None
    if session.model is not None:
        hyper = {"m_queries": cfg.m_queries, "epochs": cfg.epochs,
                 "base_lr": cfg.base_lr, "batch_size": cfg.batch_size}
        model_blob = base64.b64encode(
            model_to_bytes(session.model, session.arch, hyper)).decode("ascii")
    return {
        "format": SESSION_FORMAT,
        "config": asdict(cfg),
        "phase": session.phase,
        "rounds_completed": session.rounds_completed,
        "exhausted": session.exhausted,
        "arch": {
            "num_classes": session.arch.num_classes,
            "round": session.arch.round,
            "groups": [list(g.members) for g in session.arch.groups],
        },
        "excluded": sorted(list(p) for p in session.excluded),
        "pending_tickets": [asdict(t) for t in session.pending],
        "query_log": session.query_log,
        "grounding_reports": [
            {"pair": list(r.pair), "segments": list(r.segments),
             "patches_created": r.patches_created,
             "samples_skipped": [list(s) for s in r.samples_skipped]}
            for r in session.grounding_reports
        ],
        "patches": [
            {"source_sample_id": p.source_sample_id, "segment_id": p.segment_id,
             "fine_label": p.fine_label}
            for p in session.patches
        ],
        "extra_sample_ids": session.extra_sample_ids,
        "metrics_history": [
            {"round": m.round, "fine_accuracy": m.fine_accuracy,
             "coarse_accuracy": m.coarse_accuracy, "per_class": list(m.per_class),
             "train_losses": m.train_losses}
            for m in session.metrics_history
        ],
        "model": model_blob,
    }


def save_session(session: Session, path: str | Path):
    """Durably snapshot the session as a single self-contained file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = json.dumps(session_to_dict(session), indent=2, sort_keys=True) + "\n"
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(payload, encoding="utf-8")
    os.replace(tmp, path)


def load_session(path: str | Path, dataset_root: str | Path | None = None) -> Session:
    """Rebuild a session from its snapshot; patch maps are recomputed
    deterministically from the dataset."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedManifest(f"cannot read session snapshot {path}: {exc}") from exc
    if doc.get("format") != SESSION_FORMAT:
        raise MalformedManifest(f"unknown session format {doc.get('format')!r}")

    cfg = SessionConfig.from_dict(doc["config"])
    dataset_path = Path(cfg.dataset)
    if dataset_root is not None and not dataset_path.is_absolute():
        dataset_path = Path(dataset_root) / dataset_path
    cfg.dataset = str(dataset_path)

    manifest = load_manifest(dataset_path)
    session = Session(cfg, manifest)
    session.phase = doc["phase"]
    session.rounds_completed = int(doc["rounds_completed"])
    session.exhausted = bool(doc.get("exhausted", False))
    session.arch = state_from_groups(
        doc["arch"]["num_classes"], doc["arch"]["groups"], doc["arch"]["round"])
    session.excluded = {tuple(p) for p in doc.get("excluded", [])}
    session.pending = [
        QueryTicket(t["ticket_id"], tuple(t["pair"]), tuple(t["class_names"]),
                    t["prompt"], float(t["jsd"]), int(t["index"]))
        for t in doc.get("pending_tickets", [])
    ]
    session.query_log = list(doc.get("query_log", []))
    session.grounding_reports = [
        GroundingReport(tuple(r["pair"]), tuple(r["segments"]), int(r["patches_created"]),
                        tuple(tuple(s) for s in r["samples_skipped"]))
        for r in doc.get("grounding_reports", [])
    ]
    session.extra_sample_ids = [int(s) for s in doc.get("extra_sample_ids", [])]
    session.patches = []
    for meta in doc.get("patches", []):
        record = manifest.sample_by_id(int(meta["source_sample_id"]))
        seg_id = int(meta["segment_id"])
        box = record.segment_boxes.get(seg_id)
        if box is None:
            raise MalformedManifest(
                f"snapshot patch references segment {seg_id} of sample "
                f"{record.sample_id}, but the dataset has no such box")
        session.patches.append(PatchSample(
            record.sample_id, seg_id,
            crop_resize(manifest.load_activation(record), box), record.fine_label))
    session.metrics_history = [
        RoundMetrics(int(m["round"]), float(m["fine_accuracy"]),
                     float(m["coarse_accuracy"]), tuple(m["per_class"]),
                     dict(m["train_losses"]))
        for m in doc.get("metrics_history", [])
    ]
    if doc.get("model"):
        session.model, _ = model_from_bytes(base64.b64decode(doc["model"]))
    return session
