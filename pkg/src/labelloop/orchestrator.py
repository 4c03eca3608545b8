"""The acquisition loop, end to end.

One run: warmstart a small human-labeled seed set, then for each round
sub-sample candidates, plan the acquisition under the configured strategy,
annotate the human share first (so the retrieval pool is fresh), annotate
the LLM share with retrieved context, fine-tune, account the budget, and
checkpoint. Everything observable is deterministic given (config, seed)
with deterministic annotators; sequence numbers are the only timestamps.
"""

from __future__ import annotations

import dataclasses
import json
import threading
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .annotate import (
    AnnotationContext,
    Annotator,
    ClientConfig,
    CompletionAnnotator,
    HumanQueue,
    HumanQueueAnnotator,
    NoisyAnnotator,
    NoisyProfile,
    OracleAnnotator,
    RetrievalQualityAnnotator,
    default_template,
    load_template,
)
from .budget import BudgetConfig, BudgetLedger, Termination, cumulative, should_terminate
from .core import (
    AnnotatedSet,
    Annotation,
    DataPool,
    Fidelity,
    GoldAccess,
    LabelSet,
    LoopError,
    Sample,
    commit_annotations,
    load_pool,
)
from .embed import (
    EmbeddingStore,
    HashingEncoder,
    NoContextError,
    RetrievedExample,
    cosine_similarity,
    retrieve_prompt_examples,
)
from .learner import LearnerHyper, LearnerSnapshot, ReferenceLearner
from .metrics import Metric, score
from .query import QueryPlan, StrategyKind, UncertaintyBasis, plan_queries
from .seeding import derive_rng, stable_seed

CHECKPOINT_VERSION = 1
DEFAULT_SUBSAMPLE_CAP = 3000


class OrchestratorError(LoopError):
    pass


class CheckpointError(LoopError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs, flattened; mirrors the key-value config file."""

    budget: BudgetConfig
    seed: int = 0
    labels: tuple[str, ...] | None = None  # None: derived from pool gold labels
    strategy: StrategyKind = StrategyKind.EEQ
    hybrid_lambda: float = 0.5
    uncertainty_basis: UncertaintyBasis = UncertaintyBasis.LEAST_CONFIDENCE
    kmeans_restarts: int = 1
    subsample_size: int | None = None  # None: min(|pool|, DEFAULT_SUBSAMPLE_CAP)
    allow_cold_start: bool = False
    human_mode: str = "variable"  # per-round human batch sizes: geometric or flat
    retrieval_mode: str = "similar"  # or "random": ablates prompt retrieval
    retrieval_neighbors: int = 50
    retrieval_shots: int = 5
    encoder_dim: int = 64
    high_annotator: str = "oracle"
    low_annotator: str = "noisy"
    low_accuracy: float = 0.75
    low_floor: float = 0.55  # retrieval_quality annotator: accuracy at zero similarity
    low_ceil: float = 0.95
    learner_lr: float = 0.5
    learner_epochs: int = 100
    learner_l2: float = 1e-4
    tune_on_cumulative: bool = False  # tune on all annotations instead of this round's
    pool_path: str | None = None
    pool_format: str = "jsonl"
    run_dir: str | None = None
    template_path: str | None = None
    llm_base_url: str | None = None
    llm_model: str | None = None
    llm_retries: int = 2
    llm_max_inflight: int = 4
    llm_timeout_ms: int = 30000
    listen_addr: str = "127.0.0.1:8642"

    def __post_init__(self) -> None:
        if self.human_mode not in ("variable", "equal"):
            raise OrchestratorError(f"unknown human batch mode {self.human_mode!r}")
        if self.retrieval_mode not in ("similar", "random"):
            raise OrchestratorError(f"unknown retrieval mode {self.retrieval_mode!r}")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["budget"] = {
            "total": self.budget.total,
            "human": self.budget.human,
            "llm": self.budget.llm,
            "rounds": self.budget.rounds,
            "warmstart": self.budget.warmstart,
            "max_finetune_rounds": self.budget.max_finetune_rounds,
        }
        out["strategy"] = self.strategy.value
        out["uncertainty_basis"] = self.uncertainty_basis.value
        out["labels"] = list(self.labels) if self.labels else None
        # artifacts must be relocatable: the run dir is wherever they live,
        # never a path baked into them (resume re-derives it from location)
        out["run_dir"] = None
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        data["budget"] = BudgetConfig(**data["budget"])
        data["strategy"] = StrategyKind.parse(data["strategy"])
        data["uncertainty_basis"] = UncertaintyBasis(data["uncertainty_basis"])
        if data.get("labels") is not None:
            data["labels"] = tuple(data["labels"])
        return cls(**data)


@dataclass
class RoundState:
    round: int
    human_alloc: int
    llm_alloc: int
    human_done: int
    llm_done: int
    human_failed: int
    llm_failed: int
    k_clusters: int
    cum_spent: int
    test_metrics: dict[str, float] | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RoundState":
        return cls(**data)


def _parse_scalar(text: str) -> bool | int | float | str:
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_config_text(text: str) -> dict[str, bool | int | float | str]:
    """Flat `key = value` lines; '#' starts a comment; blank lines ignored."""
    out: dict[str, bool | int | float | str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise OrchestratorError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = _parse_scalar(value.strip())
    return out


_CONFIG_KEYS: dict[str, str] = {
    # config-file key -> RunConfig field
    "seed": "seed",
    "strategy": "strategy",
    "strategy.hybrid_lambda": "hybrid_lambda",
    "strategy.uncertainty_basis": "uncertainty_basis",
    "strategy.kmeans_restarts": "kmeans_restarts",
    "subsample_size": "subsample_size",
    "allow_cold_start": "allow_cold_start",
    "budget.human_mode": "human_mode",
    "retrieval.mode": "retrieval_mode",
    "retrieval.neighbors": "retrieval_neighbors",
    "retrieval.shots": "retrieval_shots",
    "encoder.dim": "encoder_dim",
    "annotator.high": "high_annotator",
    "annotator.low": "low_annotator",
    "annotator.low.accuracy": "low_accuracy",
    "annotator.low.floor": "low_floor",
    "annotator.low.ceil": "low_ceil",
    "learner.lr": "learner_lr",
    "learner.epochs": "learner_epochs",
    "learner.l2": "learner_l2",
    "learner.tune_on_cumulative": "tune_on_cumulative",
    "pool.path": "pool_path",
    "pool.format": "pool_format",
    "run.dir": "run_dir",
    "template.path": "template_path",
    "llm.base_url": "llm_base_url",
    "llm.model": "llm_model",
    "llm.retries": "llm_retries",
    "llm.max_inflight": "llm_max_inflight",
    "llm.timeout_ms": "llm_timeout_ms",
    "service.listen_addr": "listen_addr",
}

_BUDGET_KEYS = {
    "budget.total": "total",
    "budget.human": "human",
    "budget.llm": "llm",
    "rounds": "rounds",
    "warmstart": "warmstart",
    "max_finetune_rounds": "max_finetune_rounds",
}


def config_from_mapping(raw: Mapping[str, bool | int | float | str]) -> RunConfig:
    budget_kwargs: dict = {}
    fields: dict = {}
    for key, value in raw.items():
        if key in _BUDGET_KEYS:
            budget_kwargs[_BUDGET_KEYS[key]] = int(value)
        elif key == "labels":
            fields["labels"] = tuple(part.strip() for part in str(value).split(",") if part.strip())
        elif key in _CONFIG_KEYS:
            fields[_CONFIG_KEYS[key]] = value
        else:
            known = sorted(list(_CONFIG_KEYS) + list(_BUDGET_KEYS) + ["labels"])
            raise OrchestratorError(f"unknown config key {key!r} (known keys: {', '.join(known)})")
    for required in ("total", "human", "llm", "rounds"):
        if required not in budget_kwargs:
            raise OrchestratorError(f"config is missing required budget key for {required!r}")
    if "strategy" in fields:
        fields["strategy"] = StrategyKind.parse(str(fields["strategy"]))
    if "uncertainty_basis" in fields:
        fields["uncertainty_basis"] = UncertaintyBasis(str(fields["uncertainty_basis"]))
    try:
        return RunConfig(budget=BudgetConfig(**budget_kwargs), **fields)
    except (TypeError, ValueError) as exc:
        raise OrchestratorError(f"invalid config: {exc}") from exc


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise OrchestratorError(f"config file not found: {path}")
    return config_from_mapping(parse_config_text(path.read_text(encoding="utf-8")))


def _canonical_json(data: object) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":")) + "\n"


class Engine:
    """One run: owns the pool, the learner, the ledger, and the artifacts.

    Single logical writer (the thread driving run()); `state_lock` guards the
    mutation points so service threads can read consistent snapshots.
    """

    def __init__(
        self,
        config: RunConfig,
        pool: DataPool | None = None,
        labelset: LabelSet | None = None,
        *,
        high: Annotator | None = None,
        low: Annotator | None = None,
        queue: HumanQueue | None = None,
        test_samples: Sequence[Sample] = (),
        test_gold: Mapping[str, str] | None = None,
    ) -> None:
        self.config = config
        if pool is None:
            if config.pool_path is None:
                raise OrchestratorError("no pool given and no pool.path configured")
            pool = load_pool(config.pool_path, config.pool_format)
        self.pool = pool
        if config.budget.warmstart > len(pool):
            raise OrchestratorError(
                f"warmstart {config.budget.warmstart} exceeds pool size {len(pool)}"
            )
        self.labelset = labelset or self._derive_labelset()
        self.store = EmbeddingStore(HashingEncoder(config.encoder_dim))
        self.annotated = AnnotatedSet()
        self.ledger = BudgetLedger.from_config(config.budget, human_mode=config.human_mode)
        self.rounds: list[RoundState] = []
        self.phase = "init"  # init -> running -> done | stopped
        self.done_reason: str | None = None
        self.test_samples = tuple(test_samples)
        self.test_gold = dict(test_gold or {})
        self.state_lock = threading.RLock()
        self.stop_requested = threading.Event()
        self.queue = queue
        self._access = GoldAccess("engine")
        self.learner = ReferenceLearner(
            self.labelset,
            self.store,
            LearnerHyper(lr=config.learner_lr, epochs=config.learner_epochs, l2=config.learner_l2),
        )
        self.high = high or self._build_annotator(config.high_annotator, Fidelity.HIGH)
        self.low = low or self._build_annotator(config.low_annotator, Fidelity.LOW)
        if self.high.fidelity is not Fidelity.HIGH or self.low.fidelity is not Fidelity.LOW:
            raise OrchestratorError("annotator bindings have the wrong fidelity tags")
        self.retrieval_log: list[tuple[int, str, tuple[str, ...]]] = []
        self._current_round = 0
        self.run_dir = Path(config.run_dir) if config.run_dir else None

    # -- construction helpers ------------------------------------------

    def _derive_labelset(self) -> LabelSet:
        if self.config.labels:
            return LabelSet(self.config.labels)
        golds = sorted({g for g in self.pool._gold.values()})
        if not golds:
            raise OrchestratorError("no `labels` configured and the pool carries no gold labels")
        return LabelSet(tuple(golds))

    def _build_annotator(self, name: str, fidelity: Fidelity) -> Annotator:
        cfg = self.config
        if name == "oracle":
            ann: Annotator = OracleAnnotator(self.pool, self._access)
            if fidelity is Fidelity.LOW:
                # oracle is High by nature; a Low-slot oracle is a perfect LLM stand-in
                ann = NoisyAnnotator(
                    self.pool, self._access, self.labelset, NoisyProfile(1.0, cfg.seed), name="oracle_low"
                )
            return ann
        if name == "noisy":
            return NoisyAnnotator(
                self.pool,
                self._access,
                self.labelset,
                NoisyProfile(cfg.low_accuracy, stable_seed(cfg.seed, "noise")),
            )
        if name == "retrieval_quality":
            return RetrievalQualityAnnotator(
                self.pool,
                self._access,
                self.labelset,
                floor=cfg.low_floor,
                ceil=cfg.low_ceil,
                seed=stable_seed(cfg.seed, "ctx-noise"),
            )
        if name == "completion":
            if not cfg.llm_base_url or not cfg.llm_model:
                raise OrchestratorError("completion annotator needs llm.base_url and llm.model")
            template = (
                load_template(cfg.template_path, self.labelset)
                if cfg.template_path
                else default_template(self.labelset)
            )
            return CompletionAnnotator(
                ClientConfig(
                    base_url=cfg.llm_base_url,
                    model=cfg.llm_model,
                    retries=cfg.llm_retries,
                    max_inflight=cfg.llm_max_inflight,
                    timeout_ms=cfg.llm_timeout_ms,
                ),
                template,
            )
        if name == "human_queue":
            if self.queue is None:
                self.queue = HumanQueue(self.labelset)
            return HumanQueueAnnotator(self.queue)
        raise OrchestratorError(f"unknown annotator binding {name!r}")

    # -- retrieval -------------------------------------------------------

    def _retrieve(self, sample: Sample):
        cfg = self.config
        if cfg.retrieval_mode == "random":
            human_ids = sorted(self.annotated.human_ids)
            if not human_ids:
                return []
            rng = derive_rng(cfg.seed, "retrieval-random", self._current_round, sample.id)
            n = min(cfg.retrieval_shots, len(human_ids))
            picks = [human_ids[int(i)] for i in rng.choice(len(human_ids), size=n, replace=False)]
            query_vec = self.store.get(sample.id)
            examples = [
                RetrievedExample(
                    sample=self.pool.sample(sid),
                    label=self.annotated.annotations[sid].label,
                    similarity=cosine_similarity(query_vec, self.store.get(sid)),
                )
                for sid in picks
            ]
        else:
            try:
                examples = retrieve_prompt_examples(
                    self.store,
                    self.pool,
                    sample.id,
                    self.annotated,
                    neighbors=cfg.retrieval_neighbors,
                    shots=cfg.retrieval_shots,
                )
            except NoContextError:
                examples = []
        self.retrieval_log.append(
            (self._current_round, sample.id, tuple(e.sample.id for e in examples))
        )
        return examples

    # -- artifacts ---------------------------------------------------------

    def _ensure_run_dir(self) -> None:
        if self.run_dir is None:
            return
        (self.run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        pool_file = self.run_dir / "pool.jsonl"
        if not pool_file.exists():
            with pool_file.open("w", encoding="utf-8") as fh:
                for sid, sample in self.pool.samples.items():
                    rec: dict = {"id": sample.id, "text": sample.text}
                    if sample.metadata:
                        rec["meta"] = sample.metadata
                    gold = self.pool._gold.get(sid)
                    if gold is not None:
                        rec["label"] = gold
                    fh.write(json.dumps(rec) + "\n")
        config_file = self.run_dir / "config"
        if not config_file.exists():
            config_file.write_text(_canonical_json(self.config.to_dict()), encoding="utf-8")

    def _append_annotation_log(self, batch: Sequence[Annotation]) -> None:
        if self.run_dir is None:
            return
        with (self.run_dir / "annotations").open("a", encoding="utf-8") as fh:
            for ann in batch:
                fh.write(
                    json.dumps(
                        {
                            "sample_id": ann.sample_id,
                            "label": ann.label,
                            "fidelity": ann.fidelity.value,
                            "source": ann.source,
                            "round": ann.round,
                            "sequence": ann.sequence,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )

    def _commit(self, batch: Sequence[Annotation]) -> list[Annotation]:
        if not batch:
            return []
        with self.state_lock:
            before = self.annotated.next_sequence
            commit_annotations(self.pool, self.annotated, list(batch), self.labelset)
            committed = [
                a for a in self.annotated.ordered() if a.sequence >= before
            ]
        self._append_annotation_log(committed)
        return committed

    # -- lifecycle ---------------------------------------------------------

    def initialize(self) -> LearnerSnapshot:
        """Draw and label the warmstart set, then fit the first model."""
        if self.phase != "init":
            raise OrchestratorError(f"initialize called in phase {self.phase!r}")
        self._ensure_run_dir()
        self.store.ensure(self.pool.samples.values())
        self.store.ensure(self.test_samples)
        n_s = self.config.budget.warmstart
        if n_s == 0 and not self.config.allow_cold_start:
            raise OrchestratorError(
                "warmstart is 0; set allow_cold_start to run from an untuned model"
            )
        if n_s > 0:
            ids = sorted(self.pool.unannotated_ids)
            rng = derive_rng(self.config.seed, "warmstart")
            picks = sorted(ids[int(i)] for i in rng.choice(len(ids), size=n_s, replace=False))
            result = self.high.annotate_batch(
                [self.pool.sample(i) for i in picks], AnnotationContext(round=0)
            )
            if result.failures:
                failed = ", ".join(f"{f.sample_id}: {f.reason}" for f in result.failures)
                raise OrchestratorError(f"high-fidelity annotator failed during warmstart ({failed})")
            self._commit(result.annotations)
            batch = [(a.sample_id, a.label) for a in result.annotations]
            snapshot = self.learner.init_tune(batch)
        else:
            snapshot = self.learner.snapshot()
        self.phase = "running"
        self.checkpoint()
        return snapshot

    def _shrink_allocation(self, h: int, g: int, available: int) -> tuple[int, int]:
        if h + g <= available:
            return h, g
        new_h = min(h, available)
        new_g = available - new_h
        warnings.warn(
            f"candidate shortfall: wanted {h}+{g}, have {available}; "
            f"shrinking to {new_h}+{new_g} (human share preserved first)",
            stacklevel=2,
        )
        return new_h, new_g

    def _tuning_batches(self, rnd: int) -> tuple[list[tuple[str, str]], list[tuple[str, str]]]:
        def pairs(anns: Sequence[Annotation]) -> list[tuple[str, str]]:
            return [(a.sample_id, a.label) for a in anns]

        if self.config.tune_on_cumulative:
            ordered = self.annotated.ordered()
            return (
                pairs([a for a in ordered if a.fidelity is Fidelity.HIGH]),
                pairs([a for a in ordered if a.fidelity is Fidelity.LOW]),
            )
        return (
            pairs(self.annotated.by_round(rnd, Fidelity.HIGH)),
            pairs(self.annotated.by_round(rnd, Fidelity.LOW)),
        )

    def run_round(self, rnd: int) -> RoundState:
        if self.phase != "running":
            raise OrchestratorError(f"run_round called in phase {self.phase!r}")
        if rnd != len(self.rounds) + 1:
            raise OrchestratorError(f"round {rnd} out of order; next is {len(self.rounds) + 1}")
        self._current_round = rnd
        cfg = self.config

        # (1) sub-sample candidates from the unannotated pool
        unannotated = sorted(self.pool.unannotated_ids)
        cap = cfg.subsample_size if cfg.subsample_size is not None else DEFAULT_SUBSAMPLE_CAP
        n_sub = min(cap, len(unannotated))
        rng = derive_rng(cfg.seed, "subsample", rnd)
        chosen = sorted(
            unannotated[int(i)] for i in rng.choice(len(unannotated), size=n_sub, replace=False)
        )
        candidates = [self.pool.sample(i) for i in chosen]

        # (2) plan the round under the configured strategy
        h_alloc, g_alloc = self.ledger.allocation(rnd)
        h, g = self._shrink_allocation(h_alloc, g_alloc, len(candidates))
        if h + g == 0:
            warnings.warn(f"round {rnd}: empty allocation, nothing to do", stacklevel=2)
            plan = QueryPlan(rnd, (), (), 0, cfg.strategy, 0)
        else:
            plan = plan_queries(
                cfg.strategy,
                candidates,
                self.learner,
                self.store,
                h,
                g,
                round=rnd,
                seed=stable_seed(cfg.seed, "plan", rnd),
                hybrid_lambda=cfg.hybrid_lambda,
                basis=cfg.uncertainty_basis,
                restarts=cfg.kmeans_restarts,
            )

        ctx = AnnotationContext(
            round=rnd,
            retrieve=self._retrieve,
            uncertainty={s.sample_id: s.score for s in plan.scores},
        )

        # (3) human annotation first: its labels join the retrieval pool
        high_result = self.high.annotate_batch(
            [self.pool.sample(i) for i in plan.human_ids], ctx
        )
        human_committed = self._commit(high_result.annotations)

        # (4)+(5) LLM annotation sees the round's fresh human labels
        low_result = self.low.annotate_batch([self.pool.sample(i) for i in plan.llm_ids], ctx)
        llm_committed = self._commit(low_result.annotations)

        # (6) fine-tune on this round's annotations
        high_batch, low_batch = self._tuning_batches(rnd)
        if high_batch or low_batch:
            self.learner.round_tune(high_batch, low_batch, rnd)
        elif h + g > 0:
            warnings.warn(f"round {rnd}: every annotation failed, skipping tuning", stacklevel=2)

        # (7) budget accounting: only successes are charged; the unspent
        # allocation (failures and candidate shortfalls alike) rolls into the
        # next round's LLM allocation
        h_unspent = h_alloc - len(human_committed)
        g_unspent = g_alloc - len(llm_committed)
        with self.state_lock:
            self.ledger.charge(
                len(human_committed), len(llm_committed), human_from_rollover=h_unspent
            )
            self.ledger.llm_rollover = h_unspent + g_unspent
            self.ledger.rounds_run = rnd
            state = RoundState(
                round=rnd,
                human_alloc=h_alloc,
                llm_alloc=g_alloc,
                human_done=len(human_committed),
                llm_done=len(llm_committed),
                human_failed=len(high_result.failures),
                llm_failed=len(low_result.failures),
                k_clusters=plan.k_clusters,
                cum_spent=self.ledger.spent_human + self.ledger.spent_llm,
                test_metrics=self._test_metrics(),
            )
            self.rounds.append(state)
        self.checkpoint()
        return state

    def _test_metrics(self) -> dict[str, float] | None:
        if not self.test_samples:
            return None
        preds = [self.learner.predict_label(s) for s in self.test_samples]
        golds = [self.test_gold[s.id] for s in self.test_samples]
        return {m.value: score(preds, golds, m) for m in Metric}

    def run(self) -> dict:
        """Initialize if fresh, run rounds until a budget stop, emit the report."""
        if self.phase == "init":
            self.initialize()
        while self.phase == "running":
            if self.stop_requested.is_set():
                self.phase = "stopped"
                self.done_reason = "stopped"
                break
            verdict = should_terminate(self.ledger)
            if verdict is not Termination.CONTINUE:
                self.phase = "done"
                self.done_reason = verdict.value
                break
            if len(self.rounds) >= self.config.budget.rounds:
                self.phase = "done"
                self.done_reason = Termination.COMPUTE_EXHAUSTED.value
                break
            try:
                self.run_round(len(self.rounds) + 1)
            except Exception:
                self.checkpoint()  # aborting errors persist state first
                raise
        self.checkpoint()
        report = self.report()
        if self.run_dir is not None:
            (self.run_dir / "report").write_text(_canonical_json(report), encoding="utf-8")
        return report

    def request_stop(self) -> None:
        self.stop_requested.set()
        if self.queue is not None:
            self.queue.close()  # unblock a waiting human-queue annotator

    # -- reporting -----------------------------------------------------------

    def status(self) -> dict:
        with self.state_lock:
            return {
                "phase": self.phase,
                "done_reason": self.done_reason,
                "round": len(self.rounds),
                "budgets": {
                    "human": {"allocated": self.config.budget.human, "spent": self.ledger.spent_human},
                    "llm": {"allocated": self.config.budget.llm, "spent": self.ledger.spent_llm},
                    "total": {
                        "allocated": self.config.budget.total,
                        "spent": self.ledger.spent_human + self.ledger.spent_llm,
                    },
                },
                "annotations": len(self.annotated),
                "metrics": self.rounds[-1].test_metrics if self.rounds else None,
            }

    def report(self) -> dict:
        with self.state_lock:
            warm = len([a for a in self.annotated.ordered() if a.round == 0])
            return {
                "config": self.config.to_dict(),
                "labels": list(self.labelset.labels),
                "pool_size": self.pool.initial_size,
                "phase": self.phase,
                "termination": self.done_reason,
                "rounds": [r.to_dict() for r in self.rounds],
                "ledger": self.ledger.to_dict(),
                "annotations": {
                    "warmstart": warm,
                    "human": len(self.annotated.human_ids) - warm,
                    "llm": len(self.annotated.llm_ids),
                    "total": len(self.annotated),
                },
                "test_metrics": self.rounds[-1].test_metrics if self.rounds else self._test_metrics(),
            }

    # -- checkpointing --------------------------------------------------------

    def checkpoint(self) -> Path | None:
        if self.run_dir is None:
            return None
        with self.state_lock:
            data = {
                "version": CHECKPOINT_VERSION,
                "config": self.config.to_dict(),
                "labels": list(self.labelset.labels),
                "phase": self.phase,
                "done_reason": self.done_reason,
                "pool_file": "pool.jsonl",
                "rounds": [r.to_dict() for r in self.rounds],
                "ledger": self.ledger.to_dict(),
                "annotations": [
                    {
                        "sample_id": a.sample_id,
                        "label": a.label,
                        "fidelity": a.fidelity.value,
                        "source": a.source,
                        "round": a.round,
                        "sequence": a.sequence,
                    }
                    for a in self.annotated.ordered()
                ],
                "learner": self.learner.snapshot().to_dict(),
            }
        path = self.run_dir / "checkpoints" / f"round-{len(self.rounds)}"
        path.write_text(_canonical_json(data), encoding="utf-8")
        return path

    @classmethod
    def resume(
        cls,
        checkpoint_path: str | Path,
        *,
        queue: HumanQueue | None = None,
        high: Annotator | None = None,
        low: Annotator | None = None,
        test_samples: Sequence[Sample] = (),
        test_gold: Mapping[str, str] | None = None,
    ) -> "Engine":
        path = Path(checkpoint_path)
        if not path.exists():
            raise CheckpointError(f"checkpoint not found: {path}")
        data = json.loads(path.read_text(encoding="utf-8"))
        version = data.get("version")
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"checkpoint version {version!r} not supported (engine speaks {CHECKPOINT_VERSION})"
            )
        config = RunConfig.from_dict(data["config"])
        run_dir = path.parent.parent
        pool_file = run_dir / data["pool_file"]
        if not pool_file.exists():
            raise CheckpointError(f"checkpoint references missing pool file: {pool_file}")
        pool = load_pool(pool_file)
        config = dataclasses.replace(config, run_dir=str(run_dir))
        engine = cls(
            config,
            pool,
            LabelSet(tuple(data["labels"])),
            queue=queue,
            high=high,
            low=low,
            test_samples=test_samples,
            test_gold=test_gold,
        )

        annotations = []
        for rec in data["annotations"]:
            ann = Annotation(
                sample_id=rec["sample_id"],
                label=rec["label"],
                fidelity=Fidelity(rec["fidelity"]),
                source=rec["source"],
                round=rec["round"],
                sequence=rec["sequence"],
            )
            annotations.append(ann)
        annotations.sort(key=lambda a: a.sequence)
        for ann in annotations:
            engine.annotated.annotations[ann.sample_id] = ann
            (engine.annotated.human_ids if ann.fidelity is Fidelity.HIGH else engine.annotated.llm_ids).add(
                ann.sample_id
            )
            engine.pool.remove_unannotated(ann.sample_id)
        engine.annotated.next_sequence = (annotations[-1].sequence + 1) if annotations else 0

        ledger_data = data["ledger"]
        engine.ledger.human_sched = list(ledger_data["human_sched"])
        engine.ledger.llm_sched = list(ledger_data["llm_sched"])
        engine.ledger.spent_human = ledger_data["spent_human"]
        engine.ledger.spent_llm = ledger_data["spent_llm"]
        engine.ledger.rounds_run = ledger_data["rounds_run"]
        engine.ledger.llm_rollover = ledger_data["llm_rollover"]
        engine.ledger.llm_bonus = ledger_data["llm_bonus"]
        engine.rounds = [RoundState.from_dict(r) for r in data["rounds"]]
        engine.phase = data["phase"]
        engine.done_reason = data["done_reason"]
        engine._verify_integrity()

        engine.store.ensure(engine.pool.samples.values())
        engine.store.ensure(engine.test_samples)
        engine.learner.load_snapshot(LearnerSnapshot.from_dict(data["learner"]))
        engine._rewrite_annotation_log()
        return engine

    def _verify_integrity(self) -> None:
        try:
            self.ledger.check()
        except ValueError as exc:
            raise CheckpointError(f"checkpoint fails budget invariants: {exc}") from exc
        in_rounds = [a for a in self.annotated.ordered() if a.round >= 1]
        human_count = sum(1 for a in in_rounds if a.fidelity is Fidelity.HIGH)
        llm_count = len(in_rounds) - human_count
        if human_count != self.ledger.spent_human or llm_count != self.ledger.spent_llm:
            raise CheckpointError(
                "checkpoint ledger disagrees with its annotations: "
                f"ledger says {self.ledger.spent_human}+{self.ledger.spent_llm}, "
                f"log holds {human_count}+{llm_count}"
            )
        if len(self.rounds) != self.ledger.rounds_run:
            raise CheckpointError(
                f"checkpoint has {len(self.rounds)} round records but ledger ran {self.ledger.rounds_run}"
            )

    def _rewrite_annotation_log(self) -> None:
        # a crashed segment may have logged annotations past this checkpoint;
        # truncate the append-only log back to the restored state
        if self.run_dir is None:
            return
        log = self.run_dir / "annotations"
        with log.open("w", encoding="utf-8") as fh:
            pass
        self._append_annotation_log(self.annotated.ordered())


def plan_summary(config: RunConfig) -> dict:
    """Schedules and per-round cluster counts without executing anything."""
    ledger = BudgetLedger.from_config(config.budget, human_mode=config.human_mode)
    rows = []
    for rnd in range(1, config.budget.rounds + 1):
        h, g = ledger.human_sched[rnd - 1], ledger.llm_sched[rnd - 1]
        rows.append({"round": rnd, "human": h, "llm": g, "k_clusters": h + g})
    return {
        "human_schedule": list(ledger.human_sched),
        "llm_schedule": list(ledger.llm_sched),
        "cumulative": cumulative(ledger.human_sched, ledger.llm_sched),
        "rounds": rows,
        "warmstart": config.budget.warmstart,
        "strategy": config.strategy.value,
    }
