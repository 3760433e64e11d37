"""Run controller: worker pools, round scheduling, checkpoints, ingest.

Prover and evolver workers share one library; the only scheduling state
is the round queue (each pending problem exactly once per round). Two
execution strategies:

  * serial  — workers are stepped round-robin by one thread. Replay runs
              use this: with a fixed seed the whole trajectory, logs and
              library included, is byte-reproducible.
  * threads — one OS thread per worker, for live runs. The library's
              linearizable API is the only coupling point.
"""

from __future__ import annotations

import hashlib
import json
import shutil
import threading
import time
from collections import deque
from dataclasses import dataclass, field, fields
from pathlib import Path
from random import Random

from .errors import CheckpointError, ParseError, TransportError
from .evolver import Evolver, EvolverConfig
from .gateway import (
    HashEmbedder,
    HttpChatBackend,
    HttpEmbedder,
    LlmGateway,
    PromptLibrary,
    text_digest,
)
from .library import (
    PROBLEM_EXHAUSTED,
    PROBLEM_PENDING,
    PROBLEM_SOLVED,
    SkillLibrary,
)
from .prover import Prover, ProverConfig
from .runlog import RunLog, read_log
from .stats import RunStats, compute_stats
from .verifier import (
    DEFAULT_HEURISTICS,
    MockVerifier,
    RepairPolicy,
    TcpVerifier,
)

_CHECKPOINT_FORMAT = "skillprover-checkpoint"
_CHECKPOINT_VERSION = 1


def derive_seed(seed: int, stream: str) -> int:
    digest = hashlib.sha256(f"{seed}/{stream}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass
class OrchestratorConfig:
    # worker pools and budgets
    prover_workers: int = 3
    evolver_workers: int = 8
    attempt_budget: int = 100
    # sampling and retrieval constants
    temperature: float = 0.7
    n_f: int = 6
    n_d: int = 4
    solver_refs: int = 3
    request_refs: int = 2
    dedup_threshold: float = 0.85
    direction_weights: tuple[float, float, float, float] | None = None
    informal_source: str = "either"
    # run control
    seed: int = 0
    mode: str = "replay"  # live | record | replay
    execution: str | None = None  # serial | threads; default: serial for replay
    checkpoint_interval: float = 0.0  # seconds; 0 disables auto-checkpointing
    embedding_dim: int = 1536
    # paths
    log_path: str = "run.log.ndjson"
    cassette_path: str | None = None
    checkpoint_dir: str | None = None
    template_dir: str | None = None
    library_path: str | None = None
    problems_path: str | None = None
    # chat/embedding backends
    model_pool: tuple[str, ...] = ("gpt-3.5-turbo",)
    chat_base_url: str | None = None
    chat_api_key: str | None = None
    embed_base_url: str | None = None
    embed_model: str = "text-embedding-ada-002"
    max_retries: int = 5
    backoff_base: float = 1.0
    # verifier backend
    verifier: str = "mock"  # mock | tcp
    verifier_host: str = "127.0.0.1"
    verifier_port: int = 8000
    verifier_timeout: float = 360.0
    mock_allowed_tactics: tuple[str, ...] = ()
    mock_default_accept: bool = False
    heuristics: tuple[str, ...] = DEFAULT_HEURISTICS

    def __post_init__(self):
        for name in ("prover_workers", "evolver_workers", "attempt_budget", "n_f", "n_d"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.dedup_threshold <= 1.0:
            raise ValueError("dedup_threshold must be in (0, 1]")
        if self.mode not in ("live", "record", "replay"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.execution not in (None, "serial", "threads"):
            raise ValueError(f"unknown execution {self.execution!r}")

    @property
    def effective_execution(self) -> str:
        if self.execution is not None:
            return self.execution
        return "serial" if self.mode == "replay" else "threads"

    def to_json_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out

    @classmethod
    def from_json_dict(cls, data: dict) -> "OrchestratorConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(data) - known
        if unknown:
            raise ParseError(f"unknown config keys: {', '.join(sorted(unknown))}")
        coerced = dict(data)
        for key in ("model_pool", "mock_allowed_tactics", "heuristics"):
            if key in coerced and coerced[key] is not None:
                coerced[key] = tuple(coerced[key])
        if coerced.get("direction_weights") is not None:
            coerced["direction_weights"] = tuple(coerced["direction_weights"])
        try:
            return cls(**coerced)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"bad config: {exc}") from exc

    @classmethod
    def from_file(cls, path: str | Path) -> "OrchestratorConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ParseError(f"config file {path} does not exist") from None
        except json.JSONDecodeError as exc:
            raise ParseError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_json_dict(data)


@dataclass
class IngestReport:
    count: int = 0
    errors: list[tuple[int, str]] = field(default_factory=list)


class _ProverWorker:
    role = "prover"

    def __init__(self, worker_id: str, orch: "Orchestrator", rng: Random):
        self.id = worker_id
        self.orch = orch
        self.rng = rng
        prover_config = ProverConfig(
            n_f=orch.config.n_f, informal_source=orch.config.informal_source
        )
        self.prover = Prover(
            orch.library,
            orch.gateway,
            orch.verifier,
            orch.prompts,
            policy=orch.policy,
            config=prover_config,
            rng=rng,
        )

    def step(self) -> bool:
        drawn = self.orch._draw_problem()
        if drawn is None:
            return False
        problem_id, round_index = drawn
        problem = self.orch.library.problems.get(problem_id)
        result = self.prover.run_attempt(problem, round_index)

        attempt_index = None
        if not result.errored:
            record = self.orch.library.update_problem(problem_id, add_attempt=True)
            attempt_index = record.attempts_used
            if result.valid:
                self.orch.library.update_problem(problem_id, status=PROBLEM_SOLVED)
            elif record.attempts_used >= self.orch.config.attempt_budget:
                self.orch.library.update_problem(problem_id, status=PROBLEM_EXHAUSTED)

        self.orch.log.write(
            {
                "event": "attempt",
                "worker": self.id,
                "round": round_index,
                "problem_id": problem_id,
                "attempt_index": attempt_index,
                "valid": result.valid,
                "error": result.error,
                "status_after": self.orch.library.problems.get(problem_id).status,
                "retrieved": result.retrieved_skill_ids,
                "harvested": result.harvested_skill_ids,
                "requests": result.emitted_request_ids,
                "usage": result.usage_classification,
                "steps": len(result.decomposition.steps) if result.decomposition else 0,
                "theory_digest": text_digest(result.theory_source)
                if result.theory_source
                else "",
            }
        )
        return True


class _EvolverWorker:
    role = "evolver"

    def __init__(self, worker_id: str, orch: "Orchestrator", rng: Random):
        self.id = worker_id
        self.orch = orch
        self.rng = rng
        evolver_config = EvolverConfig(
            n_d=orch.config.n_d,
            solver_refs=orch.config.solver_refs,
            request_refs=orch.config.request_refs,
            direction_weights=orch.config.direction_weights,
        )
        self.evolver = Evolver(
            orch.library,
            orch.gateway,
            orch.verifier,
            orch.prompts,
            policy=orch.policy,
            config=evolver_config,
            rng=rng,
        )

    def step(self) -> bool:
        round_index = self.orch.current_round
        kind = self.rng.choice(("transform", "solve_request"))
        if kind == "transform":
            result = self.evolver.run_transform_step(round_index)
        else:
            result = self.evolver.run_solve_request_step(round_index)
        self.orch.log.write(
            {
                "event": "evolve",
                "worker": self.id,
                "round": round_index,
                "kind": result.kind,
                "inserted": result.inserted_skill_id,
                "rejected": result.rejected,
                "direction": result.direction,
                "source_skill": result.source_skill_id,
                "request": result.request_id,
            }
        )
        return result.rejected != "empty"


class Orchestrator:
    def __init__(
        self,
        config: OrchestratorConfig,
        library: SkillLibrary,
        gateway: LlmGateway,
        verifier,
        prompts: PromptLibrary,
        log: RunLog | None = None,
    ):
        self.config = config
        self.library = library
        self.gateway = gateway
        self.verifier = verifier
        self.prompts = prompts
        self.policy = RepairPolicy(heuristics=config.heuristics)
        self.log = log or RunLog(config.log_path)

        self._state_lock = threading.Lock()
        self._queue: deque[str] = deque()
        self._round = 0
        self._rotation = 0
        self._steps_done = 0
        self._started = False
        self._finished = False
        self._last_checkpoint = time.monotonic()

        self.workers = []
        for i in range(config.prover_workers):
            worker_id = f"prover-{i}"
            rng = Random(derive_seed(config.seed, worker_id))
            self.workers.append(_ProverWorker(worker_id, self, rng))
        for i in range(config.evolver_workers):
            worker_id = f"evolver-{i}"
            rng = Random(derive_seed(config.seed, worker_id))
            self.workers.append(_EvolverWorker(worker_id, self, rng))

    # ── scheduling ───────────────────────────────────────────────────

    @property
    def current_round(self) -> int:
        return self._round

    def _draw_problem(self) -> tuple[str, int] | None:
        with self._state_lock:
            if not self._queue:
                pending = [
                    p.id
                    for p in self.library.problems.records
                    if p.status == PROBLEM_PENDING
                ]
                if not pending:
                    return None
                self._round += 1
                self._queue.extend(pending)
                self.log.write(
                    {"event": "round_start", "round": self._round, "problems": pending}
                )
            return self._queue.popleft(), self._round

    def _pending_remaining(self) -> bool:
        return bool(self.library.pending_problems())

    # ── ingest ───────────────────────────────────────────────────────

    def ingest_problems(self, path: str | Path) -> IngestReport:
        """Load newline-delimited problem records (id, informal_statement,
        informal_proofs, formal_statement; `split` is accepted and ignored).
        Idempotent: records are upserted by id."""
        report = IngestReport()
        with Path(path).open(encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    data = json.loads(line)
                except json.JSONDecodeError as exc:
                    report.errors.append((line_no, f"invalid JSON: {exc}"))
                    continue
                missing = [
                    key
                    for key in ("id", "formal_statement")
                    if not str(data.get(key, "")).strip()
                ]
                if missing:
                    report.errors.append(
                        (line_no, f"missing required field(s): {', '.join(missing)}")
                    )
                    continue
                self.library.upsert_problem(
                    problem_id=str(data["id"]),
                    informal_statement=data.get("informal_statement", ""),
                    informal_proofs=list(data.get("informal_proofs", [])),
                    formal_statement=data["formal_statement"],
                    embedding=self.gateway.embed(data["formal_statement"]),
                )
                report.count += 1
        return report

    # ── run ──────────────────────────────────────────────────────────

    def run(self, max_steps: int | None = None) -> RunStats | None:
        """Run to completion and return stats, or pause after max_steps
        worker steps and return None (state stays consistent for
        checkpoint())."""
        if self.config.effective_execution == "threads":
            return self._run_threads()
        return self._run_serial(max_steps)

    def _log_run_start(self) -> None:
        if not self._started:
            self.log.write(
                {
                    "event": "run_start",
                    "workers": [{"id": w.id, "role": w.role} for w in self.workers],
                    "mode": self.config.mode,
                    "seed": self.config.seed,
                    "attempt_budget": self.config.attempt_budget,
                }
            )
            self._started = True

    def _run_serial(self, max_steps: int | None = None) -> RunStats | None:
        self._log_run_start()
        steps_this_call = 0
        while True:
            if not self._pending_remaining():
                self._finish()
                return self.compute_stats()
            if max_steps is not None and steps_this_call >= max_steps:
                return None
            worker = self.workers[self._rotation % len(self.workers)]
            self._rotation += 1
            worker.step()
            self._steps_done += 1
            steps_this_call += 1
            self._maybe_auto_checkpoint()

    def _run_threads(self) -> RunStats:
        self._log_run_start()
        stop = threading.Event()
        errors: list[BaseException] = []

        def loop(worker):
            idle_sleep = 0.01
            while not stop.is_set():
                try:
                    progressed = worker.step()
                except TransportError:
                    progressed = False
                except BaseException as exc:  # propagate to the main thread
                    errors.append(exc)
                    stop.set()
                    return
                if progressed:
                    idle_sleep = 0.01
                else:
                    time.sleep(idle_sleep)
                    idle_sleep = min(idle_sleep * 2, 0.5)

        threads = [
            threading.Thread(target=loop, args=(w,), daemon=True) for w in self.workers
        ]
        for thread in threads:
            thread.start()
        try:
            while not stop.is_set() and self._pending_remaining():
                time.sleep(0.02)
                self._maybe_auto_checkpoint()
        finally:
            stop.set()
            for thread in threads:
                thread.join(timeout=30)
        if errors:
            raise errors[0]
        self._finish()
        return self.compute_stats()

    def _finish(self) -> None:
        if not self._finished:
            solved = sum(
                1 for p in self.library.problems.records if p.status == PROBLEM_SOLVED
            )
            self.log.write({"event": "run_end", "reason": "complete", "solved": solved})
            self._finished = True

    def _maybe_auto_checkpoint(self) -> None:
        interval = self.config.checkpoint_interval
        if not interval or not self.config.checkpoint_dir:
            return
        now = time.monotonic()
        if now - self._last_checkpoint >= interval:
            self.checkpoint(self.config.checkpoint_dir)
            self._last_checkpoint = now

    def compute_stats(self) -> RunStats:
        return compute_stats(read_log(self.log.path), self.library)

    # ── checkpoint / resume ──────────────────────────────────────────

    def checkpoint(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.library.snapshot(directory / "library.snap")
        shutil.copyfile(self.log.path, directory / "run.log")
        state = {
            "format": _CHECKPOINT_FORMAT,
            "version": _CHECKPOINT_VERSION,
            "config": self.config.to_json_dict(),
            "round": self._round,
            "queue": list(self._queue),
            "rotation": self._rotation,
            "steps_done": self._steps_done,
            "started": self._started,
            "log_seq": self.log.seq,
            "gateway_cursors": self.gateway.cursors(),
            "rng_states": {
                w.id: _rng_state_to_json(w.rng.getstate()) for w in self.workers
            },
        }
        tmp = directory / "state.json.tmp"
        tmp.write_text(json.dumps(state, sort_keys=True), encoding="utf-8")
        tmp.replace(directory / "state.json")

    @classmethod
    def resume(
        cls,
        directory: str | Path,
        chat_backend=None,
        verifier=None,
        log_path: str | None = None,
    ) -> "Orchestrator":
        """Rebuild an orchestrator from a checkpoint directory. Nothing is
        mutated if the checkpoint is corrupt."""
        directory = Path(directory)
        state_path = directory / "state.json"
        if not state_path.exists():
            raise CheckpointError(f"{directory} has no state.json")
        try:
            state = json.loads(state_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"corrupt checkpoint state: {exc}") from exc
        if state.get("format") != _CHECKPOINT_FORMAT:
            raise CheckpointError(f"{state_path} is not a checkpoint state file")
        if state.get("version") != _CHECKPOINT_VERSION:
            raise CheckpointError(
                f"checkpoint version {state.get('version')} unsupported"
            )
        config = OrchestratorConfig.from_json_dict(state["config"])
        if log_path is not None:
            config.log_path = log_path
        library = SkillLibrary.load(
            directory / "library.snap", seed=derive_seed(config.seed, "library")
        )
        library.dedup_threshold = config.dedup_threshold

        # restore the log prefix, then continue appending to it
        shutil.copyfile(directory / "run.log", config.log_path)
        log = RunLog(config.log_path, start_seq=state["log_seq"])

        orch = build_orchestrator(
            config,
            chat_backend=chat_backend,
            verifier=verifier,
            library=library,
            log=log,
        )
        orch.gateway.restore_cursors(state["gateway_cursors"])
        orch._round = state["round"]
        orch._queue = deque(state["queue"])
        orch._rotation = state["rotation"]
        orch._steps_done = state["steps_done"]
        orch._started = state["started"]
        rng_states = state["rng_states"]
        for worker in orch.workers:
            if worker.id not in rng_states:
                raise CheckpointError(f"checkpoint lacks rng state for {worker.id}")
            worker.rng.setstate(_rng_state_from_json(rng_states[worker.id]))
        return orch


def _rng_state_to_json(state) -> list:
    version, internal, gauss = state
    return [version, list(internal), gauss]


def _rng_state_from_json(data) -> tuple:
    version, internal, gauss = data
    return (version, tuple(internal), gauss)


def build_orchestrator(
    config: OrchestratorConfig,
    chat_backend=None,
    verifier=None,
    library: SkillLibrary | None = None,
    log: RunLog | None = None,
) -> Orchestrator:
    """Construct the full runtime from a config; test doubles for the chat
    backend and verifier can be injected."""
    if chat_backend is None and config.mode in ("live", "record"):
        if not config.chat_base_url:
            raise ParseError(f"{config.mode} mode requires chat_base_url")
        chat_backend = HttpChatBackend(config.chat_base_url, config.chat_api_key)

    if config.embed_base_url:
        embedder = HttpEmbedder(
            config.embed_base_url, config.embed_model, config.chat_api_key
        )
    else:
        embedder = HashEmbedder(config.embedding_dim)

    gateway = LlmGateway(
        mode=config.mode,
        chat_backend=chat_backend,
        embedder=embedder,
        cassette_path=config.cassette_path,
        model_pool=config.model_pool,
        temperature=config.temperature,
        rng=Random(derive_seed(config.seed, "gateway")),
        max_retries=config.max_retries,
        backoff_base=config.backoff_base,
        dim=config.embedding_dim,
    )

    if verifier is None:
        if config.verifier == "mock":
            verifier = MockVerifier(
                allowed_tactics=set(config.mock_allowed_tactics),
                default_accept=config.mock_default_accept,
            )
        elif config.verifier == "tcp":
            verifier = TcpVerifier(
                config.verifier_host, config.verifier_port, config.verifier_timeout
            )
        else:
            raise ParseError(f"unknown verifier kind {config.verifier!r}")

    prompts = PromptLibrary(config.template_dir)

    if library is None:
        if config.library_path and Path(config.library_path).exists():
            library = SkillLibrary.load(
                config.library_path, seed=derive_seed(config.seed, "library")
            )
            library.dedup_threshold = config.dedup_threshold
        else:
            library = SkillLibrary(
                dim=config.embedding_dim,
                dedup_threshold=config.dedup_threshold,
                seed=derive_seed(config.seed, "library"),
            )

    return Orchestrator(config, library, gateway, verifier, prompts, log=log)
