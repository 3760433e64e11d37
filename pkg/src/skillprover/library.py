"""Embedding-backed stores for lemmas, requests, and problems.

The library is the single shared-state component: prover and evolver
workers never talk to each other, they only read and write here. All
mutations are linearizable (one re-entrant lock), selection operations
combine read+increment atomically, and every mutation can be mirrored to
an append-only journal so a crashed run can be rebuilt.
"""

from __future__ import annotations

import json
import threading
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from random import Random
from typing import IO

import numpy as np

from .errors import (
    CorruptStoreError,
    DimensionMismatchError,
    EmptyStoreError,
    UnknownRecordError,
)
from .similarity import length_upper_bound, similarity_ratio

# Skill origins. Directional origins always have a parent skill; the two
# root origins never do.
ORIGIN_PROVER = "prover"
ORIGIN_REQUEST_SOLVER = "request_solver"
ORIGIN_EXTEND_DIMENSIONS = "dir_extend_dimensions"
ORIGIN_IDENTIFY_KEY_CONCEPTS = "dir_identify_key_concepts"
ORIGIN_PARAMETERIZE = "dir_parameterize"
ORIGIN_SCALE_COMPLEXITY = "dir_scale_complexity"

ROOT_ORIGINS = frozenset({ORIGIN_PROVER, ORIGIN_REQUEST_SOLVER})
DIRECTIONAL_ORIGINS = (
    ORIGIN_EXTEND_DIMENSIONS,
    ORIGIN_IDENTIFY_KEY_CONCEPTS,
    ORIGIN_PARAMETERIZE,
    ORIGIN_SCALE_COMPLEXITY,
)
ALL_ORIGINS = frozenset(ROOT_ORIGINS) | frozenset(DIRECTIONAL_ORIGINS)

REQUEST_OPEN = "open"
REQUEST_SOLVED = "solved"

PROBLEM_PENDING = "pending"
PROBLEM_SOLVED = "solved"
PROBLEM_EXHAUSTED = "exhausted"

DEFAULT_DEDUP_THRESHOLD = 0.85

_SNAPSHOT_FORMAT = "skillprover-library"
_JOURNAL_FORMAT = "skillprover-journal"
_VERSION = 1


def _as_embedding(values, dim: int) -> np.ndarray:
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1 or vec.shape[0] != dim:
        raise DimensionMismatchError(
            f"expected embedding of dimension {dim}, got shape {vec.shape}"
        )
    if not np.all(np.isfinite(vec)):
        raise ValueError("embedding contains NaN or Inf entries")
    return vec


@dataclass(eq=False)
class SkillRecord:
    id: str
    statement: str
    code: str
    embedding: np.ndarray
    origin: str
    parent_id: str | None = None
    evolve_count: int = 0
    created_round: int = 0

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "statement": self.statement,
            "code": self.code,
            "embedding": [float(v) for v in self.embedding],
            "origin": self.origin,
            "parent_id": self.parent_id,
            "evolve_count": self.evolve_count,
            "created_round": self.created_round,
        }


@dataclass(eq=False)
class RequestRecord:
    id: str
    thought: str
    statement: str
    embedding: np.ndarray
    solve_count: int = 0
    source_problem: str | None = None
    status: str = REQUEST_OPEN

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "thought": self.thought,
            "statement": self.statement,
            "embedding": [float(v) for v in self.embedding],
            "solve_count": self.solve_count,
            "source_problem": self.source_problem,
            "status": self.status,
        }


@dataclass(eq=False)
class ProblemRecord:
    id: str
    informal_statement: str
    informal_proofs: list[str]
    formal_statement: str
    embedding: np.ndarray
    status: str = PROBLEM_PENDING
    attempts_used: int = 0

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "informal_statement": self.informal_statement,
            "informal_proofs": list(self.informal_proofs),
            "formal_statement": self.formal_statement,
            "embedding": [float(v) for v in self.embedding],
            "status": self.status,
            "attempts_used": self.attempts_used,
        }


@dataclass(frozen=True)
class StoreQueryResult:
    record_id: str
    similarity: float
    rank: int


@dataclass(frozen=True)
class InsertOutcome:
    """Result of a dedup-checked skill insertion."""

    accepted: bool
    skill_id: str | None = None
    max_similarity: float = 0.0
    nearest_id: str | None = None


class VectorStore:
    """Insertion-ordered records with exact cosine k-NN retrieval."""

    def __init__(self, dim: int):
        self.dim = dim
        self.records: list = []
        self.by_id: dict[str, object] = {}
        self._matrix: np.ndarray | None = None
        self._norms: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.records)

    def add(self, record) -> None:
        if record.id in self.by_id:
            raise ValueError(f"duplicate record id {record.id!r}")
        record.embedding = _as_embedding(record.embedding, self.dim)
        self.records.append(record)
        self.by_id[record.id] = record
        self._matrix = None

    def get(self, record_id: str):
        try:
            return self.by_id[record_id]
        except KeyError:
            raise UnknownRecordError(f"no record with id {record_id!r}") from None

    def _embeddings(self) -> tuple[np.ndarray, np.ndarray]:
        if self._matrix is None:
            self._matrix = np.vstack([r.embedding for r in self.records])
            self._norms = np.linalg.norm(self._matrix, axis=1)
        return self._matrix, self._norms

    def query_top_k(self, embedding, k: int) -> list[StoreQueryResult]:
        """The min(k, size) records most cosine-similar to the query.

        Sorted by similarity descending; exact ties resolved by insertion
        order so results are reproducible.
        """
        if k <= 0:
            raise ValueError("k must be positive")
        query = _as_embedding(embedding, self.dim)
        if not self.records:
            return []
        matrix, norms = self._embeddings()
        qnorm = float(np.linalg.norm(query))
        denom = norms * qnorm
        sims = np.zeros(len(self.records))
        nonzero = denom > 0.0
        sims[nonzero] = (matrix[nonzero] @ query) / denom[nonzero]
        order = np.argsort(-sims, kind="stable")[: min(k, len(self.records))]
        return [
            StoreQueryResult(
                record_id=self.records[int(idx)].id,
                similarity=float(sims[int(idx)]),
                rank=rank + 1,
            )
            for rank, idx in enumerate(order)
        ]


class SkillLibrary:
    """Three vector stores plus dedup, counters, genealogy, persistence."""

    def __init__(
        self,
        dim: int = 1536,
        dedup_threshold: float = DEFAULT_DEDUP_THRESHOLD,
        seed: int | None = None,
    ):
        if not 0.0 < dedup_threshold <= 1.0:
            raise ValueError("dedup_threshold must be in (0, 1]")
        self.dim = dim
        self.dedup_threshold = dedup_threshold
        self.lemmas = VectorStore(dim)
        self.requests = VectorStore(dim)
        self.problems = VectorStore(dim)
        self._lock = threading.RLock()
        self._rng = Random(seed)
        self._next_skill = 1
        self._next_request = 1
        self._code_counters: list[Counter] = []
        self._journal: IO[str] | None = None
        self._journal_path: Path | None = None

    # ── journal ──────────────────────────────────────────────────────

    def attach_journal(self, path: str | Path) -> None:
        """Mirror every mutation to an append-only ndjson file."""
        with self._lock:
            path = Path(path)
            fresh = not path.exists() or path.stat().st_size == 0
            self._journal = path.open("a", encoding="utf-8")
            self._journal_path = path
            if fresh:
                header = {"format": _JOURNAL_FORMAT, "version": _VERSION, "dim": self.dim}
                self._journal.write(json.dumps(header, sort_keys=True) + "\n")
                self._journal.flush()

    def close_journal(self) -> None:
        with self._lock:
            if self._journal is not None:
                self._journal.close()
                self._journal = None

    def _log_event(self, event: dict) -> None:
        if self._journal is not None:
            self._journal.write(json.dumps(event, sort_keys=True) + "\n")
            self._journal.flush()

    @classmethod
    def replay_journal(cls, path: str | Path, **kwargs) -> "SkillLibrary":
        """Rebuild a library from its journal alone."""
        path = Path(path)
        with path.open(encoding="utf-8") as fh:
            try:
                header = json.loads(fh.readline())
            except json.JSONDecodeError as exc:
                raise CorruptStoreError(f"bad journal header in {path}") from exc
            if header.get("format") != _JOURNAL_FORMAT:
                raise CorruptStoreError(f"{path} is not a library journal")
            lib = cls(dim=header["dim"], **kwargs)
            for line_no, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                try:
                    event = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CorruptStoreError(
                        f"corrupt journal line {line_no} in {path}"
                    ) from exc
                lib._apply_event(event)
        return lib

    def _apply_event(self, event: dict) -> None:
        kind = event["event"]
        if kind == "insert_skill":
            self._add_skill(SkillRecord(**event["record"]))
        elif kind == "insert_request":
            rec = RequestRecord(**event["record"])
            self.requests.add(rec)
            self._next_request = max(self._next_request, _id_number(rec.id) + 1)
        elif kind == "upsert_problem":
            self._upsert_problem(ProblemRecord(**event["record"]))
        elif kind == "usage":
            self.record_usage(event["id"], event["kind"], _log=False)
        elif kind == "request_solved":
            self.mark_request_solved(event["id"], _log=False)
        elif kind == "problem_update":
            rec = self.problems.get(event["id"])
            rec.status = event["status"]
            rec.attempts_used = event["attempts_used"]
        else:
            raise CorruptStoreError(f"unknown journal event {kind!r}")

    # ── skills ───────────────────────────────────────────────────────

    def max_code_similarity(self, code: str) -> tuple[float, str | None]:
        """Highest similarity of `code` against every stored skill.

        Exact: cheap upper bounds only skip records that provably cannot
        beat the best ratio seen so far.
        """
        with self._lock:
            best = -1.0
            best_id: str | None = None
            cand_counter = Counter(code)
            cand_len = len(code)
            for record, counter in zip(self.lemmas.records, self._code_counters):
                if length_upper_bound(cand_len, len(record.code)) <= best:
                    continue
                total = cand_len + len(record.code)
                if total:
                    overlap = sum((cand_counter & counter).values())
                    if 2.0 * overlap / total <= best:
                        continue
                ratio = similarity_ratio(code, record.code)
                if ratio > best:
                    best, best_id = ratio, record.id
                    if best == 1.0:
                        break
            return (max(best, 0.0), best_id)

    def insert_skill(
        self,
        statement: str,
        code: str,
        embedding,
        origin: str,
        parent_id: str | None = None,
        created_round: int = 0,
    ) -> InsertOutcome:
        """Store a verified skill unless it near-duplicates an existing one.

        The candidate is admitted iff its maximum similarity against all
        stored skill code texts is strictly below the dedup threshold.
        """
        if origin not in ALL_ORIGINS:
            raise ValueError(f"unknown origin {origin!r}")
        if (parent_id is None) != (origin in ROOT_ORIGINS):
            raise ValueError(
                f"origin {origin!r} is incompatible with parent_id={parent_id!r}"
            )
        with self._lock:
            if parent_id is not None and parent_id not in self.lemmas.by_id:
                raise UnknownRecordError(f"parent skill {parent_id!r} does not exist")
            max_sim, nearest = self.max_code_similarity(code)
            if nearest is not None and max_sim >= self.dedup_threshold:
                return InsertOutcome(
                    accepted=False, max_similarity=max_sim, nearest_id=nearest
                )
            record = SkillRecord(
                id=f"skill-{self._next_skill:06d}",
                statement=statement,
                code=code,
                embedding=_as_embedding(embedding, self.dim),
                origin=origin,
                parent_id=parent_id,
                evolve_count=0,
                created_round=created_round,
            )
            self._next_skill += 1
            self._add_skill(record)
            self._log_event({"event": "insert_skill", "record": record.to_json_dict()})
            return InsertOutcome(
                accepted=True,
                skill_id=record.id,
                max_similarity=max(max_sim, 0.0),
                nearest_id=nearest,
            )

    def _add_skill(self, record: SkillRecord) -> None:
        self.lemmas.add(record)
        self._code_counters.append(Counter(record.code))
        self._next_skill = max(self._next_skill, _id_number(record.id) + 1)

    # ── requests ─────────────────────────────────────────────────────

    def insert_request(
        self,
        thought: str,
        statement: str,
        embedding,
        source_problem: str | None = None,
    ) -> RequestRecord:
        if not statement.strip():
            raise ValueError("request statement must be non-empty")
        with self._lock:
            record = RequestRecord(
                id=f"request-{self._next_request:06d}",
                thought=thought,
                statement=statement,
                embedding=_as_embedding(embedding, self.dim),
                source_problem=source_problem,
            )
            self._next_request += 1
            self.requests.add(record)
            self._log_event({"event": "insert_request", "record": record.to_json_dict()})
            return record

    def mark_request_solved(self, request_id: str, _log: bool = True) -> None:
        with self._lock:
            record = self.requests.get(request_id)
            record.status = REQUEST_SOLVED
            if _log:
                self._log_event({"event": "request_solved", "id": request_id})

    # ── problems ─────────────────────────────────────────────────────

    def upsert_problem(
        self,
        problem_id: str,
        informal_statement: str,
        informal_proofs: list[str],
        formal_statement: str,
        embedding,
    ) -> ProblemRecord:
        if not formal_statement.strip():
            raise ValueError("formal_statement must be non-empty")
        with self._lock:
            record = ProblemRecord(
                id=problem_id,
                informal_statement=informal_statement,
                informal_proofs=list(informal_proofs),
                formal_statement=formal_statement,
                embedding=_as_embedding(embedding, self.dim),
            )
            self._upsert_problem(record)
            self._log_event({"event": "upsert_problem", "record": record.to_json_dict()})
            return self.problems.get(problem_id)

    def _upsert_problem(self, record: ProblemRecord) -> None:
        existing = self.problems.by_id.get(record.id)
        if existing is None:
            self.problems.add(record)
        else:
            # Re-ingest refreshes the text fields but keeps run state.
            existing.informal_statement = record.informal_statement
            existing.informal_proofs = list(record.informal_proofs)
            existing.formal_statement = record.formal_statement
            existing.embedding = _as_embedding(record.embedding, self.dim)

    def update_problem(
        self, problem_id: str, status: str | None = None, add_attempt: bool = False
    ) -> ProblemRecord:
        if status is not None and status not in (
            PROBLEM_PENDING,
            PROBLEM_SOLVED,
            PROBLEM_EXHAUSTED,
        ):
            raise ValueError(f"unknown problem status {status!r}")
        with self._lock:
            record = self.problems.get(problem_id)
            if add_attempt:
                record.attempts_used += 1
            if status is not None:
                record.status = status
            self._log_event(
                {
                    "event": "problem_update",
                    "id": problem_id,
                    "status": record.status,
                    "attempts_used": record.attempts_used,
                }
            )
            return record

    def pending_problems(self) -> list[ProblemRecord]:
        with self._lock:
            return [p for p in self.problems.records if p.status == PROBLEM_PENDING]

    # ── retrieval ────────────────────────────────────────────────────

    def query_top_k(self, store: str, embedding, k: int) -> list[StoreQueryResult]:
        with self._lock:
            return self._store(store).query_top_k(embedding, k)

    def _store(self, name: str) -> VectorStore:
        try:
            return {"lemma": self.lemmas, "request": self.requests, "problem": self.problems}[
                name
            ]
        except KeyError:
            raise ValueError(f"unknown store {name!r}") from None

    # ── selection & counters ─────────────────────────────────────────

    def select_least_evolved(self, rng: Random | None = None) -> SkillRecord:
        """A uniformly random skill among those with minimal evolve_count."""
        with self._lock:
            if not self.lemmas.records:
                raise EmptyStoreError("lemma store is empty")
            minimum = min(r.evolve_count for r in self.lemmas.records)
            ties = [r for r in self.lemmas.records if r.evolve_count == minimum]
            return (rng or self._rng).choice(ties)

    def select_least_solved_request(self, rng: Random | None = None) -> RequestRecord:
        """A uniformly random open request among those with minimal solve_count."""
        with self._lock:
            open_requests = [
                r for r in self.requests.records if r.status == REQUEST_OPEN
            ]
            if not open_requests:
                raise EmptyStoreError("no open requests")
            minimum = min(r.solve_count for r in open_requests)
            ties = [r for r in open_requests if r.solve_count == minimum]
            return (rng or self._rng).choice(ties)

    def record_usage(self, record_id: str, kind: str, _log: bool = True) -> int:
        """Increment the selection counter for a skill or request by one."""
        with self._lock:
            if kind == "evolved":
                record = self.lemmas.get(record_id)
                record.evolve_count += 1
                count = record.evolve_count
            elif kind == "solved":
                record = self.requests.get(record_id)
                record.solve_count += 1
                count = record.solve_count
            else:
                raise ValueError(f"unknown usage kind {kind!r}")
            if _log:
                self._log_event({"event": "usage", "id": record_id, "kind": kind})
            return count

    def draw_least_evolved(self, rng: Random | None = None) -> SkillRecord:
        """Atomic select-and-increment so concurrent workers never draw
        the same least-evolved skill twice."""
        with self._lock:
            record = self.select_least_evolved(rng)
            self.record_usage(record.id, "evolved")
            return record

    def draw_least_solved_request(self, rng: Random | None = None) -> RequestRecord:
        with self._lock:
            record = self.select_least_solved_request(rng)
            self.record_usage(record.id, "solved")
            return record

    # ── genealogy ────────────────────────────────────────────────────

    def export_genealogy(self) -> list[dict]:
        """Forest of skill evolution trees, roots in insertion order.

        Node: {id, origin, statement, children}. Raises if a parent link
        points at a missing skill or the structure is not a forest.
        """
        with self._lock:
            children: dict[str, list[SkillRecord]] = {}
            roots: list[SkillRecord] = []
            for record in self.lemmas.records:
                if record.parent_id is None:
                    roots.append(record)
                else:
                    if record.parent_id not in self.lemmas.by_id:
                        raise CorruptStoreError(
                            f"skill {record.id} has dangling parent {record.parent_id!r}"
                        )
                    children.setdefault(record.parent_id, []).append(record)

            seen: set[str] = set()

            def build(record: SkillRecord) -> dict:
                if record.id in seen:
                    raise CorruptStoreError(f"skill {record.id} appears twice in forest")
                seen.add(record.id)
                return {
                    "id": record.id,
                    "origin": record.origin,
                    "statement": record.statement,
                    "children": [build(c) for c in children.get(record.id, [])],
                }

            forest = [build(r) for r in roots]
            if len(seen) != len(self.lemmas.records):
                raise CorruptStoreError("genealogy contains a cycle")
            return forest

    def genealogy_dot(self) -> str:
        """Genealogy in DOT graph-description form for graph visualizers."""
        forest = self.export_genealogy()
        lines = ["digraph skills {", "  rankdir=TB;"]

        def emit(node: dict) -> None:
            label = node["statement"].replace("\\", "\\\\").replace('"', '\\"')
            if len(label) > 60:
                label = label[:57] + "..."
            lines.append(f'  "{node["id"]}" [label="{node["id"]}\\n{label}"];')
            for child in node["children"]:
                lines.append(f'  "{node["id"]}" -> "{child["id"]}";')
                emit(child)

        for root in forest:
            emit(root)
        lines.append("}")
        return "\n".join(lines)

    # ── persistence ──────────────────────────────────────────────────

    def snapshot(self, path: str | Path) -> None:
        """Write every record, counter, and embedding to a versioned file."""
        path = Path(path)
        with self._lock:
            header = {
                "format": _SNAPSHOT_FORMAT,
                "version": _VERSION,
                "dim": self.dim,
                "dedup_threshold": self.dedup_threshold,
                "next_skill": self._next_skill,
                "next_request": self._next_request,
                "counts": {
                    "skills": len(self.lemmas),
                    "requests": len(self.requests),
                    "problems": len(self.problems),
                },
            }
            tmp = path.with_suffix(path.suffix + ".tmp")
            with tmp.open("w", encoding="utf-8") as fh:
                fh.write(json.dumps(header, sort_keys=True) + "\n")
                for record in self.lemmas.records:
                    fh.write(_record_line("skill", record))
                for record in self.requests.records:
                    fh.write(_record_line("request", record))
                for record in self.problems.records:
                    fh.write(_record_line("problem", record))
            tmp.replace(path)

    @classmethod
    def load(cls, path: str | Path, seed: int | None = None) -> "SkillLibrary":
        """Rebuild a library from a snapshot; raises without partial state
        when the file is truncated or inconsistent."""
        path = Path(path)
        if not path.exists():
            raise CorruptStoreError(f"snapshot {path} does not exist")
        with path.open(encoding="utf-8") as fh:
            try:
                header = json.loads(fh.readline())
            except json.JSONDecodeError as exc:
                raise CorruptStoreError(f"bad snapshot header in {path}") from exc
            if header.get("format") != _SNAPSHOT_FORMAT:
                raise CorruptStoreError(f"{path} is not a library snapshot")
            if header.get("version") != _VERSION:
                raise CorruptStoreError(
                    f"snapshot version {header.get('version')} unsupported"
                )
            lib = cls(
                dim=header["dim"],
                dedup_threshold=header.get("dedup_threshold", DEFAULT_DEDUP_THRESHOLD),
                seed=seed,
            )
            counts = {"skill": 0, "request": 0, "problem": 0}
            for line_no, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                try:
                    entry = json.loads(line)
                    kind = entry["kind"]
                    payload = entry["record"]
                except (json.JSONDecodeError, KeyError) as exc:
                    raise CorruptStoreError(
                        f"corrupt snapshot line {line_no} in {path}"
                    ) from exc
                counts[kind] += 1
                if kind == "skill":
                    lib._add_skill(SkillRecord(**payload))
                elif kind == "request":
                    lib.requests.add(RequestRecord(**payload))
                elif kind == "problem":
                    lib.problems.add(ProblemRecord(**payload))
            expected = header.get("counts", {})
            actual = {
                "skills": counts["skill"],
                "requests": counts["request"],
                "problems": counts["problem"],
            }
            if expected and expected != actual:
                raise CorruptStoreError(
                    f"snapshot {path} truncated: header says {expected}, found {actual}"
                )
            lib._next_skill = header["next_skill"]
            lib._next_request = header["next_request"]
        return lib


def _record_line(kind: str, record) -> str:
    return json.dumps({"kind": kind, "record": record.to_json_dict()}, sort_keys=True) + "\n"


def _id_number(record_id: str) -> int:
    try:
        return int(record_id.rsplit("-", 1)[-1])
    except ValueError:
        return 0
