"""Verifier backends and the tactic auto-repair loop.

A backend checks whole theory sources and reports per-step failures in
(block_index, step_index) coordinates, where steps are the tactic
commands of a block in document order. Repair substitutes failing tactics
with a fixed ladder of candidates: eleven heuristic tactics first, the
hammer last.
"""

from __future__ import annotations

import json
import socket
import threading
import time
from dataclasses import dataclass, field

from .errors import ProtocolError, TransportError
from .theory import (
    active_mask,
    contains_cheat_keywords,
    extract_statement,
    normalize_ws,
    parse_theory,
)

HAMMER_TOKEN = "sledgehammer"

# Heuristic ladder tried before the hammer when a tactic fails.
DEFAULT_HEURISTICS = (
    "by auto",
    "by simp",
    "by blast",
    "by fastforce",
    "by force",
    "by eval",
    "by presburger",
    "by sos",
    "by arith",
    "by linarith",
    "by (auto simp: field_simps)",
)


@dataclass(frozen=True)
class StepFailure:
    block_index: int
    step_index: int
    message: str


@dataclass
class VerifierOutcome:
    success: bool
    failures: list[StepFailure] = field(default_factory=list)
    elapsed: float = 0.0
    repaired_source: str | None = None

    def failing_positions(self) -> set[tuple[int, int]]:
        return {(f.block_index, f.step_index) for f in self.failures}


@dataclass(frozen=True)
class HammerResult:
    ok: bool
    tactic: str | None = None


@dataclass
class RepairPolicy:
    heuristics: tuple[str, ...] = DEFAULT_HEURISTICS
    hammer_token: str = HAMMER_TOKEN
    per_step_timeout: float = 30.0
    whole_proof_timeout: float = 360.0

    def __post_init__(self):
        self.heuristics = tuple(self.heuristics)
        if len(self.heuristics) != 11:
            raise ValueError("repair policy requires exactly 11 heuristic tactics")
        if len(set(self.heuristics)) != len(self.heuristics):
            raise ValueError("heuristic tactics must be distinct")

    @property
    def candidates(self) -> tuple[str, ...]:
        return self.heuristics + (self.hammer_token,)


@dataclass(frozen=True)
class ProofStep:
    block_index: int
    step_index: int
    span: tuple[int, int]
    tactic: str


def extract_proof_steps(source: str) -> list[ProofStep]:
    """Tactic commands (`by ...`, `apply ...`, `sledgehammer`) of every
    block, in document order, with absolute character spans."""
    doc = parse_theory(source)
    mask = active_mask(source)
    steps: list[ProofStep] = []
    for block_index, block in enumerate(doc.blocks):
        body_start = block.span[0] + len(block.statement)
        step_index = 0
        for span in _tactic_spans(source, mask, body_start, block.span[1]):
            steps.append(
                ProofStep(
                    block_index=block_index,
                    step_index=step_index,
                    span=span,
                    tactic=normalize_ws(source[span[0] : span[1]]),
                )
            )
            step_index += 1
    return steps


_TACTIC_OPENERS = ("by", "apply", HAMMER_TOKEN)


def _tactic_spans(
    source: str, mask: list[bool], start: int, end: int
) -> list[tuple[int, int]]:
    import re

    spans: list[tuple[int, int]] = []
    for match in re.finditer(r"[A-Za-z_][A-Za-z0-9_']*", source[start:end]):
        tok = match.group()
        if tok not in _TACTIC_OPENERS:
            continue
        abs_start = start + match.start()
        abs_end = start + match.end()
        if not all(mask[i] for i in range(abs_start, abs_end)):
            continue
        if spans and abs_start < spans[-1][1]:
            continue  # inside the previous tactic's argument
        if tok == HAMMER_TOKEN:
            spans.append((abs_start, abs_end))
        else:
            spans.append((abs_start, _method_end(source, mask, abs_end, end)))
    return spans


def _method_end(source: str, mask: list[bool], pos: int, limit: int) -> int:
    """End of a `by`/`apply` method expression: the end of line, extended
    while active parentheses remain unbalanced."""
    depth = 0
    i = pos
    while i < limit:
        ch = source[i]
        if mask[i]:
            if ch == "(":
                depth += 1
            elif ch == ")":
                depth -= 1
        if ch == "\n" and depth <= 0:
            break
        i += 1
    while i > pos and source[i - 1].isspace():
        i -= 1
    return i


class MockVerifier:
    """Deterministic scripted backend for offline runs and tests.

    A step passes when its tactic is allowed at that position:
      * `sledgehammer` steps always fail plain verification (placeholders
        must be repaired); the hammer is exercised via try_hammer, which
        answers from `hammer_results`.
      * positions present in `step_rules` accept exactly the listed tactics;
      * other steps accept tactics in `allowed_tactics`, or anything at all
        when `default_accept` is set.
    Lemma/theorem blocks with an empty proof body fail at step 0.
    """

    def __init__(
        self,
        allowed_tactics: set[str] | None = None,
        step_rules: dict[tuple[int, int], set[str]] | None = None,
        hammer_results: dict[tuple[int, int], str | None] | None = None,
        default_accept: bool = False,
    ):
        self.allowed_tactics = {normalize_ws(t) for t in (allowed_tactics or set())}
        self.step_rules = {
            pos: {normalize_ws(t) for t in tactics}
            for pos, tactics in (step_rules or {}).items()
        }
        self.hammer_results = dict(hammer_results or {})
        self.default_accept = default_accept
        self.verify_calls: list[str] = []
        self.hammer_calls: list[tuple[int, int]] = []
        self._lock = threading.Lock()

    def _step_ok(self, position: tuple[int, int], tactic: str) -> bool:
        if tactic == HAMMER_TOKEN:
            return False
        if position in self.step_rules:
            return tactic in self.step_rules[position]
        return self.default_accept or tactic in self.allowed_tactics

    def verify(self, source: str) -> VerifierOutcome:
        with self._lock:
            self.verify_calls.append(source)
        failures: list[StepFailure] = []
        steps = extract_proof_steps(source)
        by_block: dict[int, int] = {}
        for step in steps:
            by_block[step.block_index] = by_block.get(step.block_index, 0) + 1
            position = (step.block_index, step.step_index)
            if not self._step_ok(position, step.tactic):
                message = (
                    "unresolved sledgehammer placeholder"
                    if step.tactic == HAMMER_TOKEN
                    else f"tactic {step.tactic!r} rejected"
                )
                failures.append(StepFailure(*position, message))
        for block_index, block in enumerate(parse_theory(source).blocks):
            if (
                block.kind in ("lemma", "theorem")
                and block_index not in by_block
                and not block.proof_body.strip()
            ):
                failures.append(StepFailure(block_index, 0, "missing proof"))
        failures.sort(key=lambda f: (f.block_index, f.step_index))
        return VerifierOutcome(success=not failures, failures=failures, elapsed=0.0)

    def try_hammer(self, source: str, block_index: int, step_index: int) -> HammerResult:
        with self._lock:
            self.hammer_calls.append((block_index, step_index))
        tactic = self.hammer_results.get((block_index, step_index))
        if tactic is None:
            return HammerResult(ok=False)
        return HammerResult(ok=True, tactic=normalize_ws(tactic))

    def tactics_seen(self, block_index: int, step_index: int) -> list[str]:
        """Tactic text submitted at one position across verify calls."""
        seen = []
        for source in self.verify_calls:
            for step in extract_proof_steps(source):
                if (step.block_index, step.step_index) == (block_index, step_index):
                    seen.append(step.tactic)
        return seen


class TcpVerifier:
    """Adapter for a PISA-style checker over a TCP connection.

    Wire dialect: one JSON object per line. Requests carry an `action`
    (`init`, `check`, or `hammer`), the theory text, and a timeout;
    replies carry `ok`, a `failures` list of [block, step, message]
    triples, and a free-form `message`. Hammer replies add `tactic`.
    The dialect lives entirely in this class, so a different checker only
    needs a sibling adapter.
    """

    def __init__(self, host: str, port: int, timeout: float = 360.0):
        self.host = host
        self.port = port
        self.timeout = timeout
        self._sock: socket.socket | None = None
        self._file = None
        self._lock = threading.Lock()

    def _connect(self) -> None:
        try:
            self._sock = socket.create_connection(
                (self.host, self.port), timeout=self.timeout
            )
            self._file = self._sock.makefile("rwb")
        except OSError as exc:
            self._sock = None
            self._file = None
            raise TransportError(
                f"cannot reach verifier at {self.host}:{self.port}: {exc}"
            ) from exc
        reply = self._roundtrip({"action": "init"})
        if not reply.get("ok"):
            raise TransportError(f"verifier refused init: {reply.get('message')}")

    def _roundtrip(self, payload: dict) -> dict:
        try:
            self._file.write(json.dumps(payload).encode("utf-8") + b"\n")
            self._file.flush()
            line = self._file.readline()
        except OSError as exc:
            self.close()
            raise TransportError(f"verifier connection failed: {exc}") from exc
        if not line:
            self.close()
            raise TransportError("verifier closed the connection")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"verifier sent malformed JSON: {line[:200]!r}") from exc
        if not isinstance(reply, dict) or "ok" not in reply:
            raise ProtocolError(f"verifier reply missing 'ok': {reply!r}")
        return reply

    def _ensure(self) -> None:
        if self._sock is None:
            self._connect()

    def verify(self, source: str) -> VerifierOutcome:
        with self._lock:
            self._ensure()
            started = time.monotonic()
            reply = self._roundtrip(
                {"action": "check", "theory_text": source, "timeout": self.timeout}
            )
            failures = [
                StepFailure(int(b), int(s), str(msg))
                for b, s, msg in reply.get("failures", [])
            ]
            return VerifierOutcome(
                success=bool(reply["ok"]),
                failures=failures,
                elapsed=time.monotonic() - started,
            )

    def try_hammer(self, source: str, block_index: int, step_index: int) -> HammerResult:
        with self._lock:
            self._ensure()
            reply = self._roundtrip(
                {
                    "action": "hammer",
                    "theory_text": source,
                    "block": block_index,
                    "step": step_index,
                    "timeout": self.timeout,
                }
            )
            if reply["ok"] and reply.get("tactic"):
                return HammerResult(ok=True, tactic=normalize_ws(str(reply["tactic"])))
            return HammerResult(ok=False)

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None
                self._file = None


class VerifierPool:
    """Round-robin pool of verifier sessions, one in-flight call each."""

    def __init__(self, factory, size: int):
        if size <= 0:
            raise ValueError("pool size must be positive")
        self._sessions = [factory() for _ in range(size)]
        self._locks = [threading.Lock() for _ in range(size)]
        self._cursor = 0
        self._guard = threading.Lock()

    def acquire(self):
        with self._guard:
            index = self._cursor % len(self._sessions)
            self._cursor += 1
        return _PoolLease(self._sessions[index], self._locks[index])


class _PoolLease:
    def __init__(self, session, lock):
        self._session = session
        self._lock = lock

    def __enter__(self):
        self._lock.acquire()
        return self._session

    def __exit__(self, *exc):
        self._lock.release()
        return False


def _substitute_step(source: str, position: tuple[int, int], tactic: str) -> str | None:
    for step in extract_proof_steps(source):
        if (step.block_index, step.step_index) == position:
            return source[: step.span[0]] + tactic + source[step.span[1] :]
    return None


def repair_and_verify(source: str, policy: RepairPolicy, backend) -> VerifierOutcome:
    """Verify a theory, substituting candidates for failing tactics.

    Per failing step the candidates are tried in policy order — the eleven
    heuristics, then one hammer call — and the first substitution that
    clears the step is kept. A source that verifies as-is comes back
    untouched (repaired_source is None); placeholders always fail plain
    verification, so a successful repaired source never contains one.
    """
    outcome = backend.verify(source)
    if outcome.success:
        return outcome

    max_attempts = len(policy.candidates)
    attempts: dict[tuple[int, int], int] = {}
    work = source
    last = outcome

    while not last.success:
        position = None
        for failure in last.failures:
            pos = (failure.block_index, failure.step_index)
            if attempts.get(pos, 0) < max_attempts:
                position = pos
                break
        if position is None:
            return VerifierOutcome(success=False, failures=last.failures)

        if _substitute_step(work, position, "probe") is None:
            # failure does not map to a substitutable tactic (e.g. a block
            # with no proof at all) — nothing the ladder can do
            attempts[position] = max_attempts
            continue

        fixed = False
        for candidate in policy.candidates[attempts.get(position, 0) :]:
            attempts[position] = attempts.get(position, 0) + 1
            if candidate == policy.hammer_token:
                hammer = backend.try_hammer(work, *position)
                if not hammer.ok or not hammer.tactic:
                    continue
                trial = _substitute_step(work, position, hammer.tactic)
            else:
                trial = _substitute_step(work, position, candidate)
            trial_outcome = backend.verify(trial)
            if position not in trial_outcome.failing_positions():
                work = trial
                last = trial_outcome
                fixed = True
                break
        if not fixed:
            return VerifierOutcome(success=False, failures=last.failures)

    return VerifierOutcome(
        success=True, failures=[], elapsed=last.elapsed, repaired_source=work
    )


def validity_check(source: str, outcome: VerifierOutcome, formal_statement: str) -> bool:
    """A proof is valid iff it is cheat-free, verified, and actually proves
    the target statement (whitespace-normalized block match)."""
    if contains_cheat_keywords(source):
        return False
    if not outcome.success:
        return False
    target = normalize_ws(formal_statement)
    for block in parse_theory(source).blocks:
        if block.kind in ("lemma", "theorem") and extract_statement(block) == target:
            return True
    return False
