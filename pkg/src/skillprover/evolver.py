"""Skill growth: directional transformation and request solving.

A transform step draws the least-evolved skill, shows the model related
pending problems and open requests, and asks for a new skill along one of
four fixed directions. A solve step draws the least-solved open request
and asks for a proof outright. Either way the produced theory must verify
and survive near-duplicate rejection before it enters the library.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from random import Random

from .errors import FormatError, TransportError
from .gateway import (
    LlmGateway,
    PromptLibrary,
    format_numbered_section,
    format_skill_section,
)
from .library import (
    ORIGIN_REQUEST_SOLVER,
    PROBLEM_PENDING,
    SkillLibrary,
)
from .theory import extract_statement, extract_theory_block, parse_theory
from .verifier import RepairPolicy, repair_and_verify, validity_check


@dataclass(frozen=True)
class EvolveDirection:
    id: str
    core_description: str


DIRECTIONS = (
    EvolveDirection(
        "extend_dimensions",
        "If the problem is defined in a specific number of dimensions, "
        "consider if it holds in more or fewer dimensions.",
    ),
    EvolveDirection(
        "identify_key_concepts",
        "Determine the essential ideas, methods, or theorems that are "
        "crucial to solving the initial problem.",
    ),
    EvolveDirection(
        "parameterize",
        "If the problem involves specific numbers, generalize it by "
        "replacing these with variables.",
    ),
    EvolveDirection(
        "scale_complexity",
        "Try both simpler and more complicated versions of the problem "
        "to see how the approach adapts.",
    ),
)


def sample_direction(
    rng: Random, weights: tuple[float, ...] | None = None
) -> EvolveDirection:
    if weights is None:
        return rng.choice(DIRECTIONS)
    if len(weights) != len(DIRECTIONS):
        raise ValueError("need one weight per direction")
    return rng.choices(DIRECTIONS, weights=weights, k=1)[0]


@dataclass
class EvolverConfig:
    n_d: int = 4
    solver_refs: int = 3
    request_refs: int = 2
    direction_weights: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        if self.n_d <= 0 or self.solver_refs <= 0:
            raise ValueError("reference counts must be positive")


@dataclass
class EvolveStepResult:
    kind: str  # transform | solve_request
    inserted_skill_id: str | None = None
    source_skill_id: str | None = None
    request_id: str | None = None
    direction: str | None = None
    rejected: str | None = None  # empty | transport | format | unverified | duplicate
    detail: dict = field(default_factory=dict)

    @property
    def inserted(self) -> bool:
        return self.inserted_skill_id is not None


class Evolver:
    def __init__(
        self,
        library: SkillLibrary,
        gateway: LlmGateway,
        verifier,
        prompts: PromptLibrary,
        policy: RepairPolicy | None = None,
        config: EvolverConfig | None = None,
        rng: Random | None = None,
    ):
        self.library = library
        self.gateway = gateway
        self.verifier = verifier
        self.prompts = prompts
        self.policy = policy or RepairPolicy()
        self.config = config or EvolverConfig()
        self.rng = rng or Random()

    # ── directional transformer ──────────────────────────────────────

    def run_transform_step(self, round_index: int = 0) -> EvolveStepResult:
        result = EvolveStepResult(kind="transform")
        if len(self.library.lemmas) == 0:
            result.rejected = "empty"
            return result
        skill = self.library.draw_least_evolved(self.rng)
        result.source_skill_id = skill.id
        direction = sample_direction(self.rng, self.config.direction_weights)
        result.direction = direction.id

        try:
            query = self.gateway.embed(skill.code)
            problems = self._pending_problem_statements(query, self.config.n_d)
            requests = self._request_statements(query, self.config.request_refs)
            messages = self.prompts.render(
                f"dir_{direction.id}",
                {
                    "problems": format_numbered_section("Problem", problems),
                    "requests": format_numbered_section("Request", requests),
                    "skill_code": skill.code,
                },
            )
            response = self.gateway.complete(messages)
        except TransportError:
            result.rejected = "transport"
            return result

        return self._verify_and_insert(
            result,
            response,
            origin=f"dir_{direction.id}",
            parent_id=skill.id,
            round_index=round_index,
        )

    def _pending_problem_statements(self, query, count: int) -> list[str]:
        hits = self.library.query_top_k("problem", query, max(count, len(self.library.problems) or 1))
        statements = []
        for hit in hits:
            record = self.library.problems.get(hit.record_id)
            if record.status == PROBLEM_PENDING:
                statements.append(record.formal_statement)
                if len(statements) >= count:
                    break
        return statements

    def _request_statements(self, query, count: int) -> list[str]:
        if count <= 0 or len(self.library.requests) == 0:
            return []
        hits = self.library.query_top_k("request", query, count)
        return [self.library.requests.get(h.record_id).statement for h in hits]

    # ── request solver ───────────────────────────────────────────────

    def run_solve_request_step(self, round_index: int = 0) -> EvolveStepResult:
        result = EvolveStepResult(kind="solve_request")
        open_requests = [
            r for r in self.library.requests.records if r.status == "open"
        ]
        if not open_requests:
            result.rejected = "empty"
            return result
        request = self.library.draw_least_solved_request(self.rng)
        result.request_id = request.id

        try:
            refs = self.library.query_top_k(
                "lemma", self.gateway.embed(request.statement), self.config.solver_refs
            ) if len(self.library.lemmas) else []
            ref_codes = [self.library.lemmas.get(h.record_id).code for h in refs]
            messages = self.prompts.render(
                "request_solver",
                {
                    "skills": format_skill_section(ref_codes),
                    "statement": request.statement,
                },
            )
            response = self.gateway.complete(messages)
        except TransportError:
            result.rejected = "transport"
            return result

        result = self._verify_and_insert(
            result,
            response,
            origin=ORIGIN_REQUEST_SOLVER,
            parent_id=None,
            round_index=round_index,
            target_statement=request.statement,
        )
        if result.inserted:
            self.library.mark_request_solved(request.id)
        return result

    # ── shared tail: verify, dedup, insert ───────────────────────────

    def _verify_and_insert(
        self,
        result: EvolveStepResult,
        response: str,
        origin: str,
        parent_id: str | None,
        round_index: int,
        target_statement: str | None = None,
    ) -> EvolveStepResult:
        try:
            source = extract_theory_block(response)
        except FormatError:
            result.rejected = "format"
            return result
        try:
            outcome = repair_and_verify(source, self.policy, self.verifier)
        except TransportError:
            result.rejected = "transport"
            return result
        final = outcome.repaired_source or source
        if target_statement is not None:
            # the solved theory must actually prove the requested statement
            if not validity_check(final, outcome, target_statement):
                result.rejected = "unverified"
                return result
        elif not outcome.success or _has_cheat(final):
            result.rejected = "unverified"
            return result

        statement = _first_statement(final)
        if statement is None:
            result.rejected = "format"
            return result
        try:
            embedding = self.gateway.embed(final)
        except TransportError:
            result.rejected = "transport"
            return result
        inserted = self.library.insert_skill(
            statement=statement,
            code=final,
            embedding=embedding,
            origin=origin,
            parent_id=parent_id,
            created_round=round_index,
        )
        if not inserted.accepted:
            result.rejected = "duplicate"
            result.detail = {
                "max_similarity": inserted.max_similarity,
                "nearest_id": inserted.nearest_id,
            }
            return result
        result.inserted_skill_id = inserted.skill_id
        return result


def _has_cheat(source: str) -> bool:
    from .theory import contains_cheat_keywords

    return contains_cheat_keywords(source)


def _first_statement(source: str) -> str | None:
    for block in parse_theory(source).blocks:
        if block.kind in ("lemma", "theorem"):
            return extract_statement(block)
    return None
