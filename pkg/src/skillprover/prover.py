"""The proving pipeline: informal proof selection, decomposition,
retrieval-augmented formalization, verification, and harvesting.

Each attempt walks one problem through the three model calls, repairs and
verifies the produced theory, then farms the result: auxiliary blocks
that verify standalone become new skills, failed lemma statements become
requests for the evolver to solve later.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from random import Random

from .errors import FormatError, ParseError, TransportError
from .gateway import LlmGateway, PromptLibrary, format_skill_section
from .library import (
    ORIGIN_PROVER,
    ProblemRecord,
    SkillLibrary,
    SkillRecord,
)
from .theory import (
    Decomposition,
    contains_cheat_keywords,
    extract_statement,
    extract_theory_block,
    normalize_ws,
    parse_decomposer_output,
    parse_theory,
)
from .verifier import RepairPolicy, VerifierOutcome, repair_and_verify, validity_check

USAGE_DIRECT = "direct_use"
USAGE_IMITATION = "imitation"
USAGE_UNUSED = "unused"


@dataclass
class ProverConfig:
    n_f: int = 6
    decomposer_shots: int = 3
    formalizer_shots: int = 2
    informal_source: str = "either"  # human | model | either
    direct_use_threshold: float = 0.85
    imitation_threshold: float = 0.5

    def __post_init__(self):
        if self.n_f <= 0:
            raise ValueError("n_f must be positive")
        if self.informal_source not in ("human", "model", "either"):
            raise ValueError(f"unknown informal_source {self.informal_source!r}")


@dataclass
class AttemptResult:
    problem_id: str
    round: int
    valid: bool = False
    error: str | None = None
    decomposition: Decomposition | None = None
    retrieved_skill_ids: list[str] = field(default_factory=list)
    theory_source: str = ""
    outcome: VerifierOutcome | None = None
    harvested_skill_ids: list[str] = field(default_factory=list)
    emitted_request_ids: list[str] = field(default_factory=list)
    usage_classification: dict[str, str] = field(default_factory=dict)

    @property
    def errored(self) -> bool:
        """Transport/infrastructure failure: does not consume the budget."""
        return self.error == "transport"


def classify_skill_usage(
    theory_source: str,
    retrieved_skills: list[SkillRecord],
    direct_threshold: float = 0.85,
    imitation_threshold: float = 0.5,
) -> dict[str, str]:
    """How each retrieved skill shows up in the generated theory.

    direct_use: some block is a near-copy of the skill's block code;
    imitation: some block resembles it without copying; unused otherwise.
    """
    from .similarity import similarity_ratio

    doc = parse_theory(theory_source)
    block_texts = [
        b.text.strip() for b in doc.blocks if b.kind in ("lemma", "theorem")
    ]
    classification: dict[str, str] = {}
    for skill in retrieved_skills:
        skill_block = _primary_block_text(skill.code)
        best = 0.0
        for text in block_texts:
            best = max(best, similarity_ratio(text, skill_block))
        if best >= direct_threshold:
            classification[skill.id] = USAGE_DIRECT
        elif best >= imitation_threshold:
            classification[skill.id] = USAGE_IMITATION
        else:
            classification[skill.id] = USAGE_UNUSED
    return classification


def _primary_block_text(code: str) -> str:
    doc = parse_theory(code)
    for block in doc.blocks:
        if block.kind in ("lemma", "theorem", "definition", "fun"):
            return block.text.strip()
    return code.strip()


class Prover:
    def __init__(
        self,
        library: SkillLibrary,
        gateway: LlmGateway,
        verifier,
        prompts: PromptLibrary,
        policy: RepairPolicy | None = None,
        config: ProverConfig | None = None,
        rng: Random | None = None,
    ):
        self.library = library
        self.gateway = gateway
        self.verifier = verifier
        self.prompts = prompts
        self.policy = policy or RepairPolicy()
        self.config = config or ProverConfig()
        self.rng = rng or Random()

    # ── pipeline stages ──────────────────────────────────────────────

    def select_informal_proof(self, problem: ProblemRecord) -> str:
        """Pick the informal proof to decompose. Convention: the first
        entry of informal_proofs is the human-written proof when present;
        later entries are pre-generated model proofs."""
        proofs = problem.informal_proofs
        if not proofs:
            raise ValueError(f"problem {problem.id} has no informal proofs")
        if self.config.informal_source == "human":
            return proofs[0]
        return self.rng.choice(proofs)

    def decompose(
        self, problem: ProblemRecord, informal_proof: str
    ) -> tuple[Decomposition, list[str]]:
        """Refine the informal proof into steps and store every proposed
        sub-goal lemma as a request."""
        messages = self.prompts.render(
            "decomposer",
            {
                "informal_statement": problem.informal_statement,
                "informal_proof": informal_proof,
                "formal_statement": problem.formal_statement,
            },
        )
        response = self.gateway.complete(messages)
        decomposition = parse_decomposer_output(response)
        request_ids = []
        for req in decomposition.requests:
            record = self.library.insert_request(
                thought=req.thought,
                statement=req.statement,
                embedding=self.gateway.embed(req.statement),
                source_problem=problem.id,
            )
            request_ids.append(record.id)
        return decomposition, request_ids

    def retrieve_skills(
        self,
        decomposition: Decomposition | None,
        formal_statement: str,
        n_f: int | None = None,
    ) -> list[SkillRecord]:
        """Query the lemma store once per request statement plus once for
        the formal statement; merge round-robin by rank, dedup, cap at n_f."""
        limit = self.config.n_f if n_f is None else n_f
        queries = []
        if decomposition is not None:
            queries.extend(req.statement for req in decomposition.requests)
        queries.append(formal_statement)

        per_query = [
            self.library.query_top_k("lemma", self.gateway.embed(q), limit)
            for q in queries
        ]
        merged: list[str] = []
        seen: set[str] = set()
        for rank in range(max((len(r) for r in per_query), default=0)):
            for results in per_query:
                if rank < len(results):
                    record_id = results[rank].record_id
                    if record_id not in seen:
                        seen.add(record_id)
                        merged.append(record_id)
                        if len(merged) >= limit:
                            break
            if len(merged) >= limit:
                break
        return [self.library.lemmas.get(record_id) for record_id in merged]

    def formalize(
        self,
        problem: ProblemRecord,
        decomposition: Decomposition,
        skills: list[SkillRecord],
    ) -> str:
        messages = self.prompts.render(
            "formalizer",
            {
                "skills": format_skill_section([s.code for s in skills]),
                "informal_statement": problem.informal_statement,
                "informal_proof": decomposition.steps_text(),
                "formal_statement": problem.formal_statement,
            },
        )
        response = self.gateway.complete(messages)
        return extract_theory_block(response)

    # ── full attempt ─────────────────────────────────────────────────

    def run_attempt(self, problem: ProblemRecord, round_index: int = 0) -> AttemptResult:
        result = AttemptResult(problem_id=problem.id, round=round_index)
        try:
            informal_proof = self.select_informal_proof(problem)
        except ValueError:
            result.error = "no_informal_proof"
            return result
        try:
            decomposition, request_ids = self.decompose(problem, informal_proof)
            result.decomposition = decomposition
            result.emitted_request_ids.extend(request_ids)
            skills = self.retrieve_skills(decomposition, problem.formal_statement)
            result.retrieved_skill_ids = [s.id for s in skills]
            source = self.formalize(problem, decomposition, skills)
            result.theory_source = source
        except ParseError:
            result.error = "parse"
            return result
        except FormatError:
            result.error = "format"
            return result
        except TransportError:
            result.error = "transport"
            return result

        try:
            outcome = repair_and_verify(source, self.policy, self.verifier)
        except TransportError:
            result.error = "transport"
            return result
        final = outcome.repaired_source or source
        result.theory_source = final
        result.outcome = outcome
        result.valid = validity_check(final, outcome, problem.formal_statement)

        harvested, emitted = self._harvest(final, problem, round_index)
        result.harvested_skill_ids = harvested
        result.emitted_request_ids.extend(emitted)
        result.usage_classification = classify_skill_usage(
            final,
            skills,
            self.config.direct_use_threshold,
            self.config.imitation_threshold,
        )
        return result

    def _harvest(
        self, source: str, problem: ProblemRecord, round_index: int
    ) -> tuple[list[str], list[str]]:
        """Re-verify every non-target block standalone; verified blocks
        become skills, failed lemma statements become requests."""
        doc = parse_theory(source)
        target = normalize_ws(problem.formal_statement)
        harvested: list[str] = []
        emitted: list[str] = []
        for block in doc.blocks:
            if block.kind not in ("lemma", "theorem", "definition", "fun"):
                continue
            is_provable = block.kind in ("lemma", "theorem")
            statement = (
                extract_statement(block) if is_provable else normalize_ws(block.statement)
            )
            if is_provable and statement == target:
                continue
            standalone = _standalone_theory(doc.imports, block.text)
            if contains_cheat_keywords(block.text):
                verified = False
            else:
                try:
                    verified = self.verifier.verify(standalone).success
                except TransportError:
                    verified = False
            if verified:
                inserted = self.library.insert_skill(
                    statement=statement,
                    code=standalone,
                    embedding=self.gateway.embed(standalone),
                    origin=ORIGIN_PROVER,
                    created_round=round_index,
                )
                if inserted.accepted:
                    harvested.append(inserted.skill_id)
            elif is_provable:
                record = self.library.insert_request(
                    thought="",
                    statement=statement,
                    embedding=self.gateway.embed(statement),
                    source_problem=problem.id,
                )
                emitted.append(record.id)
        return harvested, emitted


def _standalone_theory(imports: list[str], block_text: str) -> str:
    from .theory import assemble_theory

    return assemble_theory(imports or ["Complex_Main"], [block_text], "Scratch")
