"""Theorem-proving orchestration with a growing library of verified lemmas.

The package is organized around one shared service, the skill library,
bridging two pipelines: the prover (decompose, retrieve, formalize,
verify, harvest) and the evolver (directional skill transformation and
request solving). Everything model- and verifier-facing is pluggable and
has a deterministic offline double, so whole runs replay bit-exactly.
"""

from .errors import (
    CheckpointError,
    CorruptStoreError,
    DimensionMismatchError,
    EmptyStoreError,
    FormatError,
    ParseError,
    ProtocolError,
    RateLimitError,
    ReplayMissError,
    SkillProverError,
    TemplateError,
    TransportError,
    UnknownRecordError,
)
from .evolver import DIRECTIONS, EvolveDirection, Evolver, EvolverConfig, sample_direction
from .gateway import (
    Cassette,
    HashEmbedder,
    HttpChatBackend,
    HttpEmbedder,
    LlmGateway,
    PromptLibrary,
    format_skill_section,
)
from .library import (
    ALL_ORIGINS,
    DIRECTIONAL_ORIGINS,
    ORIGIN_PROVER,
    ORIGIN_REQUEST_SOLVER,
    InsertOutcome,
    ProblemRecord,
    RequestRecord,
    SkillLibrary,
    SkillRecord,
    StoreQueryResult,
    VectorStore,
)
from .orchestrator import (
    IngestReport,
    Orchestrator,
    OrchestratorConfig,
    build_orchestrator,
    derive_seed,
)
from .prover import AttemptResult, Prover, ProverConfig, classify_skill_usage
from .runlog import RunLog, read_log
from .similarity import similarity_ratio
from .stats import RunStats, compute_stats
from .theory import (
    Decomposition,
    ProofBlock,
    TheoryDocument,
    assemble_theory,
    contains_cheat_keywords,
    extract_statement,
    extract_theory_block,
    normalize_ws,
    parse_decomposer_output,
    parse_theory,
)
from .verifier import (
    DEFAULT_HEURISTICS,
    MockVerifier,
    RepairPolicy,
    TcpVerifier,
    VerifierOutcome,
    VerifierPool,
    extract_proof_steps,
    repair_and_verify,
    validity_check,
)

__version__ = "0.1.0"
