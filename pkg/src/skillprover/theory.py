"""Lexical parsing and assembly of Isabelle-style theory sources.

Parsing here is deliberately heuristic: top-level keyword splitting with
quote- and comment-aware scanning, not a real Isar grammar. That is
enough for machine-generated theories, where the interesting structure is
"which lemma/theorem blocks exist and where does each proof start".
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import FormatError, ParseError

BLOCK_KEYWORDS = ("lemma", "theorem", "definition", "fun")

# Tokens that open the proof region of a lemma/theorem block. `sorry` and
# `oops` count: they abandon the proof, so everything before them is still
# the statement.
PROOF_OPENERS = frozenset(
    {"proof", "by", "apply", "using", "unfolding", "sledgehammer", "sorry", "oops"}
)

CHEAT_KEYWORDS = frozenset({"sorry", "oops"})

_IDENTIFIER = re.compile(r"[A-Za-z_][A-Za-z0-9_']*")


def active_mask(source: str) -> list[bool]:
    """True for characters outside comments and string literals.

    Comments `(* ... *)` nest; strings are plain double-quoted regions
    (backslash sequences such as \\<le> are not quote escapes).
    """
    mask = [True] * len(source)
    i, n = 0, len(source)
    depth = 0
    in_string = False
    while i < n:
        if depth > 0:
            mask[i] = False
            if source.startswith("(*", i):
                mask[i + 1] = False
                depth += 1
                i += 2
            elif source.startswith("*)", i):
                mask[i + 1] = False
                depth -= 1
                i += 2
            else:
                i += 1
        elif in_string:
            mask[i] = False
            if source[i] == '"':
                in_string = False
            i += 1
        elif source.startswith("(*", i):
            mask[i] = mask[i + 1] = False
            depth = 1
            i += 2
        elif source[i] == '"':
            mask[i] = False
            in_string = True
            i += 1
        else:
            i += 1
    return mask


def iter_tokens(source: str, mask: list[bool] | None = None):
    """Yield (token, start, end) for identifier tokens outside quotes/comments."""
    if mask is None:
        mask = active_mask(source)
    for match in _IDENTIFIER.finditer(source):
        if all(mask[i] for i in range(match.start(), match.end())):
            yield match.group(), match.start(), match.end()


def contains_cheat_keywords(source: str) -> bool:
    """True iff `sorry` or `oops` occurs as a standalone token.

    Occurrences inside comments, string literals, or longer identifiers
    (e.g. `sorry_free`) do not count.
    """
    return any(tok in CHEAT_KEYWORDS for tok, _, _ in iter_tokens(source))


def normalize_ws(text: str) -> str:
    """Collapse whitespace runs to single spaces; used before comparing
    or storing statements."""
    return " ".join(text.split())


@dataclass
class ProofBlock:
    kind: str
    name: str | None
    statement: str
    proof_body: str
    span: tuple[int, int]

    @property
    def text(self) -> str:
        return self.statement + self.proof_body


@dataclass
class TheoryDocument:
    theory_name: str
    imports: list[str]
    blocks: list[ProofBlock]
    raw: str

    def block_names(self) -> list[str | None]:
        return [b.name for b in self.blocks]


@dataclass
class DecomposedRequest:
    thought: str
    statement: str


@dataclass
class Decomposition:
    steps: list[str]
    requests: list[DecomposedRequest] = field(default_factory=list)

    def steps_text(self) -> str:
        return "\n".join(
            f"Step {i}: {step}" for i, step in enumerate(self.steps, start=1)
        )

    def to_text(self) -> str:
        lines = ["Structure proof:", self.steps_text()]
        if self.requests:
            lines.append("Required skills:")
            for i, req in enumerate(self.requests, start=1):
                lines.append(f"Thoughts {i}: {req.thought}")
                lines.append(f"Code {i}:")
                lines.append(req.statement)
        return "\n".join(lines)


def parse_theory(source: str) -> TheoryDocument:
    """Split a theory source into header, imports, and top-level blocks.

    Sources without a `theory ... begin` header get an empty name and
    import list; content that precedes the first block keyword becomes a
    block of kind `other`.
    """
    mask = active_mask(source)
    tokens = list(iter_tokens(source, mask))

    theory_name = ""
    imports: list[str] = []
    body_start, body_end = 0, len(source)

    idx = 0
    if tokens and tokens[0][0] == "theory":
        idx = 1
        if idx < len(tokens):
            theory_name = tokens[idx][0]
            idx += 1
        if idx < len(tokens) and tokens[idx][0] == "imports":
            imports_from = tokens[idx][2]
            idx += 1
            while idx < len(tokens) and tokens[idx][0] != "begin":
                idx += 1
            imports_to = tokens[idx][1] if idx < len(tokens) else len(source)
            imports = source[imports_from:imports_to].split()
        if idx < len(tokens) and tokens[idx][0] == "begin":
            body_start = tokens[idx][2]
            idx += 1
        # the final `end` closes the theory; anything after it is ignored
        for tok, start, _ in reversed(tokens):
            if tok == "end":
                body_end = start
                break

    body_tokens = [t for t in tokens if body_start <= t[1] < body_end]
    starts = [t for t in body_tokens if t[0] in BLOCK_KEYWORDS]

    blocks: list[ProofBlock] = []
    lead_start = body_start
    first_kw = starts[0][1] if starts else body_end
    lead = source[lead_start:first_kw]
    if lead.strip():
        blocks.append(
            ProofBlock(
                kind="other",
                name=None,
                statement=lead,
                proof_body="",
                span=(lead_start, first_kw),
            )
        )

    for pos, (keyword, kw_start, kw_end) in enumerate(starts):
        block_end = starts[pos + 1][1] if pos + 1 < len(starts) else body_end
        blocks.append(
            _build_block(source, body_tokens, keyword, kw_start, kw_end, block_end)
        )

    return TheoryDocument(
        theory_name=theory_name, imports=imports, blocks=blocks, raw=source
    )


def _build_block(
    source: str,
    tokens: list[tuple[str, int, int]],
    keyword: str,
    kw_start: int,
    kw_end: int,
    block_end: int,
) -> ProofBlock:
    inner = [t for t in tokens if kw_end <= t[1] < block_end]

    name = None
    if inner:
        candidate, cand_start, cand_end = inner[0]
        if _followed_by_colon(source, cand_end, block_end):
            name = candidate

    proof_start = block_end
    if keyword in ("lemma", "theorem"):
        for tok, start, _ in inner:
            if tok in PROOF_OPENERS:
                proof_start = start
                break

    return ProofBlock(
        kind=keyword,
        name=name,
        statement=source[kw_start:proof_start],
        proof_body=source[proof_start:block_end],
        span=(kw_start, block_end),
    )


def _followed_by_colon(source: str, pos: int, limit: int) -> bool:
    """True when the next significant character (skipping whitespace and one
    attribute bracket group) is a colon — i.e. the token was a block name."""
    i = pos
    while i < limit and source[i].isspace():
        i += 1
    if i < limit and source[i] == "[":
        depth = 1
        i += 1
        while i < limit and depth:
            if source[i] == "[":
                depth += 1
            elif source[i] == "]":
                depth -= 1
            i += 1
        while i < limit and source[i].isspace():
            i += 1
    return i < limit and source[i] == ":"


def extract_statement(block: ProofBlock) -> str:
    """Whitespace-normalized statement of a lemma/theorem block."""
    if block.kind not in ("lemma", "theorem"):
        raise ValueError(f"cannot extract a statement from a {block.kind!r} block")
    return normalize_ws(block.statement)


_STEP_LINE = re.compile(r"^Step\s+\d+\s*:\s*(.*)$")
_THOUGHTS_LINE = re.compile(r"^Thoughts\s+\d+\s*:\s*(.*)$")
_CODE_LINE = re.compile(r"^Code\s+\d+\s*:\s*(.*)$")
_FENCE = re.compile(r"^\s*```[a-zA-Z]*\s*$")


def parse_decomposer_output(text: str) -> Decomposition:
    """Parse the decomposer's two sections into steps and skill requests.

    The section headers ("Structure proof:", "Required skills:") are the
    contract with the prompt template. A missing skills section is fine;
    a missing or empty proof section is a ParseError.
    """
    if "Structure proof:" not in text:
        raise ParseError('decomposer output lacks a "Structure proof:" section')
    after = text.split("Structure proof:", 1)[1]
    if "Required skills:" in after:
        steps_part, skills_part = after.split("Required skills:", 1)
    else:
        steps_part, skills_part = after, ""

    steps: list[str] = []
    for line in steps_part.splitlines():
        match = _STEP_LINE.match(line.strip())
        if match:
            steps.append(match.group(1).strip())
        elif steps and line.strip() and not line.strip().startswith("Step"):
            steps[-1] = steps[-1] + " " + line.strip()
    if not steps:
        raise ParseError("decomposer output contains no Step lines")

    requests: list[DecomposedRequest] = []
    thought_lines: list[str] = []
    code_lines: list[str] = []
    mode = None  # None | "thought" | "code"

    def flush() -> None:
        nonlocal thought_lines, code_lines
        code = "\n".join(
            line for line in code_lines if not _FENCE.match(line)
        ).strip()
        thought = " ".join(l.strip() for l in thought_lines if l.strip())
        first = code.split(None, 1)
        if first and first[0] in ("lemma", "theorem"):
            requests.append(DecomposedRequest(thought=thought, statement=code))
        thought_lines, code_lines = [], []

    for line in skills_part.splitlines():
        stripped = line.strip()
        thought_match = _THOUGHTS_LINE.match(stripped)
        code_match = _CODE_LINE.match(stripped)
        if thought_match:
            if mode == "code":
                flush()
            mode = "thought"
            thought_lines.append(thought_match.group(1))
        elif code_match:
            mode = "code"
            if code_match.group(1).strip():
                code_lines.append(code_match.group(1))
        elif mode == "thought":
            thought_lines.append(line)
        elif mode == "code":
            code_lines.append(line)
    if mode is not None:
        flush()

    return Decomposition(steps=steps, requests=requests)


def assemble_theory(imports: list[str], blocks: list[str], name: str) -> str:
    """Emit a complete theory file; inverse of parse_theory on its output."""
    header = f"theory {name or 'Scratch'}"
    lines = [header]
    if imports:
        lines.append("  imports " + " ".join(imports))
    lines.append("begin")
    for block in blocks:
        lines.append("")
        lines.append(block.strip("\n"))
    lines.append("")
    lines.append("end")
    return "\n".join(lines) + "\n"


def extract_theory_block(response: str) -> str:
    """First complete theory in a model response: from the first `theory`
    token to the final `end`. Prose around the theory is discarded."""
    start_match = re.search(r"\btheory\b", response)
    if not start_match:
        raise FormatError("response contains no theory block")
    end_match = None
    for end_match in re.finditer(r"\bend\b", response):
        pass
    if end_match is None or end_match.start() < start_match.start():
        raise FormatError("response contains a theory header but no end")
    return response[start_match.start() : end_match.end()]
