"""Run statistics: solve curves, skill origin and usage distributions."""

from __future__ import annotations

from dataclasses import dataclass, field

from .library import DIRECTIONAL_ORIGINS, ORIGIN_PROVER, ORIGIN_REQUEST_SOLVER, SkillLibrary


@dataclass
class RunStats:
    total_problems: int = 0
    solved: int = 0
    exhausted: int = 0
    pending: int = 0
    attempts_total: int = 0
    total_skills: int = 0
    solve_curve: list[int] = field(default_factory=list)
    per_round_solved: dict[int, int] = field(default_factory=dict)
    skill_counts: dict[str, int] = field(default_factory=dict)
    origin_distribution: dict[str, float] = field(default_factory=dict)
    origin_groups: dict[str, float] = field(default_factory=dict)
    usage_distribution: dict[str, float] = field(default_factory=dict)
    skill_curve: list[tuple[int, int]] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "total_problems": self.total_problems,
            "solved": self.solved,
            "exhausted": self.exhausted,
            "pending": self.pending,
            "attempts_total": self.attempts_total,
            "total_skills": self.total_skills,
            "solve_curve": self.solve_curve,
            "per_round_solved": {str(k): v for k, v in self.per_round_solved.items()},
            "skill_counts": self.skill_counts,
            "origin_distribution": self.origin_distribution,
            "origin_groups": self.origin_groups,
            "usage_distribution": self.usage_distribution,
            "skill_curve": [list(p) for p in self.skill_curve],
        }

    def curve_table(self) -> str:
        """Plot-ready two-column table: attempt index, cumulative solved."""
        lines = ["attempt\tsolved"]
        for i, value in enumerate(self.solve_curve, start=1):
            lines.append(f"{i}\t{value}")
        return "\n".join(lines)


def origin_fractions(library: SkillLibrary) -> tuple[dict[str, float], dict[str, float]]:
    counts: dict[str, int] = {}
    for record in library.lemmas.records:
        counts[record.origin] = counts.get(record.origin, 0) + 1
    total = sum(counts.values())
    if total == 0:
        return {}, {}
    per_origin = {origin: count / total for origin, count in sorted(counts.items())}
    directional = sum(counts.get(d, 0) for d in DIRECTIONAL_ORIGINS)
    groups = {
        "prover": counts.get(ORIGIN_PROVER, 0) / total,
        "request_solver": counts.get(ORIGIN_REQUEST_SOLVER, 0) / total,
        "directional": directional / total,
    }
    return per_origin, groups


def compute_stats(records: list[dict], library: SkillLibrary) -> RunStats:
    """Aggregate attempt logs and the library into run statistics.

    The solve curve is indexed by per-problem attempt number: entry i is
    the number of problems whose first valid attempt happened within
    their first i+1 budget-consuming attempts.
    """
    stats = RunStats()

    first_valid: dict[str, int] = {}
    max_attempt = 0
    usage_of_solve: dict[str, dict] = {}
    skill_curve: list[tuple[int, int]] = []
    cumulative_skills = 0

    for record in records:
        event = record.get("event")
        if event == "attempt":
            attempt_index = record.get("attempt_index")
            if attempt_index is not None:
                stats.attempts_total += 1
                max_attempt = max(max_attempt, attempt_index)
            problem_id = record["problem_id"]
            if record.get("valid") and problem_id not in first_valid:
                first_valid[problem_id] = attempt_index or 1
                usage_of_solve[problem_id] = record.get("usage", {})
                round_index = record.get("round", 0)
                stats.per_round_solved[round_index] = (
                    stats.per_round_solved.get(round_index, 0) + 1
                )
            cumulative_skills += len(record.get("harvested", []))
            skill_curve.append((record["seq"], cumulative_skills))
        elif event == "evolve":
            if record.get("inserted"):
                cumulative_skills += 1
            skill_curve.append((record["seq"], cumulative_skills))

    curve = [0] * max_attempt
    for attempt_index in first_valid.values():
        for i in range(attempt_index - 1, max_attempt):
            curve[i] += 1
    stats.solve_curve = curve
    stats.skill_curve = skill_curve

    solved_usages = list(usage_of_solve.values())
    if solved_usages:
        direct = sum(
            1 for usage in solved_usages if "direct_use" in usage.values()
        )
        imitation = sum(
            1
            for usage in solved_usages
            if "direct_use" not in usage.values() and "imitation" in usage.values()
        )
        none = len(solved_usages) - direct - imitation
        total = len(solved_usages)
        stats.usage_distribution = {
            "direct_use": direct / total,
            "imitation": imitation / total,
            "none": none / total,
        }

    stats.total_problems = len(library.problems)
    for problem in library.problems.records:
        if problem.status == "solved":
            stats.solved += 1
        elif problem.status == "exhausted":
            stats.exhausted += 1
        else:
            stats.pending += 1

    stats.total_skills = len(library.lemmas)
    counts: dict[str, int] = {}
    for skill in library.lemmas.records:
        counts[skill.origin] = counts.get(skill.origin, 0) + 1
    stats.skill_counts = dict(sorted(counts.items()))
    stats.origin_distribution, stats.origin_groups = origin_fractions(library)
    return stats
