"""Skill library: dedup, retrieval, selection, genealogy, persistence."""

from __future__ import annotations

import json
import random
import threading

import numpy as np
import pytest

from skillprover import (
    CorruptStoreError,
    DimensionMismatchError,
    EmptyStoreError,
    HashEmbedder,
    SkillLibrary,
    UnknownRecordError,
)
from skillprover.library import (
    ORIGIN_PARAMETERIZE,
    ORIGIN_PROVER,
    ORIGIN_REQUEST_SOLVER,
    ORIGIN_SCALE_COMPLEXITY,
    PROBLEM_SOLVED,
    REQUEST_SOLVED,
)
from skillprover.similarity import similarity_ratio


def brute_force_top_k(records, query, k):
    """Independent oracle: per-record cosine, sorted by (sim desc, order)."""
    query = np.asarray(query, dtype=np.float64)
    qnorm = float(np.linalg.norm(query))
    scored = []
    for index, record in enumerate(records):
        vec = np.asarray(record.embedding, dtype=np.float64)
        denom = float(np.linalg.norm(vec)) * qnorm
        sim = float(np.dot(vec, query) / denom) if denom > 0 else 0.0
        scored.append((sim, index, record.id))
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [record_id for _, _, record_id in scored[:k]]


def add_skill(lib, code, origin=ORIGIN_PROVER, parent=None, statement=None):
    emb = HashEmbedder(lib.dim).embed(code)
    return lib.insert_skill(
        statement=statement or code.splitlines()[0],
        code=code,
        embedding=emb,
        origin=origin,
        parent_id=parent,
    )


# ── insert / dedup ───────────────────────────────────────────────────


def test_first_insert_accepted(library):
    outcome = add_skill(library, "lemma one: shows True by auto")
    assert outcome.accepted and outcome.skill_id == "skill-000001"


def test_exact_duplicate_rejected_with_similarity_one(library):
    code = "lemma one: shows True by auto"
    add_skill(library, code)
    outcome = add_skill(library, code)
    assert not outcome.accepted
    assert outcome.max_similarity == 1.0
    assert outcome.nearest_id == "skill-000001"
    assert len(library.lemmas) == 1


def test_dissimilar_code_accepted(library):
    # embed the spec'd 0.75 pair in otherwise-distinct code
    first = "abcd" + " qqqq" * 8
    second = "bcde" + " zzzz" * 8
    assert similarity_ratio(first, second) < 0.85
    add_skill(library, first)
    outcome = add_skill(library, second)
    assert outcome.accepted


def test_near_duplicate_rejected(library):
    code = "lemma shared_core: fixes x :: real shows \"x = x\" by auto"
    add_skill(library, code)
    outcome = add_skill(library, code + " ")
    assert not outcome.accepted
    assert outcome.max_similarity >= 0.85


def test_dedup_soundness_after_randomized_inserts(library):
    rng = random.Random(99)
    alphabet = "abcdefghij ()\"=<>"
    for i in range(120):
        if i % 10 == 0 and library.lemmas.records:
            # re-submit a stored code with a tiny mutation: must be rejected
            victim = rng.choice(library.lemmas.records)
            add_skill(library, victim.code + "x")
        else:
            code = "".join(rng.choice(alphabet) for _ in range(rng.randint(40, 120)))
            add_skill(library, code)
    records = library.lemmas.records
    for i in range(len(records)):
        for j in range(i + 1, len(records)):
            assert similarity_ratio(records[i].code, records[j].code) < 0.85


def test_origin_parent_consistency(library):
    with pytest.raises(ValueError):
        add_skill(library, "lemma a: True", origin=ORIGIN_PARAMETERIZE)  # needs parent
    parent = add_skill(library, "lemma a: shows True by auto")
    with pytest.raises(ValueError):
        add_skill(library, "lemma b: c", origin=ORIGIN_PROVER, parent=parent.skill_id)
    with pytest.raises(UnknownRecordError):
        add_skill(
            library,
            "lemma c: shows False oops",
            origin=ORIGIN_PARAMETERIZE,
            parent="skill-999999",
        )


def test_embedding_validation(library):
    with pytest.raises(DimensionMismatchError):
        library.insert_skill(
            statement="s",
            code="c",
            embedding=np.ones(8),
            origin=ORIGIN_PROVER,
        )
    with pytest.raises(ValueError):
        library.insert_skill(
            statement="s",
            code="c",
            embedding=np.full(32, np.nan),
            origin=ORIGIN_PROVER,
        )


# ── retrieval ────────────────────────────────────────────────────────


def test_query_exact_match_on_orthonormal_basis():
    lib = SkillLibrary(dim=3)
    for i, name in enumerate(["e1", "e2", "e3"]):
        vec = np.zeros(3)
        vec[i] = 1.0
        lib.insert_skill(statement=name, code=name, embedding=vec, origin=ORIGIN_PROVER)
    results = lib.query_top_k("lemma", np.array([0.0, 1.0, 0.0]), k=1)
    assert len(results) == 1
    assert results[0].record_id == "skill-000002"
    assert results[0].similarity == pytest.approx(1.0)
    assert results[0].rank == 1


def test_query_k_larger_than_store():
    lib = SkillLibrary(dim=3)
    lib.insert_skill(statement="a", code="a", embedding=[1, 0, 0], origin=ORIGIN_PROVER)
    lib.insert_skill(statement="b", code="b", embedding=[0, 1, 0], origin=ORIGIN_PROVER)
    results = lib.query_top_k("lemma", [1.0, 0.5, 0.0], k=10)
    assert [r.record_id for r in results] == ["skill-000001", "skill-000002"]
    assert [r.rank for r in results] == [1, 2]


def test_query_empty_store_returns_empty(library):
    assert library.query_top_k("lemma", np.zeros(32), k=3) == []


def test_query_dimension_mismatch(library):
    add_skill(library, "lemma a: shows True by auto")
    with pytest.raises(DimensionMismatchError):
        library.query_top_k("lemma", np.ones(16), k=1)


def test_query_matches_brute_force_oracle():
    rng = np.random.default_rng(4242)
    lib = SkillLibrary(dim=16)
    for i in range(100):
        lib.insert_skill(
            statement=f"s{i}",
            code=f"code {i} " + "x" * i,
            embedding=rng.normal(size=16),
            origin=ORIGIN_PROVER,
        )
    for trial in range(20):
        query = rng.normal(size=16)
        got = [r.record_id for r in lib.query_top_k("lemma", query, k=5)]
        expected = brute_force_top_k(lib.lemmas.records, query, 5)
        assert got == expected, f"trial {trial}"


def test_query_tie_break_by_insertion_order():
    lib = SkillLibrary(dim=2)
    lib.insert_skill(statement="a", code="a", embedding=[1, 0], origin=ORIGIN_PROVER)
    lib.insert_skill(statement="b", code="b", embedding=[2, 0], origin=ORIGIN_PROVER)
    results = lib.query_top_k("lemma", [1.0, 0.0], k=2)
    # both have cosine 1.0; earlier insertion ranks first
    assert [r.record_id for r in results] == ["skill-000001", "skill-000002"]


# ── selection and counters ───────────────────────────────────────────


def test_select_least_evolved_unique_minimum(library):
    a = add_skill(library, "lemma a: shows True by auto").skill_id
    b = add_skill(library, "qqqq zzzz wwww different").skill_id
    library.record_usage(b, "evolved")
    library.record_usage(b, "evolved")
    assert library.select_least_evolved().id == a


def test_select_least_evolved_uniform_ties(library):
    a = add_skill(library, "lemma a: shows True by auto").skill_id
    b = add_skill(library, "qqqq zzzz wwww different").skill_id
    counts = {a: 0, b: 0}
    for _ in range(1000):
        counts[library.select_least_evolved().id] += 1
    assert counts[a] >= 400 and counts[b] >= 400


def test_select_least_evolved_empty_store(library):
    with pytest.raises(EmptyStoreError):
        library.select_least_evolved()


def test_select_least_solved_request(library, embedder):
    only = library.insert_request("t", "lemma r1: shows True", embedder.embed("r1"))
    assert library.select_least_solved_request().id == only.id
    second = library.insert_request("t", "lemma r2: shows True", embedder.embed("r2"))
    for _ in range(3):
        library.record_usage(second.id, "solved")
    assert library.select_least_solved_request().id == only.id


def test_select_skips_solved_requests(library, embedder):
    record = library.insert_request("t", "lemma r: shows True", embedder.embed("r"))
    library.mark_request_solved(record.id)
    assert record.status == REQUEST_SOLVED
    with pytest.raises(EmptyStoreError):
        library.select_least_solved_request()


def test_record_usage_increments(library):
    skill = add_skill(library, "lemma a: shows True by auto").skill_id
    assert library.record_usage(skill, "evolved") == 1
    assert library.record_usage(skill, "evolved") == 2
    with pytest.raises(UnknownRecordError):
        library.record_usage("skill-404404", "evolved")
    with pytest.raises(ValueError):
        library.record_usage(skill, "polished")


def test_concurrent_usage_increments(library):
    skill = add_skill(library, "lemma a: shows True by auto").skill_id
    threads = [
        threading.Thread(target=lambda: library.record_usage(skill, "evolved"))
        for _ in range(16)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert library.lemmas.get(skill).evolve_count == 16


def test_draw_least_evolved_increments_atomically(library):
    a = add_skill(library, "lemma a: shows True by auto").skill_id
    b = add_skill(library, "qqqq zzzz wwww different").skill_id
    drawn = {library.draw_least_evolved().id, library.draw_least_evolved().id}
    # after two atomic draws both records have been selected exactly once
    assert drawn == {a, b}
    assert library.lemmas.get(a).evolve_count == 1
    assert library.lemmas.get(b).evolve_count == 1


# ── genealogy ────────────────────────────────────────────────────────


def test_empty_genealogy(library):
    assert library.export_genealogy() == []


def test_one_root_two_children(library):
    root = add_skill(library, "lemma root: shows True by auto").skill_id
    add_skill(
        library, "child one body ++++ wwww", origin=ORIGIN_PARAMETERIZE, parent=root
    )
    add_skill(
        library, "zzz child two entirely other", origin=ORIGIN_SCALE_COMPLEXITY, parent=root
    )
    forest = library.export_genealogy()
    assert len(forest) == 1
    assert forest[0]["id"] == root
    assert len(forest[0]["children"]) == 2
    assert all(not c["children"] for c in forest[0]["children"])


def test_origin_fixture_fractions(library):
    from skillprover.stats import origin_fractions

    roots = []
    for body in ("lemma alpha: shows True by auto", "wholly unlike qqq zz 123"):
        roots.append(add_skill(library, body).skill_id)
    solver_codes = (
        "lemma beta: fixes n :: nat shows \"n + 0 = n\"",
        "definition gamma where gamma = map fst xs",
        "999 888 777 666 555 444 333 222 111 000",
    )
    for code in solver_codes:
        assert add_skill(library, code, origin=ORIGIN_REQUEST_SOLVER).accepted
    directional_codes = (
        "theory D1 imports Main begin end",
        "%%%% #### @@@@ &&&& **** ^^^^ ~~~~",
        "fun fib where fib 0 = 0 | fib (Suc n) = something",
        "CAPITAL LETTERS ONLY HERE FOR THIS ONE",
        "short-and/unique;string!with?punct.",
    )
    for i, code in enumerate(directional_codes):
        outcome = add_skill(
            library,
            code,
            origin=ORIGIN_PARAMETERIZE if i % 2 else ORIGIN_SCALE_COMPLEXITY,
            parent=roots[i % 2],
        )
        assert outcome.accepted
    _, groups = origin_fractions(library)
    assert groups == {"prover": 0.2, "request_solver": 0.3, "directional": 0.5}


def test_dangling_parent_detected(library, tmp_path):
    root = add_skill(library, "lemma root: shows True by auto").skill_id
    add_skill(library, "child body ++++ wwww", origin=ORIGIN_PARAMETERIZE, parent=root)
    # corrupt the snapshot: point the child at a missing parent
    snap = tmp_path / "lib.snap"
    library.snapshot(snap)
    lines = snap.read_text().splitlines()
    patched = [lines[0]]
    for line in lines[1:]:
        entry = json.loads(line)
        if entry["kind"] == "skill" and entry["record"]["parent_id"] == root:
            entry["record"]["parent_id"] = "skill-000777"
        patched.append(json.dumps(entry))
    snap.write_text("\n".join(patched) + "\n")
    corrupt = SkillLibrary.load(snap)
    with pytest.raises(CorruptStoreError):
        corrupt.export_genealogy()


def test_genealogy_dot_output(library):
    root = add_skill(library, "lemma root: shows True by auto").skill_id
    add_skill(library, "child body ++++ wwww", origin=ORIGIN_PARAMETERIZE, parent=root)
    dot = library.genealogy_dot()
    assert dot.startswith("digraph")
    assert f'"{root}" -> "skill-000002"' in dot


# ── persistence ──────────────────────────────────────────────────────


def test_snapshot_roundtrip_empty(tmp_path, library):
    path = tmp_path / "lib.snap"
    library.snapshot(path)
    loaded = SkillLibrary.load(path)
    assert len(loaded.lemmas) == 0
    assert loaded.dim == library.dim


def test_snapshot_roundtrip_random_records(tmp_path):
    rng = np.random.default_rng(7)
    pyrng = random.Random(7)
    lib = SkillLibrary(dim=8)
    ids = []
    for i in range(300):
        code = f"skill body {i} " + "".join(
            pyrng.choice("abcdefghijklmnop !\"=") for _ in range(pyrng.randint(10, 60))
        )
        outcome = lib.insert_skill(
            statement=f"statement {i}",
            code=code,
            embedding=rng.normal(size=8),
            origin=ORIGIN_PROVER,
        )
        if outcome.accepted:
            ids.append(outcome.skill_id)
    for i in range(100):
        lib.insert_request(
            thought=f"thought {i}",
            statement=f"lemma r{i}: shows True",
            embedding=rng.normal(size=8),
            source_problem=f"p{i % 7}" if i % 2 else None,
        )
    for i in range(50):
        lib.upsert_problem(
            problem_id=f"p{i}",
            informal_statement=f"informal {i}",
            informal_proofs=[f"proof {i}a", f"proof {i}b"],
            formal_statement=f"theorem p{i}: shows True",
            embedding=rng.normal(size=8),
        )
    lib.record_usage(ids[0], "evolved")
    lib.mark_request_solved("request-000003")
    lib.update_problem("p1", status=PROBLEM_SOLVED, add_attempt=True)

    path = tmp_path / "lib.snap"
    lib.snapshot(path)
    loaded = SkillLibrary.load(path)

    assert len(loaded.lemmas) == len(lib.lemmas)
    assert len(loaded.requests) == len(lib.requests)
    assert len(loaded.problems) == len(lib.problems)
    for original, restored in zip(lib.lemmas.records, loaded.lemmas.records):
        assert original.to_json_dict() == restored.to_json_dict()
        assert np.array_equal(original.embedding, restored.embedding)
    for original, restored in zip(lib.requests.records, loaded.requests.records):
        assert original.to_json_dict() == restored.to_json_dict()
    for original, restored in zip(lib.problems.records, loaded.problems.records):
        assert original.to_json_dict() == restored.to_json_dict()

    # snapshot of the loaded library is byte-identical
    path2 = tmp_path / "lib2.snap"
    loaded.snapshot(path2)
    assert path.read_bytes() == path2.read_bytes()


def test_truncated_snapshot_rejected(tmp_path, library):
    add_skill(library, "lemma a: shows True by auto")
    add_skill(library, "unrelated zzz qq www body")
    path = tmp_path / "lib.snap"
    library.snapshot(path)
    content = path.read_text().splitlines()
    path.write_text("\n".join(content[:-1]) + "\n")  # drop the last record
    with pytest.raises(CorruptStoreError):
        SkillLibrary.load(path)


def test_load_missing_or_garbage(tmp_path):
    with pytest.raises(CorruptStoreError):
        SkillLibrary.load(tmp_path / "nope.snap")
    bad = tmp_path / "bad.snap"
    bad.write_text("not json at all\n")
    with pytest.raises(CorruptStoreError):
        SkillLibrary.load(bad)


def test_journal_rebuilds_library(tmp_path, embedder):
    journal = tmp_path / "lib.journal"
    lib = SkillLibrary(dim=32)
    lib.attach_journal(journal)
    skill = add_skill(lib, "lemma a: shows True by auto").skill_id
    add_skill(lib, "other wholly unlike body zz")
    request = lib.insert_request("t", "lemma r: shows True", embedder.embed("r"))
    lib.upsert_problem("p1", "inf", ["pf"], "theorem p1: shows True", embedder.embed("p"))
    lib.record_usage(skill, "evolved")
    lib.mark_request_solved(request.id)
    lib.update_problem("p1", status=PROBLEM_SOLVED, add_attempt=True)
    lib.close_journal()

    rebuilt = SkillLibrary.replay_journal(journal)
    assert len(rebuilt.lemmas) == 2
    assert rebuilt.lemmas.get(skill).evolve_count == 1
    assert rebuilt.requests.get(request.id).status == REQUEST_SOLVED
    assert rebuilt.problems.get("p1").status == PROBLEM_SOLVED
    assert rebuilt.problems.get("p1").attempts_used == 1

    # journal replay and direct state agree snapshot-for-snapshot
    a, b = tmp_path / "a.snap", tmp_path / "b.snap"
    lib.snapshot(a)
    rebuilt.snapshot(b)
    assert a.read_bytes() == b.read_bytes()
