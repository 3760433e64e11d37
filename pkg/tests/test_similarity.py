"""similarity_ratio against the stdlib reference implementation.

difflib.SequenceMatcher with autojunk disabled is an independent
Ratcliff-Obershelp implementation; ours must agree exactly.
"""

from __future__ import annotations

import difflib
import random
import string
import time

from hypothesis import given, settings
from hypothesis import strategies as st

from skillprover.similarity import (
    length_upper_bound,
    matched_characters,
    ratio_upper_bound,
    similarity_ratio,
)


def reference_ratio(a: str, b: str) -> float:
    return difflib.SequenceMatcher(None, a, b, autojunk=False).ratio()


def test_identical_strings():
    assert similarity_ratio("abc", "abc") == 1.0


def test_disjoint_alphabets():
    assert similarity_ratio("abc", "xyz") == 0.0


def test_both_empty():
    assert similarity_ratio("", "") == 1.0


def test_one_empty():
    assert similarity_ratio("", "abc") == 0.0


def test_hand_traced_example():
    # longest block "bcd" (3 chars), remainders match nothing: 2*3/8
    assert similarity_ratio("abcd", "bcde") == 0.75


def test_matches_reference_on_random_pairs():
    rng = random.Random(20240517)
    alphabet = string.ascii_lowercase + string.digits + ' "\\<>^*()+-=/'
    started = time.monotonic()
    for _ in range(1000):
        a = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 200)))
        b = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 200)))
        assert similarity_ratio(a, b) == reference_ratio(a, b)
    assert time.monotonic() - started < 5.0


def test_matches_reference_on_adversarial_shapes():
    cases = [
        ("aaaa", "aa"),
        ("abab", "baba"),
        ("xxbyy", "xbyxb"),
        ("the quick brown fox", "the quicker brown fax"),
        ("lemma am_gm:", "lemma am_gm_divide_form:"),
        ("a" * 150, "a" * 150 + "b"),
    ]
    for a, b in cases:
        assert similarity_ratio(a, b) == reference_ratio(a, b)
        assert similarity_ratio(b, a) == reference_ratio(b, a)


@given(st.text(max_size=60), st.text(max_size=60))
@settings(max_examples=200, deadline=None)
def test_ratio_bounds_and_reference(a, b):
    ratio = similarity_ratio(a, b)
    assert 0.0 <= ratio <= 1.0
    assert ratio == reference_ratio(a, b)


@given(st.text(max_size=80))
@settings(max_examples=100, deadline=None)
def test_self_similarity_is_one(text):
    assert similarity_ratio(text, text) == 1.0


@given(st.text(max_size=60), st.text(max_size=60))
@settings(max_examples=200, deadline=None)
def test_upper_bounds_never_underestimate(a, b):
    ratio = similarity_ratio(a, b)
    assert ratio_upper_bound(a, b) >= ratio - 1e-12
    assert length_upper_bound(len(a), len(b)) >= ratio_upper_bound(a, b) - 1e-12


def test_matched_characters_counts():
    assert matched_characters("abcd", "bcde") == 3
    assert matched_characters("abc", "abc") == 3
    assert matched_characters("abc", "xyz") == 0
