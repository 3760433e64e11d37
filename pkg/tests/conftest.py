"""Shared fixtures: the transcribed theory corpus and small builders."""

from __future__ import annotations

import pytest

from skillprover import HashEmbedder, SkillLibrary

# ── transcribed theory corpus ────────────────────────────────────────
# Machine-written Isabelle sources used across parser, verifier, and
# pipeline tests. AM_GM_THEORY is a formalizer output containing one
# auxiliary lemma plus the target theorem.

AM_GM_THEORY = '''theory Scratch
  imports Complex_Main
begin
lemma am_gm:
  fixes x y :: real
  shows "x^2 + y^2 \\<ge> 2 * x * y"
proof -
  have "(x - y)^2 \\<ge> 0"
    by simp
  then have "x^2 - 2 * x * y + y^2 \\<ge> 0"
    by (simp add: algebra_simps power2_diff)
  then have "x^2 + y^2 \\<ge> 2 * x * y"
    by simp
  then show ?thesis
    by simp
qed
theorem amc12a_2021_p7:
  fixes x y ::real
  shows "1 \\<le> ((x * y) - 1)^2 + (x + y)^2"
  apply (auto simp:algebra_simps power2_eq_square)
  by (metis am_gm add.commute add.left_commute add_mono_thms_linordered_semiring(1) add_pos_nonneg less_add_same_cancel1 power2_sum power_mono zero_le_power2)
end
'''

POWER_EQ_THEORY = '''theory Scratch
  imports Complex_Main
begin
lemma power_eq_imp_eq:
  fixes a::real
  assumes "a>0" "a\\<noteq>1" "a^m = a^n"
  shows "m = n"
proof -
  have "a^(m-n) = 1"
    using assms(3) assms(2) by (metis assms(1) diff_is_0_eq power_0 power_inject_exp)
  hence "m-n=0"
    by (smt (verit) assms(1) assms(2) assms(3) power_inject_exp)
  thus "m = n"
    by (smt (verit) assms(1) assms(2) assms(3) power_inject_exp zero_less_diff)
qed
end
'''

EXPONENT_THEORY = '''theory Scratch
  imports Complex_Main
begin
lemma exponent_properties:
  fixes a b :: real
  assumes "0 < a \\<and> 0 < b"
  shows "a^n * a^m = a^(n + m) \\<and> (a^n)^m = a^(n * m)"
proof
  show "a^n * a^m = a^(n + m)"
    by (simp add: assms(1) power_add)
next
  show "(a^n)^m = a^(n * m)"
    by (simp add: assms(1) power_mult)
qed
end
'''

DIVIDE_CROSS_MUL_THEORY = '''theory Scratch
  imports Complex_Main
begin
lemma divide_cross_mul:
  fixes a b c d :: real
  assumes "b \\<noteq> 0"
    and "d \\<noteq> 0"
    and "a / b = c / d"
  shows "a * d = b * c"
  using assms by (auto simp: field_simps)
end
'''

DIVIDE_CROSS_MUL_GENERALIZED_THEORY = '''theory Scratch
  imports Complex_Main
begin
lemma divide_cross_mul_generalized:
  fixes a b c d x y :: real
  assumes "b \\<noteq> 0"
    and "d \\<noteq> 0"
    and "a / b = c / d"
    and "a = x * b"
    and "c = y * d"
  shows "x * d = y * b"
  using assms by (auto simp: field_simps)
end
'''

# Decomposer output for the "least possible value of (xy-1)^2+(x+y)^2"
# problem: four steps, three requested lemmas.
DECOMPOSER_OUTPUT = '''Structure proof:
Step 1: Expand the expression ((xy-1)^2+(x+y)^2) to obtain (x^2+2xy+y^2+x^2y^2-2xy+1).
Step 2: Simplify the expression derived in Step 1 to obtain (x^2+y^2+x^2y^2+1).
Step 3: Apply the Trivial Inequality, which states that all squares are nonnegative, to argue that the minimum value of the expression is 1.
Step 4: Show that the minimum value of 1 can be achieved when (x=y=0).
Required skills:
Thoughts 1: The Trivial Inequality is a key concept in this proof. Understanding and applying this inequality is crucial to show that the minimum value of the expression is 1.
Code 1:
lemma trivial_inequality:
  fixes a :: real
  shows "0 \\<le> a^2"
Thoughts 2: The ability to expand and simplify algebraic expressions is important in this proof.
Code 2:
lemma expand_expression:
  fixes x y :: real
  shows "(x * y - 1)^2 + (x + y)^2 = x^2 + 2 * x * y + y^2 + x^2 * y^2 - 2 * x * y + 1"
Thoughts 3: The ability to substitute values into an expression and evaluate it is necessary to show that the minimum value of 1 can be achieved when x=y=0.
Code 3:
lemma substitute_values:
  fixes x y :: real
  assumes "x = 0" "y = 0"
  shows "(x * y - 1)^2 + (x + y)^2 = 1"
'''

# The requested-lemma statement from the decomposer's in-context example.
AM_GM_REQUEST_CODE = '''lemma am_gm:
  fixes x y :: real
  assumes "x >= 0" "y >= 0"
  shows "x^2 + y^2 >= 2*x*y"
'''

AM_GM_REQUEST_STATEMENT = (
    'lemma am_gm: fixes x y :: real assumes "x >= 0" "y >= 0" '
    'shows "x^2 + y^2 >= 2*x*y"'
)

# Tactics appearing in the corpus above; a mock allow-list covering them.
CORPUS_TACTICS = {
    "by simp",
    "by (simp add: algebra_simps power2_diff)",
    "apply (auto simp:algebra_simps power2_eq_square)",
    "by (metis am_gm add.commute add.left_commute "
    "add_mono_thms_linordered_semiring(1) add_pos_nonneg "
    "less_add_same_cancel1 power2_sum power_mono zero_le_power2)",
    "by (simp add: assms(1) power_add)",
    "by (simp add: assms(1) power_mult)",
    "by (auto simp: field_simps)",
    "by auto",
}


@pytest.fixture
def embedder():
    return HashEmbedder(dim=32)


@pytest.fixture
def library():
    return SkillLibrary(dim=32, seed=7)


def make_embedding(embedder: HashEmbedder, text: str):
    return embedder.embed(text)
