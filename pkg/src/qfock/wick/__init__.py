"""Symbolic operator algebra: words, normal ordering, Q_k, P₀, evaluation."""

from .algebra import (Annihilate, Create, EmbeddedTable, Gamma, Lambda, Polynomial,
                      RandomSymbolTable, SymbolError, SymbolTable, adjoint_name, counts,
                      degree, exact_level, max_rise, polynomial_rise)
from .evaluate import apply_polynomial, evaluate, generator_matrix
from .maps import (creator_counts, degrees, grade_component, p_0, p_0_vector_check, q_adjoint_symbolic,
                   q_k, q_k_vector_check)
from .rewrite import (NormalForm, NormalFormError, RewriteBudgetError, absorb_gamma,
                      as_normal_form, is_normal_form, normal_order, swap_commuting_lambdas)
from .syntax import (ParseError, format_number, format_polynomial, format_word, parse_polynomial,
                     parse_word)

__all__ = [
    "Annihilate", "Create", "EmbeddedTable", "Gamma", "Lambda", "Polynomial",
    "RandomSymbolTable", "SymbolError", "SymbolTable", "adjoint_name", "counts", "degree",
    "exact_level", "max_rise", "polynomial_rise", "apply_polynomial", "evaluate",
    "generator_matrix", "creator_counts", "degrees", "grade_component", "p_0",
    "p_0_vector_check", "q_adjoint_symbolic", "q_k", "q_k_vector_check", "NormalForm",
    "NormalFormError", "RewriteBudgetError", "absorb_gamma", "as_normal_form",
    "is_normal_form", "normal_order", "swap_commuting_lambdas", "ParseError",
    "format_number", "format_polynomial", "format_word", "parse_polynomial", "parse_word",
]
