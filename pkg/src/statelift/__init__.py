"""Moment-SOS relaxations for chain-structured and tensor-train polynomials."""
from .chainmodel import (
    ChainError,
    CompositionChain,
    StageConstraint,
    TTCores,
    chain_from_tt,
    derive_state_bounds,
    eval_chain,
    expand_dense,
    lift,
    load_chain,
    save_chain,
)
from .conic import ConicProgram, SolveOptions, SolveResult, export_sdpa, moment_matrix, read_sdpa, solve
from .extraction import ExtractionConfig, ExtractionError, extract_sequential, first_moments
from .pipeline import RunReport, relax, solve_chain
from .polycore import Polynomial, VariableSpace, evaluate, monomials_up_to, substitute
from .relax_chord import assemble_chord, chord_chain, predicted_chord_counts
from .relax_dense import assemble_dense, dense_chain
from .relax_push import assemble_push, predicted_push_counts, push_chain, pushforward_alphas
from .sparsity import build_graph, chordal_cliques, treewidth_formula

__version__ = "0.1.0"
