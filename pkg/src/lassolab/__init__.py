"""Sparse-coding acceleration laboratory.

Classical proximal solvers for the l1-penalized least-squares problem,
trainable unrolled networks with hand-derived gradients, numerical
evaluators for factorization-based convergence bounds, and a seeded
experiment harness.
"""

from .factorization import (Factorization, FitOptions, acceleration_condition,
                            bound_cor23, bound_prop21, bound_thm22, delta_a,
                            delta_subgradient, fit_factorization,
                            lemma_b1_check, lipschitz_estimate, residual,
                            rotated_prox_step, run_rotated, stiefel_project)
from .harness import (PRESET_NAMES, BaselineSpec, ExperimentConfig, ModelSpec,
                      ResultTable, diagnose_factorization, preset,
                      run_experiment)
from .kernels import BACKEND, shrink_mask, soft_threshold
from .networks import (FacnetParams, LfistaParams, LinearParams, ListaParams,
                       ProblemBatch, facnet_forward, facnet_init_identity,
                       lfista_forward, lfista_init_from_fista, linear_forward,
                       linear_init_zero, lista_forward, lista_init_from_ista,
                       load_params, network_backward, network_loss,
                       save_params)
from .problem import (Dictionary, GeneratorConfig, Problem, build_problem,
                      duality_gap, gen_dictionary, lasso_cost, load_dictionary,
                      power_iteration, sample_codes, save_dictionary)
from .rng import substream
from .solvers import (ConvergenceTrace, ReferenceSolution, SolverState,
                      fista_step, gap_curves, init_state, ista_step,
                      run_solver, solve_reference, solve_reference_batch)
from .training import (AdagradState, TrainConfig, TrainTrace, adagrad_update,
                       finalize_facnet, init_adagrad, init_params,
                       make_test_batch, train)

__version__ = "0.1.0"
