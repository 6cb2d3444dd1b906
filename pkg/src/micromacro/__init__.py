"""Micro-macro Markov chain Monte Carlo for molecules with a reaction coordinate.

The package samples a Gibbs measure ``exp(-beta V(x))`` by proposing moves
of a scalar reaction coordinate against an approximate free energy and
lifting accepted moves back to microstates, either directly on the fiber
or through a short biased Langevin chain. A microscopic MALA sampler is
the baseline; :mod:`micromacro.harness` measures efficiency gains.
"""
from .core import (ChainRecord, ConfigError, FiberMismatchError, FreeEnergy, Model,
                   ModelDomainError, NumericalError, Reconstruction, RcDomain, check_gradients,
                   free_energy_log_density, gibbs_log_density)
from .estimators import (DirectMMMCMC, IndirectMMMCMC, MacroSampler, MALASampler,
                         PeriodicKDE)
from .mmmcmc import (DirectConfig, ExtendedState, IndirectConfig, biased_inner_chain,
                     direct_step, indirect_step, run_direct_chain, run_indirect_chain)
from .molecules import (MODELS, butane_model, butane_reconstruction_log_density, make_model,
                        threeatom_model, threeatom_reconstruct,
                        threeatom_reconstruction_log_density)
from .oracle import (NLambdaTable, brute_force_stationary, n_lambda_table,
                     normalize_free_energy, reference_moment)
from .samplers import (ProposalKernel, StepOutcome, macro_accept_log_prob, macro_propose,
                       mala_log_accept, mala_step, run_macro_chain, run_mala_chain)

__version__ = "0.1.0"
__all__ = [
    "ChainRecord", "ConfigError", "DirectConfig", "DirectMMMCMC", "ExtendedState",
    "FiberMismatchError", "FreeEnergy", "IndirectConfig", "IndirectMMMCMC", "MALASampler",
    "MODELS", "MacroSampler", "Model", "ModelDomainError", "NLambdaTable", "NumericalError",
    "PeriodicKDE", "ProposalKernel", "RcDomain", "Reconstruction", "StepOutcome",
    "biased_inner_chain", "brute_force_stationary", "butane_model",
    "butane_reconstruction_log_density", "check_gradients", "direct_step",
    "free_energy_log_density", "gibbs_log_density", "indirect_step", "macro_accept_log_prob",
    "macro_propose", "make_model", "mala_log_accept", "mala_step", "n_lambda_table",
    "normalize_free_energy", "reference_moment", "run_direct_chain", "run_indirect_chain",
    "run_macro_chain", "run_mala_chain", "threeatom_model", "threeatom_reconstruct",
    "threeatom_reconstruction_log_density",
]
