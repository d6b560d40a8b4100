"""Variational SMC with copula-factorized proposals."""

__version__ = "0.1.0"

from .copula import CopulaHierarchy, CorrelationStructure, Layout, lkj_build
from .environments import (
    LinearGaussianModel,
    PlanarNavModel,
    ThreeDoorsModel,
    threedoors_exact_posterior,
)
from .proposal import CopulaProposalFamily, MarginalParams, VariationalParams
from .smc import bootstrap_proposal, log_evidence, smc_run
from .train import TrainConfig, grad_vsmc, train

__all__ = [
    "CopulaHierarchy",
    "CopulaProposalFamily",
    "CorrelationStructure",
    "Layout",
    "LinearGaussianModel",
    "MarginalParams",
    "PlanarNavModel",
    "ThreeDoorsModel",
    "TrainConfig",
    "VariationalParams",
    "bootstrap_proposal",
    "grad_vsmc",
    "lkj_build",
    "log_evidence",
    "smc_run",
    "threedoors_exact_posterior",
    "train",
]
