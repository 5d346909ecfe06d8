"""Federated dataset distillation for multiple-instance slide classification."""
from .distill import DistillConfig, RealSlide, SyntheticSlide, distill_client, distill_slide
from .federation import ClientState, CurriculumConfig, ProtocolConfig, run_federation
from .gmm import GmmModel, fit_gmm

__version__ = "0.1.0"

__all__ = [
    "ClientState", "CurriculumConfig", "DistillConfig", "GmmModel", "ProtocolConfig",
    "RealSlide", "SyntheticSlide", "distill_client", "distill_slide", "fit_gmm",
    "run_federation",
]
