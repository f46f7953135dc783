"""Multi-domain diffusion engine with one noise level per domain."""

from .schedule import NoiseSchedule, build_tvector, gather_coefficients, make_linear_schedule
from .denoiser import DenoiserModel, ModelConfig
from .trainer import MultiDomainBatch, TrainConfig, TrainingScheme, train
from .sampler import GenerationRequest, PhiSchedule, ddim_generate, ddpm_generate, generate, phi_eval
from .dataset import (
    FactorVector,
    TriShapeDataset,
    domain_factors,
    generate_dataset,
    load_dataset,
    render,
    save_dataset,
    vector_mode,
)
from .evaluation import mae

__version__ = "0.1.0"
