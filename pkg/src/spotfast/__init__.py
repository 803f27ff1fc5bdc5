"""Two-pathway lipreading network with memory-augmented lateral transformers."""
from .config import ExperimentConfig, ModelConfig, PhasePlan, desk_config, load_config, paper_config
from .model import SpotFastLipreader, build_model, load_checkpoint, save_checkpoint
from .train import ClipSet, evaluate, run_phase

__version__ = "0.1.0"

__all__ = [
    "ClipSet", "ExperimentConfig", "ModelConfig", "PhasePlan", "SpotFastLipreader",
    "build_model", "desk_config", "evaluate", "load_checkpoint", "load_config",
    "paper_config", "run_phase", "save_checkpoint",
]
