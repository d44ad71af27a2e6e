"""GIN node classification under random structural noise on ring-of-houses graphs."""
from .graphgen import Graph, HouseRingConfig, build_ring_of_houses, wl_refine
from .noise import NoiseSpec, add_noise
from .gin import f1_macro, init_model, model_forward, predict
from .trainer import SplitConfig, TrainOptions, make_splits, train_baseline
from .experiments import ExperimentSpec, run_trials

__version__ = "0.1.0"
__all__ = [
    "Graph", "HouseRingConfig", "build_ring_of_houses", "wl_refine",
    "NoiseSpec", "add_noise",
    "f1_macro", "init_model", "model_forward", "predict",
    "SplitConfig", "TrainOptions", "make_splits", "train_baseline",
    "ExperimentSpec", "run_trials",
]
