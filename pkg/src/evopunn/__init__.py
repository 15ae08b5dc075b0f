"""Evolutionary product-unit neural networks with distributed experiment runs."""

from .data import IngestionError, SplitDataset, load_csv, load_split, make_split
from .evolution import EAParams, Individual, RunResult, run_ea
from .grid import BaseConfig, ExperimentConfig, base_config_for, expand_grid_2param, expand_grid_3param
from .network import PUNetwork, ccr, count_connections, cross_entropy, fitness, softmax

__version__ = "0.1.0"
