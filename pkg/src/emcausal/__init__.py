"""Joint imputation and lagged causal discovery for incomplete multivariate time series."""

from .dataset import LagGraph, LagWeightTensor, NoiseModel, TimeSeriesDataset, load_csv, load_graph, save_csv, save_graph, summarize
from .emengine import EmConfig, EmState, run
from .metrics import f1_score, shd
from .synthgen import SyntheticConfig, apply_mcar_mask, generate_lag_graph, simulate_series

__version__ = "0.1.0"
