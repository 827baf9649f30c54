"""Datasets, normalization and the experiment protocols."""
from .datasets import (EMPIRICAL, MIXED, MODEL, Dataset, NormStats, build_case1_dataset,
                       build_case2_empirical_dataset, build_case2_model_dataset, build_case3_datasets,
                       build_case3_set, compute_stats, denormalize, mix, normalize)
from .protocols import (ARMS, ExperimentSpec, ProtocolAResult, ProtocolBResult, architecture_sweep,
                        run_protocol_A, run_protocol_B, test_error)

__all__ = [
    "EMPIRICAL", "MIXED", "MODEL", "Dataset", "NormStats", "build_case1_dataset", "build_case2_empirical_dataset",
    "build_case2_model_dataset", "build_case3_datasets", "build_case3_set", "compute_stats", "denormalize", "mix",
    "normalize", "ARMS", "ExperimentSpec", "ProtocolAResult", "ProtocolBResult", "architecture_sweep",
    "run_protocol_A", "run_protocol_B", "test_error",
]
