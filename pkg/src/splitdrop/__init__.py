"""Fast Monte Carlo dropout via trunk caching, with error-corrected ensembles."""

from .probcore import (CorrectionParams, EnsembleDecision, ProbabilityVector,
                       correct, correct_rows, ensemble_average, ensemble_corrected)
from .delta import (DeltaInputs, PeakedMixture, SoftmaxSampleSet, SymmetricDirichlet,
                    delta_closed_form, delta_empirical, estimate_delta_inputs,
                    theorem1_holds, uniform_limit_check)
from .layers import NetSpec, Network, build_network, default_widths
from .engine import SplitNetwork, TrunkCache, benchmark, mc_ensemble, split
from .synthrf import DatasetManifest, SignalRecord, TransmitterProfile, augment_shift, generate
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "CorrectionParams", "EnsembleDecision", "ProbabilityVector",
    "correct", "correct_rows", "ensemble_average", "ensemble_corrected",
    "DeltaInputs", "PeakedMixture", "SoftmaxSampleSet", "SymmetricDirichlet",
    "delta_closed_form", "delta_empirical", "estimate_delta_inputs",
    "theorem1_holds", "uniform_limit_check",
    "NetSpec", "Network", "build_network", "default_widths",
    "SplitNetwork", "TrunkCache", "benchmark", "mc_ensemble", "split",
    "DatasetManifest", "SignalRecord", "TransmitterProfile", "augment_shift", "generate",
    "TrainConfig", "train",
    "__version__",
]
