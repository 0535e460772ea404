"""Cascade channel estimation and beamforming for a reflecting-surface
mmWave OFDM link.

The training tensor admits a three-way canonical decomposition whose
factors carry the composite-path angles, gains and delays; the package
fits it (closed-form shift-invariance solver or ALS), recovers the
parameters by correlation search, bounds them with Fisher information,
compares against a gridded sparse-recovery baseline, and turns estimates
into reflection patterns and hybrid precoders.
"""

__version__ = "0.1.0"

from .backend import active_backend
from .channel import (
    ArrayGeometry,
    ChannelRealization,
    CompositePaths,
    OfdmConfig,
    cascade_channel,
    cascade_from_paths,
    composite_paths,
    load_realization,
    random_realization,
    save_realization,
)
from .cpd import (
    AlsOptions,
    CpdResult,
    als_fit,
    als_fit_regularized,
    match_components,
    vandermonde_fit,
)
from .crb import (
    CrbReport,
    FimResult,
    crb_diag,
    fim_analytic,
    fim_numeric,
    model_jacobian,
)
from .beamforming import (
    BeamformingConfig,
    BeamformingSolution,
    design_beamforming,
    effective_channel,
    optimize_ris_phases,
    spectral_efficiency,
)
from .harness import (
    ExperimentConfig,
    ExperimentRecord,
    profile_config,
    run_sweep,
    summarize,
    write_results,
)
from .recovery import (
    ParameterEstimate,
    SearchOptions,
    channel_nmse,
    recover_parameters,
    reconstruct_channels,
    refine_estimate,
)
from .somp import GridSpec, SompResult, build_dictionary, somp_estimate
from .tensor3 import ComplexTensor3, FactorTriple, cp_reconstruct, mode_unfold
from .training import (
    ReceivedTensor,
    TrainingConfig,
    kruskal_check,
    random_training,
    synthesize,
)

__all__ = [
    "__version__",
    "active_backend",
    "ArrayGeometry",
    "ChannelRealization",
    "CompositePaths",
    "OfdmConfig",
    "cascade_channel",
    "cascade_from_paths",
    "composite_paths",
    "load_realization",
    "random_realization",
    "save_realization",
    "AlsOptions",
    "CpdResult",
    "als_fit",
    "als_fit_regularized",
    "match_components",
    "vandermonde_fit",
    "CrbReport",
    "FimResult",
    "crb_diag",
    "fim_analytic",
    "fim_numeric",
    "model_jacobian",
    "BeamformingConfig",
    "BeamformingSolution",
    "design_beamforming",
    "effective_channel",
    "optimize_ris_phases",
    "spectral_efficiency",
    "ExperimentConfig",
    "ExperimentRecord",
    "profile_config",
    "run_sweep",
    "summarize",
    "write_results",
    "ParameterEstimate",
    "SearchOptions",
    "channel_nmse",
    "recover_parameters",
    "reconstruct_channels",
    "refine_estimate",
    "GridSpec",
    "SompResult",
    "build_dictionary",
    "somp_estimate",
    "ComplexTensor3",
    "FactorTriple",
    "cp_reconstruct",
    "mode_unfold",
    "ReceivedTensor",
    "TrainingConfig",
    "kruskal_check",
    "random_training",
    "synthesize",
]
