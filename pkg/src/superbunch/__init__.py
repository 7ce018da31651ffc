"""Simulation and photon statistics of superbunching pseudothermal light."""
from .detection import (
    DetectorParams,
    PhotonStream,
    apply_dead_time,
    apply_jitter,
    beam_split,
    sample_arrivals,
)
from .fitting import FitError, FitResult, fit_two_timescale
from .light import (
    IntensityTrace,
    MixParams,
    ModulationParams,
    SpeckleParams,
    gen_modulation_intensity,
    gen_speckle_intensity,
    mix_coherent_background,
    multiply_traces,
)
from .statistics import (
    CorrelationFunction,
    CountHistogram,
    UndefinedStatisticError,
    coincidence_histogram,
    count_windows,
    g2_from_histogram,
    geometric_pmf,
    poisson_pmf,
    tail_metrics,
)

__version__ = "0.1.0"
