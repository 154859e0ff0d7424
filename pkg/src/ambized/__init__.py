"""Neyman-Pearson detection of ambient-backscatter tags using near-perfect codes."""

from .channel import (
    ChannelCoeffs,
    GridParams,
    NoiseModel,
    ReferenceScenario,
    ResourceGrid,
    ZedConfig,
    paper_scenario_params,
    rs_time,
    synthesize,
)
from .detector import (
    CorrelatorTrace,
    DetectionReport,
    NPCDetector,
    Peak,
    combine,
    contrast,
    correlate,
    correlator_bank,
    correlator_noise_var,
    detect_primary,
    detect_secondary,
    detection_prob,
    false_alarm_prob,
    lowpass,
    np_threshold,
    path_power_estimate,
    q_function,
    q_inverse,
    secondary_threshold,
)
from .sequences import (
    BitSequence,
    FskParams,
    aperiodic_autocorrelation,
    barker13,
    npc25,
    psl_db,
    reflection_state,
)

__version__ = "0.1.0"
