"""Data-driven adaptive impedance matching toolkit.

Exact two-port circuit oracle with configurable parasitics, a from-scratch
MLP surrogate of the circuit's S-parameters, and matching strategies
(annealed particle swarm, projected Adam on reverse-mode gradients, inverse
solver network) scored by a reproducible benchmark harness.
"""

from .circuit import (
    CircuitTopology,
    TunableState,
    analytical_match,
    ideal_l_input_impedance,
    load_topology,
    reference_practical_circuit,
    simulate,
)
from .errors import RfMatchError
from .matchers import (
    AdamMatchConfig,
    Bounds,
    MatchResult,
    ModelSurrogate,
    OracleSurrogate,
    SapsoConfig,
    adadam_match,
    grid_search_match,
    ideal_analytic_match,
    ims_match,
    recover_load_reflection,
    sapso_match,
)
from .network import (
    AbcdMatrix,
    SParameters,
    abcd_to_s,
    cascade,
    impedance_to_reflection,
    input_reflection,
    load_reflection_from_input,
    objective_psi,
    reflection_to_impedance,
    series_arm_abcd,
    shunt_arm_abcd,
)
from .nn import MlpModel, NormalizationSpec, TrainingConfig, build_model, deserialize_model, forward, serialize_model, train

__version__ = "0.1.0"
