"""Rate-power regions for SWIPT systems with a nonlinear harvester that has memory.

The package is organized around the pipeline:

* :mod:`swiptmem.constellation` - symbol sets and probability vectors.
* :mod:`swiptmem.awgn` - mutual information over the AWGN link and its gradient.
* :mod:`swiptmem.circuit` - envelope-domain rectifier simulation (ground truth).
* :mod:`swiptmem.surrogate` - small ReLU networks trained on circuit data.
* :mod:`swiptmem.chain` - the state random walk and the likelihood-ratio
  gradient estimator for the average harvested power.
* :mod:`swiptmem.sqp` - the constrained optimizer over the input distribution.
* :mod:`swiptmem.region` - fading sweeps producing rate-power region tables.
* :mod:`swiptmem.cli` - the command-line front end.
"""

__version__ = "0.1.0"

from .awgn import (
    IrChannel,
    MiPlan,
    QuadratureConfig,
    ap_gradient,
    mi_gradient,
    mutual_information,
    noise_entropy,
    output_entropy,
)
from .chain import (
    ChainState,
    EhModel,
    EstimatorState,
    estimate_gradient,
    evaluate_average_reward,
    likelihood_ratio_vector,
    make_circuit_model,
    make_surrogate_model,
    step,
    update_estimator,
)
from .circuit import (
    CircuitParams,
    Dataset,
    StepResult,
    generate_dataset,
    simulate_interval,
    steady_state_response,
    voltage_ceiling,
)
from .constellation import (
    Constellation,
    build_uniform_pam,
    clean_pmf,
    sample_symbol,
    second_moment,
    uniform_pmf,
    validate_pmf,
)
from .region import (
    Geometry,
    RegionPoint,
    SweepAssets,
    SweepGrid,
    baseline_memoryless,
    sample_channels,
    trace_region,
)
from .sqp import (
    ExactObjective,
    ProblemSpec,
    Solution,
    SolverConfig,
    bfgs_update,
    build_qp,
    solve,
    solve_qp,
)
from .surrogate import (
    MlpParams,
    TrainConfig,
    load_model,
    mape,
    mlp_forward,
    predict_next_state,
    predict_reward,
    save_model,
    train,
)
