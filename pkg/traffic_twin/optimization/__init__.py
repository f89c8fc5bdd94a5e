from .parameters import BoxSigmoid, ParameterSet, SoftplusFloor, Transform
from .adamw import OptimizerConfig, OptimizerState, adamw_step
from .loop import IterationRecord, OptimizationOutcome, minimize
from .objectives import Metrics, loss, metrics, target_loss
from .calibration import CalibrationResult, calibrate, noise_stream
from .control import ControlResult, ControlTarget, busiest_link, control, cost_sweep
from .grafting import GraftingRun, run_grafting_demo, toy_scenario
from .gradcheck import (
    SCENARIOS,
    GradientCheck,
    chain_scenario,
    check_gradients,
    diverge_scenario,
    finite_difference,
    gradcheck,
    merge_scenario,
)
