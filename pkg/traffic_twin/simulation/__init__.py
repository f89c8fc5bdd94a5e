from .core import (
    ARRIVAL_TOLERANCE,
    COUNTER_SHARPNESS,
    FLOOR,
    SENTINEL,
    VALID_THRESHOLD,
    LinkTensors,
    SimConfig,
    as_link_tensors,
)
from .car_following import car_following_step, headways, position_update_all
from .node_model import link_choice, merge_choice, node_step, transfer
from .observation import (
    CountSeries,
    ObservationMask,
    differentiable_count,
    link_counts,
    record_counts,
    synthesize_observations,
)
from .engine import Scenario, Trajectory, seed_agents, simulate, step
from .nowcast import Forecast, nowcast
