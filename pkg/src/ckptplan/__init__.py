"""Input-aware activation checkpointing planner on a training-memory simulator."""

from .model import (
    LayerSpec, ModelSpec, ModelSpecError, InputRangeError,
    activation_size, total_activation, load_model, save_model, loads_model, dumps_model,
)
from .simulator import (
    CheckpointPlan, MemoryTimeline, InfeasibleBudget,
    simulate_iteration, peak_memory, brute_force_plan,
)
from .collector import CollectedSample, CollectorConfig, CollectorState, collect_iteration, apply_filter, should_collect
from .estimator import EstimatorModel, fit, predict, predict_total
from .scheduler import SchedulerConfig, PlanCache, generate_plan, lookup_or_plan, plan_latency_probe
from .baselines import static_max_plan, dtr_simulate_iteration
from .harness import WorkloadSpec, ExperimentConfig, SimReport, sample_workload, run_experiment, emit_report

__version__ = "0.1.0"
