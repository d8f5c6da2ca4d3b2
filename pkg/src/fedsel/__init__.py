"""Budgeted online selection of federated-learning clients.

A library and simulator for the optimal-stopping threshold rule that
selects R of N sequentially arriving clients by probed test accuracy,
with a minimal FedAvg trainer, baseline policies, an IoT flow-feature
extractor, and an experiment harness.
"""
from .selection_math import (
    BudgetSpec,
    ProbabilityEstimate,
    SelectionMathError,
    alpha_star,
    alpha_star_numeric,
    k_sum_approx,
    k_sum_exact,
    selection_probability,
    selection_probability_derivative,
    worst_case_ratio,
)
from .policies import (
    Candidate,
    Decision,
    PolicyError,
    SelectionState,
    StreamAudit,
    Verdict,
    monte_carlo_top_r_probability,
    offline_best_select,
    random_observe,
    run_stream,
    secretary_observe,
)
from .fl import (
    Dataset,
    FlError,
    MlpSpec,
    ModelParams,
    TrainingPlan,
    evaluate,
    fedavg,
    federated_train,
    forward,
    init_model,
    probe_client,
    train_local,
)
from .data import (
    DataError,
    PartitionSpec,
    minmax_normalize,
    partition_clients,
    shuffle_split,
    synth_dataset,
)
from .flow_features import (
    DeviceTable,
    FeatureRow,
    FlowError,
    FlowRecord,
    extract_features,
    label_stream,
)
from .harness import (
    ExperimentConfig,
    RunResult,
    SyntheticSpec,
    run_experiment,
    summarize,
    sweep,
)

__version__ = "0.1.0"
