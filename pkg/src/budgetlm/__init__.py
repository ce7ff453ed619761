"""budgetlm: pretrain a masked language model under a fixed wall-clock budget.

The toolkit covers the whole desk-scale recipe: a deterministic pre-masked
data pipeline, a budget-synchronized learning-rate schedule with AdamW, a
numpy transformer-encoder trainer with sparse masked-token prediction and
gradient accumulation, a pruning sweep controller, and compute-cost
accounting. See README.md for the CLI and demos/ for narrative examples.
"""

from .adamw import OptimizerHyper, OptimizerState, adamw_step
from .config import DEFAULTS, RunManifest, load_config, read_manifest, resolve_config, write_manifest
from .costs import (
    HardwareSpec,
    ThroughputRecord,
    days_to_cover,
    dollar_estimate,
    emit_table,
    gb_hours,
)
from .errors import (
    BudgetLMError,
    ConfigError,
    ControllerError,
    DataError,
    DivergenceError,
    ShardFormatError,
)
from .model import (
    Batch,
    DropoutStreams,
    ModelConfig,
    backward,
    config_from_preset,
    encoder_hidden_states,
    forward_mlm,
    init_params,
    loss_and_grads,
    make_batch,
)
from .pipeline import (
    MaskedInstance,
    SequenceInstance,
    global_shuffle,
    mask_count,
    mask_instances,
    pack_sequences,
    split_validation,
)
from .prepare import prepare_corpus
from .schedule import BudgetPlan, ScheduleParams, calibrate_throughput, lr_at, plan_budget
from .shards import read_shard, read_shards, read_shards_header, write_shard, write_shards
from .sweep import (
    PruneSchedule,
    RealClock,
    SearchSpace,
    SimulatedTrialRunner,
    SubprocessTrialRunner,
    SweepReport,
    TrialConfig,
    TrialState,
    TrialStatus,
    VirtualClock,
    apply_rank_prune,
    apply_threshold_prune,
    build_grid,
    eval_cadence,
    run_sweep,
    summarize_axis,
)
from .trainer import Trainer, TrainerState, evaluate, train_step
from .vocab import Vocab, load_vocab, read_documents, save_vocab, tokenize

__version__ = "0.1.0"
