"""Context-window extension strategies, synthetic long-context retrieval
tasks and retrieval metrics for toy embedding encoders."""

from ._core import (
    ConfigError,
    DataError,
    Embedder,
    Error,
    ExtensionSpec,
    GenerationError,
    LengthError,
    Model,
    ModelConfig,
    NumericError,
    PositionMode,
    acc_at_1,
    attention_scale,
    generate_tasks,
    grouped_positions,
    init_model,
    load_checkpoint,
    ndcg_at_10,
    plan_chunks,
    recurrent_positions,
    resolve_ntk_lambda,
    resolve_se_params,
    run_cli,
    save_checkpoint,
    self_extend_relpos,
    word_budget,
)

__all__ = [name for name in dir() if not name.startswith("_")]
