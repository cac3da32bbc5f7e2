"""itertl: iterative sample-score-train fine-tuning pipeline for Verilog
code generation, with a structural data filter and a ranking+MLE objective.
"""

from .backends import BackendError, GeneratedSample, HttpBackend, HttpBackendConfig, ToyBackend
from .judges import BuiltinJudge, CommandJudge, JudgeVerdict
from .losses import (
    LossBreakdown,
    RankingConfig,
    RankingResult,
    ResponseLogProbs,
    ce_loss,
    loss_gradients,
    normalized_logprob,
    ranking_loss,
    total_loss,
)
from .metrics import (
    PassAtKInput,
    aggregate_pass_at_k,
    lcs_length,
    pass_at_k,
    rouge_l,
    verilog_token_units,
)
from .model import (
    DecodingParams,
    StopRule,
    ToyModel,
    TrainingGroup,
    Vocab,
    load_checkpoint,
    model_digest,
    next_distribution,
    sample,
    save_checkpoint,
    score_sequence,
    train_step,
    train_to_convergence,
)
from .pipeline import (
    EvalReport,
    IterationConfig,
    IterationState,
    evaluate,
    export_curves,
    run_iteration,
    run_loop,
)
from .records import InstructionRecord, ScoredResponse, read_corpus, write_corpus
from .scoring import (
    FilterPolicy,
    QualityScore,
    ScoreBasis,
    filter_corpus,
    filter_reference,
    score_group,
    score_response,
)
from .synthetic import corpus_vocab, load_bundled_corpus, mini_rtl_corpus
from .verilog import StructureReport, analyze_structure, check_syntax, tokenize

__version__ = "0.1.0"
