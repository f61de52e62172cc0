"""Toolkit for novel-slot-detection benchmarks over slot-filling corpora:
corpus handling, benchmark construction, CRF taggers, MSP/GDA detectors,
and span/token/ROSE evaluation."""

__version__ = "0.1.0"

from .corpus import (  # noqa: F401
    CorpusSplit,
    CorpusStats,
    LabeledUtterance,
    SlotSchema,
    compute_stats,
    derive_schema,
    parse_conll,
    serialize_conll,
    validate_bio,
)
from .benchmark import (  # noqa: F401
    NsdBenchmark,
    NsdConfig,
    apply_train_strategy,
    benchmark_stats,
    build_benchmark,
    relabel_eval_split,
    select_unknown_types,
)
from .features import (  # noqa: F401
    HashedFeatureSpec,
    TokenFeatureMatrix,
    hash_features,
    load_embeddings,
    write_embeddings,
)
from .crf import (  # noqa: F401
    TaggerModel,
    TrainConfig,
    log_likelihood_and_grad,
    posterior_marginals,
    train,
    viterbi_decode,
)
from .detect import (  # noqa: F401
    DetectorConfig,
    GdaModel,
    PredictionSet,
    calibrate_threshold,
    gda_detect,
    gda_fit,
    msp_detect,
    msp_score,
    run_detection,
)
from .metrics import (  # noqa: F401
    MetricsReport,
    Span,
    build_report,
    error_analysis,
    extract_spans,
    rose,
    span_f1,
    token_f1,
)
