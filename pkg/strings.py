"""
Centralized message strings for logs, errors and the command line.

Templates are formatted with str.format at the call site.
"""


class Strings:
    """Central repository for every message the package emits."""

    # Configuration
    CONFIG_UNKNOWN_KEY = "Unknown config key '{key}'"
    CONFIG_BAD_VALUE = "Invalid value for {key}: {value!r}"
    CONFIG_UNREADABLE = "Cannot read config file {path}"
    CONFIG_RESOLVED = "Resolved config hash={hash} seed={seed} jobs={jobs}"

    # Channel
    BAND_INVALID = "Band '{band}' needs positive bandwidth and carrier frequency"
    SHADOW_INVALID = "Invalid shadowing parameter {what}={value}"
    DISTANCE_TOO_SMALL = "Distance {d:.3f} m is below the minimum {d_min} m"
    EMPTY_POSITIONS = "At least one position is required"
    JITTER_ESCALATED = "Covariance of size {n} needed diagonal jitter {level:g} x max variance"
    FACTORIZATION_FAILED = "Cholesky failed for size {n} (cond={cond:.3e}, min eigenvalue={min_eig:.3e})"
    COV_NOT_DUAL_BAND = "Joint covariance must have even size, got {n}"

    # Mobility
    GEOMETRY_INVALID = "Cell side {side} and grid spacing {spacing} must be positive"
    SMS_INVALID = "Invalid SMS parameter: {what}"
    COUNT_INVALID = "Count must be at least 1, got {n}"
    RADIUS_OUT_OF_RANGE = "Radius {radius} m outside [{lo}, {hi}] m"

    # GP rules
    HORIZON_INVALID = "Horizon U={u} and window Q={q} must be non-negative"
    GAMMA_T_INVALID = "Threshold gamma_t={gamma_t} must lie in [0, 1]"
    HISTORY_SHAPE = "History needs matching position and shadowing lengths, got {n}"
    PROBABILITY_OPEN = "Probability {p} must lie strictly between 0 and 1"
    PROBABILITY_CLOSED = "Probability {p} must lie in [0, 1]"
    INDEX_OUT_OF_RANGE = "Index out of range for a covariance of size {n}"
    TBBA_RHO_ZERO = "rho=0: cmWave shadowing carries no information, TBBA uses the prior only"
    QUADRATURE_FALLBACK = "Gauss-Hermite orders disagree by {diff:.2e}, using adaptive quadrature"
    FIT_TOO_FEW = "Fit needs at least {need} samples, got {n}"
    FIT_NO_SPAN = "Distances span only [{lo:.2f}, {hi:.2f}] m, no breakpoint can be fitted"
    FIT_NO_DIVERSITY = "Too few position pairs within {max_lag} m to fit the correlogram"
    FIT_NO_CONVERGENCE = "Least-squares fit of the {what} did not converge"

    # Learning rules
    FEATURES_EMPTY = "Feature combination is empty"
    FEATURE_UNKNOWN = "Unknown feature '{name}'"
    FEATURE_MISSING = "Feature '{name}' needs a fully populated column '{column}'"
    SHAPE_MISMATCH = "Shape mismatch: got {got}, expected {expected}"
    STANDARDIZER_ROWS = "Standardization needs at least 2 training rows, got {n}"
    ZERO_VARIANCE_DROPPED = "Dropping zero-variance feature columns {columns}"
    LAYER_UNKNOWN = "Unknown layer '{kind}'"
    NETWORK_UNKNOWN = "Unknown network '{name}'"
    TRAIN_CONFIG_INVALID = "Training config needs lr > 0, max_epochs >= 1 and minibatch >= 1"
    SCHEDULE_UNKNOWN = "Unknown training schedule '{name}'"
    TOO_FEW_ROWS = "Training needs at least {need} rows, got {n}"
    TRAINING_DIVERGED = "Loss became non-finite at epoch {epoch}"
    SEQUENCES_SKIPPED = "Skipped {n} sequences not longer than U={horizon}"
    ALL_SEQUENCES_SKIPPED = "No sequence is longer than U={horizon}"
    CV_INVALID = "Cross validation needs repeats >= 1 and candidates, got {repeats} and {n}"
    CV_SELECTED = "CV picked candidate {index} of {n} (mean CE {ce:.4f})"
    CV_NOTHING_SCORED = "No validation split could be scored for any of {n} candidates, keeping the first"
    VALIDATION_EMPTY = "Skipped validation split: none of {n} sequences is longer than U={horizon}"
    CALIBRATION_EMPTY = "Threshold calibration needs validation outcomes"

    # Evaluation
    LABEL_TIES = "{n} samples with equal band rates labelled cmWave"
    METRIC_INPUTS = "Metric inputs must be non-empty and of equal length, got {n} and {m}"
    ZERO_MAX_RATE = "Rate loss is undefined where both capped rates are zero"
    SPLIT_TOO_SMALL = "Cannot split {n} items into train and test"
    COMBINATION_UNKNOWN = "Unknown feature combination '{name}'"
    COMBINATION_DISABLED = "Combination {name} disabled: dataset lacks one of its features"
    DATASET_BUILT = "Built {kind} dataset: {rows} rows, label balance {balance:.3f} in {seconds:.1f} s"
    RULE_SELECTED = "{rule} {combo}: alpha={alpha}, layout={layout}, gamma_t={gamma_t:.2f}"
    LSTM_SELECTED = "LSTM_opd {combo} U={horizon}: {network} with {schedule} schedule"
    EXPERIMENT_DONE = "{name} finished: {rows} result rows in {seconds:.1f} s"
    SWEEP_AXIS_UNKNOWN = "Unknown sweep axis '{axis}'"
    SWEEP_EMPTY = "Sweep along {axis} has no values"

    # Storage
    FILE_MISSING = "No such file or directory: {path}"
    SCHEMA_MISSING = "{path} has no schema header"
    SCHEMA_UNSUPPORTED = "{path} has schema {schema}, expected {expected}"
    CSV_EMPTY = "{path} has no rows"
    CSV_MALFORMED = "{path}: malformed rows at lines {lines}"
    COLUMNS_MISSING = "{path} lacks columns {columns}"
    MODEL_UNREADABLE = "Cannot read model artifact {path}"
    LABELS_OVERRIDDEN = "Recomputed labels differ from the provided ones on {n} rows"
    FEATURE_ABSENT = "Trace has no complete '{name}' column; combinations using it are disabled"
    INGEST_DONE = "Ingested {rows} rows, fitted parameters written to {path}"

    # Command line
    CLI_DESCRIPTION = "Dual-band cmWave/mmWave band assignment experiments"
    CLI_BAD_SET = "Expected KEY=VALUE, got '{item}'"
    CLI_DATASET_REQUIRED = "This command needs --dataset"
    CLI_FAILED = "{command} failed: {error}"
    CLI_CRASHED = "{command} crashed"
    SUMMARY_HEADER = "{path} ({kind}, {provenance})"
    SUMMARY_LINE = "  {key}: {value}"

    HELP_VERBOSE = "log at DEBUG level"
    HELP_CONFIG = "dotenv config file, may be repeated (later files win)"
    HELP_SET = "single config override"
    HELP_OUT = "output directory"
    HELP_SEED = "root seed (RUN_SEED)"
    HELP_JOBS = "worker threads (RUN_JOBS)"
    HELP_DATASET = "dataset CSV"
    HELP_KIND = "dataset kind (DATASET_KIND)"
    HELP_TRACE = "externally produced trace CSV"
    HELP_FIT_PRE = "also fit the pre-break path-loss exponent"
    HELP_MODELS = "directory of trained models; rules are retrained when omitted"
    HELP_AXIS = "sweep axis (SWEEP_AXIS)"
    HELP_GENERATE = "simulate a labelled dataset"
    HELP_INGEST = "validate a trace and fit channel parameters to it"
    HELP_TRAIN = "train and select the learned rules"
    HELP_EVAL = "score every rule on the test split"
    HELP_SWEEP = "error and rate loss along U, gamma_t or Q"
    HELP_SUMMARY = "print dataset diagnostics"
