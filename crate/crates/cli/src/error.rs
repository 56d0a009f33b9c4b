//! Exit-code classification. Every library error lands in exactly one class; the
//! matches below are exhaustive on purpose so a new variant fails to compile
//! until it is classified.

use std::fmt;

use featsel_core::baselines::BaselineError;
use featsel_core::catalog::CatalogError;
use featsel_core::evaluation::EvalError;
use featsel_core::llm_client::BackendError;
use featsel_core::pairs::PairsError;
use featsel_core::partition::PartitionError;
use featsel_core::prompting::PromptError;
use featsel_core::selection::SelectionError;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorClass {
    Config,
    Data,
    Backend,
    Internal,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Backend => 4,
            ErrorClass::Internal => 5,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub class: ErrorClass,
    pub message: String,
}

impl CliError {
    pub fn new(class: ErrorClass, message: impl Into<String>) -> Self {
        Self { class, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ErrorClass::Config, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(ErrorClass::Data, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorClass::Internal, message)
    }

    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }

    /// One-line JSON record written to stderr on failure.
    pub fn record(&self) -> String {
        #[derive(Serialize)]
        struct Record<'a> {
            error: Inner<'a>,
        }
        #[derive(Serialize)]
        struct Inner<'a> {
            class: ErrorClass,
            exit_code: i32,
            message: &'a str,
        }
        serde_json::to_string(&Record {
            error: Inner {
                class: self.class,
                exit_code: self.class.exit_code(),
                message: &self.message,
            },
        })
        .expect("error record serializes")
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", serde_json::to_value(self.class).unwrap().as_str().unwrap(), self.message)
    }
}

pub fn catalog_class(e: &CatalogError) -> ErrorClass {
    match e {
        CatalogError::Io { .. }
        | CatalogError::Parse { .. }
        | CatalogError::DuplicateName(_)
        | CatalogError::EmptyCatalog
        | CatalogError::MissingColumn(_)
        | CatalogError::NonBinaryLabel(_)
        | CatalogError::RaggedRow(_)
        | CatalogError::BadValue { .. }
        | CatalogError::UnknownFeature(_) => ErrorClass::Data,
    }
}

pub fn backend_class(e: &BackendError) -> ErrorClass {
    match e {
        BackendError::Config(_) => ErrorClass::Config,
        BackendError::Transport(_)
        | BackendError::Auth(_)
        | BackendError::RateLimited { .. }
        | BackendError::ScriptExhausted(_)
        | BackendError::BudgetExhausted(_) => ErrorClass::Backend,
    }
}

pub fn prompt_class(e: &PromptError) -> ErrorClass {
    match e {
        PromptError::UnknownFeature(_) => ErrorClass::Data,
        PromptError::MissingPlaceholder(_) => ErrorClass::Config,
    }
}

pub fn selection_class(e: &SelectionError) -> ErrorClass {
    match e {
        SelectionError::Backend(b) => backend_class(b),
        SelectionError::UnparseableResponse { .. } => ErrorClass::Backend,
        SelectionError::Prompt(p) => prompt_class(p),
        SelectionError::TargetExceedsPool { .. } | SelectionError::Config(_) => ErrorClass::Config,
        SelectionError::EmptyCandidates
        | SelectionError::UnknownFeature(_)
        | SelectionError::DuplicateCandidate(_) => ErrorClass::Data,
        SelectionError::Cancelled => ErrorClass::Internal,
    }
}

pub fn partition_class(e: &PartitionError) -> ErrorClass {
    match e {
        PartitionError::TooManyBuckets { .. } | PartitionError::InvalidFactor(_) | PartitionError::Config(_) => {
            ErrorClass::Config
        }
        PartitionError::Bucket { source, .. } => selection_class(source),
        PartitionError::Refine(source) => selection_class(source),
    }
}

pub fn baseline_class(e: &BaselineError) -> ErrorClass {
    match e {
        BaselineError::KTooLarge { .. } | BaselineError::Config(_) => ErrorClass::Config,
        BaselineError::SingleClassData | BaselineError::TooFewRows(_) | BaselineError::DidNotConverge(_) => {
            ErrorClass::Data
        }
    }
}

pub fn eval_class(e: &EvalError) -> ErrorClass {
    match e {
        EvalError::Spec(_) | EvalError::EmptySelection => ErrorClass::Config,
        EvalError::SingleClassData
        | EvalError::LengthMismatch(..)
        | EvalError::NonFiniteScore(_)
        | EvalError::UnknownFeature(_)
        | EvalError::ReportParse { .. }
        | EvalError::Io(_) => ErrorClass::Data,
        EvalError::Catalog(c) => catalog_class(c),
    }
}

pub fn pairs_class(e: &PairsError) -> ErrorClass {
    match e {
        PairsError::TooFewSignals(_)
        | PairsError::TooFewRows(_)
        | PairsError::LengthMismatch(..)
        | PairsError::ZeroVariance
        | PairsError::UnknownSignal(_)
        | PairsError::DuplicateColumn(_)
        | PairsError::BadValue { .. }
        | PairsError::Csv(_)
        | PairsError::Io { .. } => ErrorClass::Data,
        PairsError::Catalog(c) => catalog_class(c),
    }
}

macro_rules! classified {
    ($($ty:ty => $f:ident),* $(,)?) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::new($f(&e), e.to_string())
            }
        })*
    };
}

classified!(
    CatalogError => catalog_class,
    BackendError => backend_class,
    PromptError => prompt_class,
    SelectionError => selection_class,
    PartitionError => partition_class,
    BaselineError => baseline_class,
    EvalError => eval_class,
    PairsError => pairs_class,
);
