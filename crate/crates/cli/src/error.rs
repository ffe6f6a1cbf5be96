use std::fmt;

use ctct::config::ConfigError;
use ctct::eval::EvalError;
use ctct::imaging::ImagingError;
use ctct::nn::NnError;
use ctct::recognizer::RecognizerError;
use ctct::synthgen::SynthError;
use ctct::train::TrainError;

/// Process exit status classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    Usage = 1,
    Data = 2,
    Numeric = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    /// Name of the underlying error variant, e.g. `BadCheckpoint`.
    pub tag: String,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(ExitKind::Usage, "Usage", message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(ExitKind::Data, "Data", message)
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self::new(ExitKind::Numeric, "Numeric", message)
    }

    pub fn new(kind: ExitKind, tag: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            kind,
            tag: tag.into(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind as i32
    }

    fn from_typed<E: fmt::Debug + fmt::Display>(kind: ExitKind, e: &E) -> Self {
        Self::new(kind, variant_name(e), e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.tag, self.message)
    }
}

impl std::error::Error for CliError {}

/// Leading identifier of the `Debug` rendering of an enum value.
fn variant_name<E: fmt::Debug>(e: &E) -> String {
    format!("{e:?}").chars().take_while(|c| c.is_alphanumeric() || *c == '_').collect()
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::from_typed(ExitKind::Usage, &e)
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::ConfigText(c) => c.into(),
            NnError::NonFinite(_) => Self::from_typed(ExitKind::Numeric, &e),
            NnError::UnknownLayer { .. } | NnError::Config(_) => Self::from_typed(ExitKind::Usage, &e),
            _ => Self::from_typed(ExitKind::Data, &e),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Config(c) => c.into(),
            SynthError::EmptyDataset | SynthError::InvertedRange { .. } | SynthError::InvalidRanges(_) => {
                Self::from_typed(ExitKind::Usage, &e)
            }
            _ => Self::from_typed(ExitKind::Data, &e),
        }
    }
}

impl From<ImagingError> for CliError {
    fn from(e: ImagingError) -> Self {
        Self::from_typed(ExitKind::Data, &e)
    }
}

impl From<RecognizerError> for CliError {
    fn from(e: RecognizerError) -> Self {
        match e {
            RecognizerError::Model(m) => m.into(),
            RecognizerError::Imaging(i) => i.into(),
            _ => Self::from_typed(ExitKind::Data, &e),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            EvalError::Data(d) => d.into(),
            _ => Self::from_typed(ExitKind::Data, &e),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::Data(d) => d.into(),
            TrainError::Imaging(i) => i.into(),
            TrainError::Recognizer(r) => r.into(),
            TrainError::NonFiniteLoss { .. } => Self::from_typed(ExitKind::Numeric, &e),
            TrainError::Options(_) => Self::from_typed(ExitKind::Usage, &e),
            _ => Self::from_typed(ExitKind::Data, &e),
        }
    }
}
