use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// Malformed input, configuration or arguments.
    Parse(String),
    Io(String),
    /// A library failure, labelled with the pipeline stage.
    Stage(&'static str, selseg::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Stage(_, selseg::Error::Singular { .. }) => 3,
            CliError::Stage(_, selseg::Error::NoConvergence(_)) => 4,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Parse(m) => write!(f, "parse error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Stage(s, e) => write!(f, "{s}: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

/// `map_err` helper attaching a stage label.
pub fn stage(name: &'static str) -> impl Fn(selseg::Error) -> CliError {
    move |e| CliError::Stage(name, e)
}
