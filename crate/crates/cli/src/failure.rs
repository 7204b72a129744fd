use std::fmt;
use std::path::Path;

/// A command failure with the process exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, config files or input data. Exit code 2.
    Input(String),
    /// The backend or a numeric kernel failed while running. Exit code 3.
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Input(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    pub fn context(self, what: impl fmt::Display) -> Self {
        match self {
            Failure::Input(m) => Failure::Input(format!("{what}: {m}")),
            Failure::Runtime(m) => Failure::Runtime(format!("{what}: {m}")),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(m) => write!(f, "input error: {m}"),
            Failure::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl From<visent::Error> for Failure {
    fn from(e: visent::Error) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

pub type CliResult<T> = Result<T, Failure>;

/// Attaches the path to I/O and parse errors.
pub trait PathContext<T> {
    fn at(self, field: &str, path: &Path) -> CliResult<T>;
}

impl<T, E: Into<Failure>> PathContext<T> for Result<T, E> {
    fn at(self, field: &str, path: &Path) -> CliResult<T> {
        self.map_err(|e| e.into().context(format_args!("{field} '{}'", path.display())))
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}
