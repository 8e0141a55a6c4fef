//! Subcommand implementations behind the `propnet` binary.
//!
//! Every command returns the text it would print on standard output so the
//! same code paths can be exercised from tests. Exit codes: 0 success,
//! 1 input error, 2 verification failure.

use std::fmt;
use std::path::{Path, PathBuf};

use propnet::codec::{BoundaryScheme, NUM_BOUNDARIES};
use propnet::loss::LossParams;

pub mod check;
pub mod eval;
pub mod fit;
pub mod gen_gt;
pub mod stats;

#[derive(Debug)]
pub enum CliError {
    /// Bad, missing or unreadable input. Exit code 1.
    Input(String),
    /// A verification run detected a failure. Exit code 2.
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Verification(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<propnet::Error> for CliError {
    fn from(e: propnet::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Boundary scheme from a file, or the bundled 98-point scheme.
pub fn load_scheme(path: Option<&Path>, n_points: usize) -> CliResult<BoundaryScheme> {
    match path {
        Some(p) => Ok(BoundaryScheme::parse(&read_text(p)?, n_points, Some(NUM_BOUNDARIES))?),
        None if n_points == propnet::geometry::WFLW_POINTS => Ok(BoundaryScheme::wflw98()),
        None => Err(CliError::Input(format!("no bundled boundary scheme for {n_points} landmarks; pass --scheme"))),
    }
}

/// Loss parameters from a `key = value` file, or the defaults.
pub fn load_loss_params(path: Option<&Path>) -> CliResult<LossParams> {
    match path {
        Some(p) => Ok(LossParams::parse(&read_text(p)?)?),
        None => Ok(LossParams::default()),
    }
}

pub(crate) fn ensure_dir(path: &Path) -> CliResult<PathBuf> {
    std::fs::create_dir_all(path).map_err(|e| CliError::Input(format!("cannot create {}: {e}", path.display())))?;
    Ok(path.to_path_buf())
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}
