use thiserror::Error;

/// Errors raised by the factorization library.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not chain.
    #[error("dimension mismatch in {context}: expected {expected:?}, found {found:?}")]
    Dimension {
        context: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    /// A documented precondition was violated by the caller.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Internal structure is inconsistent (tree, rank profile, ownership map).
    #[error("structural error: {0}")]
    Structure(String),

    /// A reconstruction phase was invoked before its prerequisites.
    #[error("sequencing error: {0}")]
    Sequencing(String),

    /// Argument outside the domain of a special function or kernel.
    #[error("domain error: {0}")]
    Domain(String),

    /// LU pivot too small relative to the matrix norm.
    #[error("ill-conditioned system: pivot {pivot:.3e} below {threshold:.3e}")]
    Conditioning { pivot: f64, threshold: f64 },

    /// Dense materialization refused because it exceeds the configured cap.
    #[error("dense expansion of {rows}x{cols} exceeds cap of {cap} entries")]
    DenseCap { rows: usize, cols: usize, cap: usize },

    /// Malformed binary container.
    #[error("format error at byte {offset} in section `{section}`: {message}")]
    Format {
        offset: u64,
        section: &'static str,
        message: String,
    },

    /// The requested error metric is undefined (zero denominator).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Least-squares fit for a core block has fewer samples than unknowns.
    #[error("underdetermined core fit: {rows} unknown rows but only {cols} probe columns; enlarge the probe")]
    Underdetermined { rows: usize, cols: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dims(
    context: &'static str,
    expected: (usize, usize),
    found: (usize, usize),
) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            found,
        })
    }
}
