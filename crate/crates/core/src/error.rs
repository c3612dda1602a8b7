use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("unknown mode `{0}`")]
    UnknownMode(String),
    #[error("duplicate mode `{0}` in registry")]
    DuplicateMode(String),
    #[error("states are defined over different mode registries")]
    RegistryMismatch,
    #[error("more than one photon at location `{0}`")]
    MultiPhoton(String),
    #[error("state has no terms")]
    EmptyState,
    #[error("state is not normalized (norm {0})")]
    NotNormalized(f64),
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("{0}")]
    Domain(String),
    #[error("input has amplitude outside the which-path modes {{1,2}}")]
    SupportViolation,
    #[error("conditioning event has zero probability")]
    ZeroProbability,
    #[error("L/L0 = {0} is not a power of two")]
    NotPowerOfTwo(f64),
    #[error("zero block has no Schmidt rank")]
    ZeroBlock,
    #[error("operation changed the number of branches ({before} -> {after})")]
    BranchCountChanged { before: usize, after: usize },
}

pub(crate) fn check_unit(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason: "must lie in [0, 1]",
        })
    }
}

pub(crate) fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason: "must be positive and finite",
        })
    }
}
