use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A numeric argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Arguments are individually valid but do not fit together.
    #[error("usage error: {0}")]
    Usage(String),

    /// The privacy budget cannot be met for the given prior structure.
    #[error("infeasible privacy budget: epsilon = {epsilon}, penalty nu = {nu} at group {group} (need e^epsilon > nu)")]
    InfeasibleBudget { epsilon: f64, nu: f64, group: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Usage(msg.into()))
}
