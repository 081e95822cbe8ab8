use thiserror::Error;

use crate::model::Guid;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("type `{0}` is already registered")]
    DuplicateType(String),

    #[error("type `{0}` is not registered")]
    UnknownType(String),

    #[error("invalid descriptor for `{type_name}`: {reason}")]
    InvalidDescriptor { type_name: String, reason: String },

    #[error("method `{method}` of `{type_name}` has no binding")]
    MissingBinding { type_name: String, method: String },

    #[error("registry integrity: {0}")]
    RegistryIntegrity(String),

    #[error("`{concrete}` is not structurally compliant with `{interface}`: {reason}")]
    NonCompliant {
        concrete: String,
        interface: String,
        reason: String,
    },

    #[error("service name `{0}` is already in use")]
    NameInUse(String),

    #[error("GUID {0} is already allocated")]
    DuplicateGuid(Guid),

    #[error("no service `{0}`")]
    NotFound(String),

    #[error("method `{method}` is not in interface `{interface}`")]
    UnknownMethod { interface: String, method: String },

    #[error("bad arguments for `{method}`: {reason}")]
    ArgumentMismatch { method: String, reason: String },

    #[error("application fault {class}: {message}")]
    Application { class: String, message: String },

    #[error("network failure{}: {message}", if *.fast_fail { " (fast-fail)" } else { "" })]
    Network { message: String, fast_fail: bool },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("malformed policy rule: {0}")]
    MalformedRule(String),

    #[error("policy file line {line}, <{element}>: {message}")]
    PolicyFile {
        line: u32,
        element: String,
        message: String,
    },

    #[error("invalid endpoint: {0}")]
    InvalidEndpoint(String),

    #[error("invalid GUID text `{0}`")]
    InvalidGuid(String),

    #[error("startup failed: {0}")]
    Startup(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wire fault kind this error travels as.
    pub fn fault_kind(&self) -> &'static str {
        match self {
            Error::Application { .. } => "application",
            Error::Network { .. } => "network",
            _ => "protocol",
        }
    }

    pub fn is_network(&self) -> bool {
        matches!(self, Error::Network { .. })
    }

    pub(crate) fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }
}
