use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("signature mismatch: {0}")]
    SignatureMismatch(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("relation `{name}` has arity {expected}, got {found}")]
    ArityMismatch {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("element {element} out of range for domain of size {domain_size}")]
    ElementOutOfRange { element: u32, domain_size: u32 },
    #[error("undeclared variable `{0}`")]
    UndeclaredVariable(String),
    #[error("duplicate name `{0}`")]
    Duplicate(String),
    #[error("invalid structure: {0}")]
    Invalid(String),
    #[error("variable `{0}` occurs in no constraint scope")]
    UnscopedVariable(String),
    #[error("index {index} out of range for arity {arity}")]
    IndexOutOfRange { index: usize, arity: usize },
    #[error("repeated variable `{0}` in implication tuple")]
    RepeatedVariable(String),
    #[error("interface mismatch: {0}")]
    InterfaceMismatch(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid witness: {0}")]
    InvalidWitness(String),
    #[error("improper parameters: {0}")]
    ImproperParameters(String),
    #[error("unknown built-in template `{0}`")]
    UnknownBuiltin(String),
    #[error("parse error at {line}:{col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn parse(line: usize, col: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            col,
            msg: msg.into(),
        }
    }
}
