use std::fmt;

/// Error classes signalled by MiniLisp code. Backends must agree on the
/// class for any given program; the message is informational.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ErrorKind {
    WrongTypeArgument,
    WrongNumberOfArguments,
    VoidVariable,
    VoidFunction,
    InvalidFunction,
    SettingConstant,
    OverflowError,
    ArithError,
    ExcessiveNesting,
    /// Raised by the `error` primitive.
    User,
}

impl ErrorKind {
    pub fn symbol_name(self) -> &'static str {
        match self {
            ErrorKind::WrongTypeArgument => "wrong-type-argument",
            ErrorKind::WrongNumberOfArguments => "wrong-number-of-arguments",
            ErrorKind::VoidVariable => "void-variable",
            ErrorKind::VoidFunction => "void-function",
            ErrorKind::InvalidFunction => "invalid-function",
            ErrorKind::SettingConstant => "setting-constant",
            ErrorKind::OverflowError => "overflow-error",
            ErrorKind::ArithError => "arith-error",
            ErrorKind::ExcessiveNesting => "excessive-lisp-nesting",
            ErrorKind::User => "error",
        }
    }

    pub fn from_symbol_name(name: &str) -> Option<ErrorKind> {
        use ErrorKind::*;
        [
            WrongTypeArgument,
            WrongNumberOfArguments,
            VoidVariable,
            VoidFunction,
            InvalidFunction,
            SettingConstant,
            OverflowError,
            ArithError,
            ExcessiveNesting,
            User,
        ]
        .into_iter()
        .find(|k| k.symbol_name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LispError {
    pub kind: ErrorKind,
    pub message: String,
}

impl LispError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        LispError { kind, message: message.into() }
    }

    pub fn wrong_type(predicate: &str, culprit: impl fmt::Display) -> Self {
        LispError::new(ErrorKind::WrongTypeArgument, format!("({predicate} {culprit})"))
    }

    pub fn wrong_args(name: impl fmt::Display, got: usize) -> Self {
        LispError::new(ErrorKind::WrongNumberOfArguments, format!("({name} {got})"))
    }
}

impl fmt::Display for LispError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.symbol_name(), self.message)
    }
}

impl std::error::Error for LispError {}

pub type LispResult<T> = Result<T, LispError>;
