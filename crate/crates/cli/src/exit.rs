//! Mapping of failures onto the exit-code contract.

use polyforge::eval::EvalError;
use polyforge::selfinstruct::SelfInstructError;

pub const USAGE: i32 = 1;
pub const DATA: i32 = 2;
pub const BACKEND: i32 = 3;

#[derive(Debug)]
pub struct Fail {
    pub code: i32,
    pub error: anyhow::Error,
}

pub type Outcome = Result<(), Fail>;

pub fn usage(msg: impl Into<String>) -> Fail {
    Fail { code: USAGE, error: anyhow::anyhow!(msg.into()) }
}

pub fn backend(e: impl Into<anyhow::Error>) -> Fail {
    Fail { code: BACKEND, error: e.into() }
}

/// Marks any error as a data error.
pub trait OrData<T> {
    fn data(self) -> Result<T, Fail>;
    fn data_ctx(self, ctx: &str) -> Result<T, Fail>;
}

impl<T, E: Into<anyhow::Error>> OrData<T> for Result<T, E> {
    fn data(self) -> Result<T, Fail> {
        self.map_err(|e| Fail { code: DATA, error: e.into() })
    }

    fn data_ctx(self, ctx: &str) -> Result<T, Fail> {
        self.map_err(|e| Fail { code: DATA, error: e.into().context(ctx.to_owned()) })
    }
}

pub fn from_selfinstruct(e: SelfInstructError) -> Fail {
    match e {
        SelfInstructError::Backend(_) => backend(e),
        SelfInstructError::Config(_) | SelfInstructError::UnsupportedLanguage(_) => {
            Fail { code: USAGE, error: e.into() }
        }
        other => Fail { code: DATA, error: other.into() },
    }
}

pub fn from_eval(e: EvalError) -> Fail {
    match e {
        EvalError::Backend(_) => backend(e),
        EvalError::UnknownTask(_) | EvalError::TooManyShots(_) => Fail { code: USAGE, error: e.into() },
        other => Fail { code: DATA, error: other.into() },
    }
}
