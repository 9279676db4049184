use std::fmt;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use segqual::Error;

pub const SEED_ENV: &str = "SEGQUAL_SEED";

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    CheckFailed = 1,
    Config = 2,
    Io = 3,
    Diverged = 4,
    Mismatch = 5,
}

#[derive(Debug)]
pub struct Failure {
    pub exit: Exit,
    pub message: String,
}

impl Failure {
    pub fn new(exit: Exit, message: impl Into<String>) -> Self {
        Self {
            exit,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Exit::Config, message)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let exit = match &e {
            Error::InvalidInput(_) => Exit::Config,
            Error::Io { .. } | Error::Parse { .. } | Error::ModelFormat(_) => Exit::Io,
            Error::Diverged { .. } => Exit::Diverged,
            Error::DimensionMismatch { .. } | Error::MissingSegmenter { .. } => Exit::Mismatch,
            Error::EmptyMask | Error::UndefinedCorrelation(_) | Error::AmbiguousProbe { .. } => Exit::CheckFailed,
        };
        Self::new(exit, e.to_string())
    }
}

pub type CliResult<T> = Result<T, Failure>;

/// Builds a command's resolved config: the optional JSON file first, then
/// every flag the user actually set. Unknown keys in the file are rejected.
pub fn resolve<C>(file: Option<&Path>, flags: &impl Serialize) -> CliResult<C>
where
    C: DeserializeOwned,
{
    let mut merged = match file {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::new(Exit::Io, format!("cannot read config {}: {e}", path.display())))?;
            match serde_json::from_str(&text) {
                Ok(Value::Object(map)) => map,
                Ok(_) => {
                    return Err(Failure::config(format!(
                        "config {} must be a JSON object",
                        path.display()
                    )))
                }
                Err(e) => return Err(Failure::config(format!("config {}: {e}", path.display()))),
            }
        }
        None => Map::new(),
    };
    let Value::Object(set) = serde_json::to_value(flags).expect("flags serialize") else {
        unreachable!("flag structs serialize to objects")
    };
    for (k, v) in set {
        if k != "config" && !matches!(v, Value::Null | Value::Bool(false)) {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| Failure::config(format!("invalid configuration: {e}")))
}

/// The explicit seed, else `SEGQUAL_SEED`, else 0.
pub fn seed_or_env(seed: Option<u64>) -> CliResult<u64> {
    if let Some(s) = seed {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

pub fn require<'a, T>(value: &'a Option<T>, flag: &str) -> CliResult<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| Failure::config(format!("missing required option --{flag}")))
}
