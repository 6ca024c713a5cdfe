//! Process exit codes: 0 ok, 1 usage, 2 data, 3 verification failure.

use std::fmt;

use mixnet::Error;

pub const USAGE: i32 = 1;
pub const DATA: i32 = 2;
pub const VERIFY: i32 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub msg: String,
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Failure { code: USAGE, msg: msg.into() }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Failure { code: DATA, msg: msg.into() }
    }

    pub fn verify(msg: impl Into<String>) -> Self {
        Failure { code: VERIFY, msg: msg.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Usage(_) | Error::Config(_) | Error::Policy(_) => USAGE,
            _ => DATA,
        };
        Failure { code, msg: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::data(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::data(e.to_string())
    }
}
