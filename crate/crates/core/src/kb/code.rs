use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{raw:?} is not an ICD-10-CM code")]
pub struct CodeShapeError {
    pub raw: String,
}

/// A shape-valid ICD-10-CM identifier in canonical form: uppercase, with a
/// dot after the third character when longer than three characters
/// (`D62`, `I25.10`).
///
/// Shape validity says nothing about membership in a particular
/// [`super::CodeHierarchy`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Code(String);

impl Code {
    /// Trims, uppercases and inserts the dot if it is missing.
    ///
    /// Accepts `i2510`, `I25.10`, ` I25.10 `; rejects anything that is not a
    /// letter, a digit and an alphanumeric, then optionally one to four more
    /// alphanumerics. The digit in second position is what every ICD-10-CM
    /// code has, and it keeps words like `HELLO` from passing as `HEL.LO`.
    pub fn parse(raw: &str) -> Result<Self, CodeShapeError> {
        let err = || CodeShapeError {
            raw: raw.to_string(),
        };
        let upper = raw.trim().to_ascii_uppercase();
        if !upper.is_ascii() {
            return Err(err());
        }
        let (head, tail) = match upper.split_once('.') {
            Some((head, tail)) => {
                if tail.is_empty() {
                    return Err(err());
                }
                (head, tail)
            }
            None if upper.len() > 3 => upper.split_at(3),
            None => (upper.as_str(), ""),
        };
        let head_ok = head.len() == 3
            && head.as_bytes()[0].is_ascii_uppercase()
            && head.as_bytes()[1].is_ascii_digit()
            && head.bytes().all(|b| b.is_ascii_alphanumeric());
        let tail_ok = tail.len() <= 4 && tail.bytes().all(|b| b.is_ascii_alphanumeric());
        if !head_ok || !tail_ok {
            return Err(err());
        }
        if tail.is_empty() {
            Ok(Code(head.to_string()))
        } else {
            Ok(Code(format!("{head}.{tail}")))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The code without its dot, as it appears in the CMS order file.
    pub fn dotless(&self) -> String {
        self.0.replace('.', "")
    }

    /// Three-character category (`I25` for `I25.10`).
    pub fn category(&self) -> &str {
        &self.0[..3]
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for Code {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl std::borrow::Borrow<str> for Code {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Code {
    type Error = CodeShapeError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Code::parse(&value)
    }
}

impl From<Code> for String {
    fn from(code: Code) -> Self {
        code.0
    }
}

impl std::str::FromStr for Code {
    type Err = CodeShapeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Code::parse(s)
    }
}
