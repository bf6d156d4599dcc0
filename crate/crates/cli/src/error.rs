//! Machine-readable failures printed as JSON on stderr.

use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorKind {
    /// Config file or flag does not match the schema.
    Config,
    /// A parameter is outside its valid range.
    Domain,
    /// A numerical routine could not complete.
    Numerical,
    Io,
    /// The acceptance suite ran and at least one tolerance was exceeded.
    Verification,
}

#[derive(Clone, Debug, Serialize)]
pub struct CliError {
    pub kind: ErrorKind,
    /// Location in the config, such as `params.distortions[2]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    pub message: String,
}

impl CliError {
    pub fn config(path: Option<String>, message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Config, path, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Io, path: None, message: message.into() }
    }

    pub fn verification(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Verification, path: None, message: message.into() }
    }

    /// Attaches a config location unless one is already known.
    pub fn at(mut self, path: impl Into<String>) -> Self {
        self.path.get_or_insert_with(|| path.into());
        self
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Config | ErrorKind::Domain => 2,
            ErrorKind::Verification => 3,
            ErrorKind::Numerical | ErrorKind::Io => 1,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl From<gausspred::Error> for CliError {
    fn from(e: gausspred::Error) -> Self {
        use gausspred::Error as E;
        let kind = match e {
            E::Domain { .. } | E::InvalidParameter(_) | E::InvalidSpectrum(_) | E::Resolution { .. } | E::SignalTooShort { .. } => {
                ErrorKind::Domain
            }
            _ => ErrorKind::Numerical,
        };
        Self { kind, path: None, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::io(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_kind() {
        assert_eq!(CliError::config(None, "x").exit_code(), 2);
        assert_eq!(CliError::verification("x").exit_code(), 3);
        assert_eq!(CliError::io("x").exit_code(), 1);
    }

    #[test]
    fn json_envelope() {
        let e = CliError::config(None, "bad").at("params.d_min").at("ignored");
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(v["error"]["kind"], "config");
        assert_eq!(v["error"]["path"], "params.d_min");
        let v: serde_json::Value = serde_json::from_str(&CliError::io("gone").to_json()).unwrap();
        assert!(v["error"].get("path").is_none());
    }
}
