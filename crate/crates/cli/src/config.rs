//! Config file handling, flag overrides and error classification.

use std::fmt;
use std::path::Path;

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// An error caused by the invocation (bad input, missing file, invalid
/// setting) rather than by the program. Maps to exit code 1.
#[derive(Debug)]
pub struct UserError(pub String);

impl fmt::Display for UserError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

pub trait UserContext<T> {
    /// Mark a failure as the user's, with a message naming what was wrong.
    fn user(self, what: impl fmt::Display) -> anyhow::Result<T>;
}

impl<T, E: fmt::Display> UserContext<T> for Result<T, E> {
    fn user(self, what: impl fmt::Display) -> anyhow::Result<T> {
        self.map_err(|e| anyhow::Error::new(UserError(format!("{what}: {e}"))))
    }
}

pub fn user_error(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UserError(msg.into()))
}

/// Parsed `--config` file: one table per subcommand.
#[derive(Debug, Default)]
pub struct ConfigFile {
    table: toml::Table,
}

impl ConfigFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).user(format!("reading config {}", path.display()))?;
        let table = text.parse::<toml::Table>().user(format!("parsing config {}", path.display()))?;
        Ok(ConfigFile { table })
    }

    /// The `[name]` table as `T`, or `T::default()` when absent.
    pub fn section<T: DeserializeOwned + Default>(&self, name: &str) -> anyhow::Result<T> {
        match self.table.get(name) {
            None => Ok(T::default()),
            Some(v) => v.clone().try_into().user(format!("config table [{name}]")),
        }
    }
}

/// Log the fully resolved settings of a run.
pub fn log_resolved<T: Serialize>(stage: &str, settings: &T) -> anyhow::Result<()> {
    let json = serde_json::to_string(settings).context("serialising resolved config")?;
    log::info!("{stage} config: {json}");
    Ok(())
}

/// `overrides!(settings, args; a, b)` sets `settings.a = v` for every
/// `Some(v)` in `args.a`, and so on.
macro_rules! overrides {
    ($settings:expr, $args:expr; $($field:ident),* $(,)?) => {
        $(if let Some(v) = $args.$field.clone() {
            $settings.$field = v.into();
        })*
    };
}
pub(crate) use overrides;

/// Require a setting that may come from either the file or a flag.
pub fn required<T: Clone>(value: &Option<T>, name: &str) -> anyhow::Result<T> {
    value.clone().ok_or_else(|| user_error(format!("`{name}` is required (flag or config file)")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Default, PartialEq, serde::Deserialize)]
    #[serde(default)]
    struct S {
        steps: u64,
        name: String,
    }

    #[test]
    fn missing_section_is_default() {
        let c = ConfigFile::default();
        assert_eq!(c.section::<S>("x").unwrap(), S::default());
    }

    #[test]
    fn section_is_read_and_overridden() {
        let c = ConfigFile { table: "[x]\nsteps = 5\nname = \"a\"".parse().unwrap() };
        let mut s: S = c.section("x").unwrap();
        assert_eq!(s.steps, 5);
        struct Args {
            steps: Option<u64>,
            name: Option<String>,
        }
        let a = Args { steps: Some(9), name: None };
        overrides!(s, a; steps, name);
        assert_eq!(s, S { steps: 9, name: "a".into() });
    }

    #[test]
    fn bad_section_is_a_user_error() {
        let c = ConfigFile { table: "[x]\nsteps = \"many\"".parse().unwrap() };
        let e = c.section::<S>("x").unwrap_err();
        assert!(e.is::<UserError>());
    }
}
