//! Key-value run configuration: a file of `key = value` lines, then flags.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

#[derive(Debug, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    /// Every setting consulted, with the value in effect.
    effective: RefCell<BTreeMap<String, String>>,
}

pub fn parse_text(text: &str, origin: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("{origin}:{}: expected `key = value`", k + 1)))?;
        let key = key.trim().replace('-', "_");
        if key.is_empty() {
            return Err(CliError::Input(format!("{origin}:{}: empty key", k + 1)));
        }
        out.insert(key, value.trim().to_string());
    }
    Ok(out)
}

impl RunConfig {
    /// File settings overlaid by flags.
    pub fn load(file: Option<&Path>, flags: BTreeMap<String, String>) -> Result<Self, CliError> {
        let mut values = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Input(format!("config {}: {e}", p.display())))?;
                parse_text(&text, &p.display().to_string())?
            }
            None => BTreeMap::new(),
        };
        values.extend(flags);
        Ok(Self { values, effective: RefCell::default() })
    }

    fn record(&self, key: &str, value: String) {
        self.effective.borrow_mut().insert(key.to_string(), value);
    }

    fn parse<T: FromStr>(&self, key: &str, raw: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        raw.parse().map_err(|e| CliError::Input(format!("setting {key} = {raw:?}: {e}")))
    }

    pub fn get<T: FromStr + Display>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let v = match self.values.get(key) {
            Some(raw) => self.parse(key, raw)?,
            None => default,
        };
        self.record(key, v.to_string());
        Ok(v)
    }

    pub fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        match self.values.get(key) {
            Some(raw) => {
                self.record(key, raw.clone());
                Ok(Some(self.parse(key, raw)?))
            }
            None => Ok(None),
        }
    }

    pub fn req<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        self.opt(key)?.ok_or_else(|| CliError::Input(format!("missing required setting {key}")))
    }

    pub fn flag(&self, key: &str) -> Result<bool, CliError> {
        self.get(key, false)
    }

    /// Comma-separated list, e.g. `0.2,0.3`.
    pub fn list<T: FromStr + Display>(&self, key: &str, default: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: Display,
    {
        let raw = self.values.get(key).map_or(default, String::as_str).to_string();
        self.record(key, raw.clone());
        raw.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| self.parse(key, s)).collect()
    }

    /// Record a derived setting so it appears in the echo.
    pub fn note(&self, key: &str, value: impl Display) {
        self.record(key, value.to_string());
    }

    /// Fails on settings that the command never consulted.
    pub fn reject_unused(&self) -> Result<(), CliError> {
        let used = self.effective.borrow();
        let unused: Vec<&str> = self.values.keys().filter(|k| !used.contains_key(*k)).map(String::as_str).collect();
        if unused.is_empty() {
            Ok(())
        } else {
            Err(CliError::Input(format!("unknown setting(s) for this command: {}", unused.join(", "))))
        }
    }

    pub fn echo(&self) -> BTreeMap<String, String> {
        self.effective.borrow().clone()
    }

    pub fn echo_comments(&self) -> String {
        self.echo().iter().map(|(k, v)| format!("# {k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flags() {
        let file = parse_text("# comment\nh = 0.3\nseed=4\n\nspec-name = trig\n", "f").unwrap();
        assert_eq!(file["spec_name"], "trig");
        let mut flags = BTreeMap::new();
        flags.insert("h".to_string(), "0.5".to_string());
        let mut cfg = RunConfig { values: file, effective: RefCell::default() };
        cfg.values.extend(flags);
        assert_eq!(cfg.get("h", 0.1).unwrap(), 0.5);
        assert_eq!(cfg.get("seed", 0u64).unwrap(), 4);
        assert_eq!(cfg.get("grid", 100usize).unwrap(), 100);
        assert!(cfg.reject_unused().is_err());
        assert_eq!(cfg.get::<String>("spec_name", "x".into()).unwrap(), "trig");
        cfg.reject_unused().unwrap();
        assert_eq!(cfg.echo_comments(), "# grid = 100\n# h = 0.5\n# seed = 4\n# spec_name = trig\n");
    }

    #[test]
    fn malformed_lines_are_input_errors() {
        assert!(matches!(parse_text("h 0.3", "f"), Err(CliError::Input(m)) if m.contains("f:1")));
        let cfg = RunConfig { values: parse_text("h = abc", "f").unwrap(), effective: RefCell::default() };
        assert!(cfg.get("h", 0.3).is_err());
    }
}
