//! INI-like config files: `[section]` headers, `key = value` pairs,
//! `#` or `;` comments. Typed getters with defaults, and strict key
//! checking so typos fail loudly instead of silently running defaults.

use std::collections::BTreeMap;

use crate::error::SimError;

#[derive(Debug, Clone, Default)]
pub struct IniConfig {
    /// (section, key) -> value; top-level keys live in section "".
    entries: BTreeMap<(String, String), String>,
}

impl IniConfig {
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = match raw.find(['#', ';']) {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| SimError::Config(format!("line {}: unterminated section header", ln + 1)))?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| SimError::Config(format!("line {}: expected key = value", ln + 1)))?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(SimError::Config(format!("line {}: empty key", ln + 1)));
            }
            if entries
                .insert((section.clone(), key.clone()), value.trim().to_string())
                .is_some()
            {
                return Err(SimError::Config(format!(
                    "line {}: duplicate key {key} in section [{section}]",
                    ln + 1
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.entries
            .get(&(section.to_string(), key.to_string()))
            .map(|s| s.as_str())
    }

    fn parsed<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>, SimError> {
        match self.get(section, key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| {
                SimError::Config(format!("[{section}] {key} = {raw}: cannot parse"))
            }),
        }
    }

    pub fn f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64, SimError> {
        Ok(self.parsed(section, key)?.unwrap_or(default))
    }

    pub fn u64_or(&self, section: &str, key: &str, default: u64) -> Result<u64, SimError> {
        Ok(self.parsed(section, key)?.unwrap_or(default))
    }

    pub fn usize_or(&self, section: &str, key: &str, default: usize) -> Result<usize, SimError> {
        Ok(self.parsed(section, key)?.unwrap_or(default))
    }

    pub fn bool_or(&self, section: &str, key: &str, default: bool) -> Result<bool, SimError> {
        Ok(self.parsed(section, key)?.unwrap_or(default))
    }

    pub fn str_or<'a>(&'a self, section: &str, key: &str, default: &'a str) -> &'a str {
        self.get(section, key).unwrap_or(default)
    }

    /// Comma-separated float list.
    pub fn f64_list_or(
        &self,
        section: &str,
        key: &str,
        default: &[f64],
    ) -> Result<Vec<f64>, SimError> {
        match self.get(section, key) {
            None => Ok(default.to_vec()),
            Some(raw) => raw
                .split(',')
                .map(|s| {
                    s.trim().parse().map_err(|_| {
                        SimError::Config(format!("[{section}] {key}: bad list entry {s:?}"))
                    })
                })
                .collect(),
        }
    }

    /// Rejects any (section, key) not in the allowed list, so misspelled
    /// options cannot silently fall back to defaults.
    pub fn check_known(&self, allowed: &[(&str, &str)]) -> Result<(), SimError> {
        for (section, key) in self.entries.keys() {
            if !allowed.iter().any(|(s, k)| s == section && k == key) {
                return Err(SimError::Config(format!(
                    "unknown option {key} in section [{section}]"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "
# study knobs
seed = 7
[sweep]
heights_m = 1.5, 50, 75.0   ; meters
enabled = true
label = macro downlink
";

    #[test]
    fn parses_sections_comments_and_types() {
        let cfg = IniConfig::parse(SAMPLE).unwrap();
        assert_eq!(cfg.u64_or("", "seed", 1).unwrap(), 7);
        assert_eq!(
            cfg.f64_list_or("sweep", "heights_m", &[]).unwrap(),
            vec![1.5, 50.0, 75.0]
        );
        assert!(cfg.bool_or("sweep", "enabled", false).unwrap());
        assert_eq!(cfg.str_or("sweep", "label", ""), "macro downlink");
        assert_eq!(cfg.f64_or("sweep", "missing", 2.5).unwrap(), 2.5);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(IniConfig::parse("[unclosed\n").is_err());
        assert!(IniConfig::parse("no equals sign\n").is_err());
        assert!(IniConfig::parse("a = 1\na = 2\n").is_err());
        let cfg = IniConfig::parse("x = notanumber").unwrap();
        assert!(cfg.f64_or("", "x", 0.0).is_err());
    }

    #[test]
    fn unknown_keys_are_flagged() {
        let cfg = IniConfig::parse("[sweep]\nhieghts_m = 1.5").unwrap();
        assert!(cfg.check_known(&[("sweep", "heights_m")]).is_err());
        let cfg = IniConfig::parse("[sweep]\nheights_m = 1.5").unwrap();
        cfg.check_known(&[("sweep", "heights_m")]).unwrap();
    }
}
