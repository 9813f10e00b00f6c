//! Plain-text `key = value` files with `[section]` headers.
//!
//! Unknown sections and keys are rejected so typos surface as config errors.
//! Relative paths resolve against the directory of the file.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::{Ini, ParseOption, Properties};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ConfigFile {
    origin: String,
    base_dir: PathBuf,
    ini: Ini,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base, &path.display().to_string())
    }

    /// `origin` names the source in error messages.
    pub fn parse(text: &str, base_dir: &Path, origin: &str) -> Result<Self> {
        let opt = ParseOption {
            enabled_quote: false,
            enabled_escape: false,
            ..Default::default()
        };
        let ini = Ini::load_from_str_opt(text, opt)
            .map_err(|e| Error::Config(format!("{origin}:{e}")))?;
        Ok(ConfigFile {
            origin: origin.to_string(),
            base_dir: base_dir.to_path_buf(),
            ini,
        })
    }

    /// Fails on any section or key not listed in `schema`.
    pub fn check_schema(&self, schema: &[(&str, &[&str])]) -> Result<()> {
        for (name, props) in self.ini.iter() {
            let Some(name) = name else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(Error::Config(format!(
                        "{}: key {k:?} outside any section",
                        self.origin
                    )));
                }
                continue;
            };
            let Some((_, keys)) = schema.iter().find(|(s, _)| *s == name) else {
                return Err(Error::Config(format!(
                    "{}: unknown section [{name}]",
                    self.origin
                )));
            };
            for (k, _) in props.iter() {
                if !keys.contains(&k) {
                    return Err(Error::Config(format!(
                        "{}: unknown key {k:?} in [{name}]",
                        self.origin
                    )));
                }
                if props.get_all(k).count() > 1 {
                    return Err(Error::Config(format!(
                        "{}: key {k:?} repeated in [{name}]",
                        self.origin
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn section(&self, name: &str) -> Section<'_> {
        Section {
            file: self,
            name: name.to_string(),
            props: self.ini.section(Some(name)),
        }
    }
}

/// Typed accessors for one section; a missing section behaves as empty.
pub struct Section<'a> {
    file: &'a ConfigFile,
    name: String,
    props: Option<&'a Properties>,
}

impl Section<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        self.props.and_then(|p| p.get(key)).map(str::trim)
    }

    fn invalid(&self, key: &str, value: &str, why: impl Display) -> Error {
        Error::Config(format!(
            "{}: [{}] {key} = {value:?}: {why}",
            self.file.origin, self.name
        ))
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| self.invalid(key, v, e)))
            .transpose()
    }

    pub fn get_or<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.get(key)?.ok_or_else(|| {
            Error::Config(format!(
                "{}: missing [{}] {key}",
                self.file.origin, self.name
            ))
        })
    }

    /// Comma-separated list.
    pub fn list<T>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some(raw) = self.raw(key) else {
            return Ok(None);
        };
        raw.split(',')
            .map(|item| {
                item.trim()
                    .parse::<T>()
                    .map_err(|e| self.invalid(key, raw, e))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key)
            .filter(|v| !v.is_empty())
            .map(|v| self.file.base_dir.join(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCHEMA: &[(&str, &[&str])] = &[("a", &["x", "ys", "p"])];

    #[test]
    fn typed_values_and_paths() {
        let c = ConfigFile::parse(
            "[a]\nx = 3\nys = 0.5, 1.5\np = out\n",
            Path::new("/base"),
            "t",
        )
        .unwrap();
        c.check_schema(SCHEMA).unwrap();
        let s = c.section("a");
        assert_eq!(s.require::<usize>("x").unwrap(), 3);
        assert_eq!(s.list::<f64>("ys").unwrap(), Some(vec![0.5, 1.5]));
        assert_eq!(s.path("p"), Some(PathBuf::from("/base/out")));
        assert_eq!(s.get_or("missing", 7u32).unwrap(), 7);
        assert!(c.section("none").get::<f64>("x").unwrap().is_none());
    }

    #[test]
    fn errors_are_config_errors() {
        let bad = |text: &str| {
            let c = ConfigFile::parse(text, Path::new("."), "t");
            let e = c.and_then(|c| {
                c.check_schema(SCHEMA)?;
                c.section("a").require::<usize>("x").map(|_| ())
            });
            assert!(matches!(e, Err(Error::Config(_))), "{text:?}: {e:?}");
        };
        bad("[a]\nx = -1\n");
        bad("[a]\n");
        bad("[b]\nx = 1\n");
        bad("[a]\nz = 1\n");
        bad("x = 1\n[a]\nx = 1\n");
        bad("[a]\nx = 1\nx = 2\n");
        bad("[a\nx = 1\n");
    }
}
