use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_error, HarnessError};
use crate::models::DEFAULT_LENGTH_RATIO_CAP;

/// Which model a sweep decodes with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Identity transducer over the source vocabulary.
    Echo,
    Lookahead {
        /// Tab-separated `source<TAB>target` lines. May be omitted when the
        /// sweep generates a synthetic corpus, whose table is then used.
        #[serde(default)]
        table: Option<PathBuf>,
        lookahead: usize,
        sharpness: f64,
        #[serde(default = "default_unknown")]
        default_token: String,
        #[serde(default)]
        anticipation: Option<usize>,
    },
    Subprocess {
        command: String,
        #[serde(default)]
        timeout_secs: Option<f64>,
        #[serde(default)]
        top_k: Option<usize>,
    },
}

fn default_unknown() -> String {
    "<unk>".into()
}

/// Synthetic corpus generated into `<output>/corpus` before decoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub sentences: usize,
    #[serde(default = "default_min_len")]
    pub min_len: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default = "default_alphabet")]
    pub alphabet: Vec<String>,
}

fn default_min_len() -> usize {
    4
}

fn default_max_len() -> usize {
    10
}

pub(crate) fn default_alphabet() -> Vec<String> {
    ["a", "b", "c", "d", "e"].map(String::from).to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub source: Option<PathBuf>,
    #[serde(default)]
    pub references: Vec<PathBuf>,
    pub output: PathBuf,
    pub model: ModelSpec,
    #[serde(default)]
    pub k: Vec<usize>,
    #[serde(default)]
    pub rho: Vec<f64>,
    #[serde(default = "default_windows")]
    pub window: Vec<usize>,
    #[serde(default = "default_beams")]
    pub beam: Vec<usize>,
    #[serde(default)]
    pub include_retranslation: bool,
    #[serde(default)]
    pub include_fullsentence: bool,
    #[serde(default = "default_ratio")]
    pub length_ratio_cap: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
}

fn default_windows() -> Vec<usize> {
    vec![0]
}

fn default_beams() -> Vec<usize> {
    vec![1]
}

fn default_ratio() -> f64 {
    DEFAULT_LENGTH_RATIO_CAP
}

impl SweepConfig {
    /// A config with default grid values and no corpus or policies yet.
    pub fn new(output: PathBuf, model: ModelSpec) -> Self {
        SweepConfig {
            source: None,
            references: Vec::new(),
            output,
            model,
            k: Vec::new(),
            rho: Vec::new(),
            window: default_windows(),
            beam: default_beams(),
            include_retranslation: false,
            include_fullsentence: false,
            length_ratio_cap: default_ratio(),
            seed: 0,
            synthetic: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(io_error(path))?;
        let mut config = Self::from_toml_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        config.resolve_relative_to(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    /// Makes relative paths relative to `base` (the config file's directory).
    pub fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.source.as_mut() {
            fix(p);
        }
        self.references.iter_mut().for_each(fix);
        fix(&mut self.output);
        if let ModelSpec::Lookahead {
            table: Some(table), ..
        } = &mut self.model
        {
            fix(table);
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: &str| Err(HarnessError::Config(m.into()));
        if self.k.is_empty() && self.rho.is_empty() {
            return fail("at least one k or rho value is required");
        }
        if self.k.contains(&0) {
            return fail("k must be >= 1");
        }
        if self.rho.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return fail("rho must be finite and non-negative");
        }
        if self.window.is_empty() {
            return fail("window list is empty");
        }
        if self.beam.is_empty() || self.beam.contains(&0) {
            return fail("beam list must be non-empty with every width >= 1");
        }
        if !(self.length_ratio_cap.is_finite() && self.length_ratio_cap > 0.0) {
            return fail("length_ratio_cap must be positive");
        }
        match &self.synthetic {
            Some(syn) => {
                if syn.sentences == 0 || syn.min_len == 0 || syn.min_len > syn.max_len {
                    return fail("synthetic corpus needs sentences >= 1 and 1 <= min_len <= max_len");
                }
                if syn.alphabet.is_empty() {
                    return fail("synthetic alphabet is empty");
                }
            }
            None => {
                if self.source.is_none() {
                    return fail("no source corpus given");
                }
                if self.references.is_empty() {
                    return fail("at least one reference file is required");
                }
                if let ModelSpec::Lookahead { table: None, .. } = self.model {
                    return fail("lookahead model needs a table");
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let cfg = SweepConfig::from_toml_str(
            r#"
            output = "out"
            seed = 3
            k = [1, 3]
            window = [0, 3]
            beam = [1, 5]
            include_retranslation = true

            [model]
            kind = "lookahead"
            lookahead = 2
            sharpness = 0.7

            [synthetic]
            sentences = 10
            "#,
        )
        .unwrap();
        assert_eq!(cfg.k, [1, 3]);
        assert!(cfg.include_retranslation && !cfg.include_fullsentence);
        assert_eq!(cfg.synthetic.as_ref().unwrap().alphabet.len(), 5);
        assert!(matches!(
            cfg.model,
            ModelSpec::Lookahead { lookahead: 2, ref default_token, .. } if default_token == "<unk>"
        ));
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let base = "output = \"o\"\nsource = \"s\"\nreferences = [\"r\"]\n[model]\nkind = \"echo\"\n";
        let cfg = SweepConfig::from_toml_str(base).unwrap();
        assert!(cfg.validate().is_err(), "no policy grid");
        let mut ok = cfg.clone();
        ok.k = vec![1];
        ok.validate().unwrap();
        let mut bad = ok.clone();
        bad.beam = vec![0];
        assert!(bad.validate().is_err());
        let mut bad = ok;
        bad.window.clear();
        assert!(bad.validate().is_err());
        assert!(SweepConfig::from_toml_str("output = \"o\"\nbogus = 1\n[model]\nkind = \"echo\"").is_err());
    }
}
