//! Run configuration files.
//!
//! ```toml
//! [data]
//! image_size = 64
//! [model]
//! stages = [[2, 16], [2, 32], [2, 64]]
//! latent_channels = 32
//! [source_train]
//! learning_rate = 1e-3
//! [adapt]
//! encoder_lr = 1e-6
//! [eval]
//! threshold = 0.5
//! ```
//!
//! Every key is optional. Unknown sections, unknown keys and mistyped values
//! are all reported together.

use std::path::Path;

use satl_core::losses::Reduction;
use satl_core::metrics::DEFAULT_THRESHOLD;
use satl_core::models::EncoderConfig;
use satl_core::pipeline::{AdaptConfig, SourceTrainConfig};
use satl_core::{Error, Result};
use toml::{Table, Value};

pub const SEED_ENV: &str = "SATL_SEED";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub image_size: usize,
    pub encoder: EncoderConfig,
    pub source: SourceTrainConfig,
    pub adapt: AdaptConfig,
    pub threshold: f64,
    /// Whether each phase's seed was set in the file.
    seeds_given: (bool, bool),
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            image_size: 64,
            encoder: EncoderConfig::default(),
            source: SourceTrainConfig::default(),
            adapt: AdaptConfig::default(),
            threshold: DEFAULT_THRESHOLD,
            seeds_given: (false, false),
        }
    }
}

struct Reader<'a> {
    section: &'a str,
    table: &'a Table,
    problems: &'a mut Vec<String>,
}

impl Reader<'_> {
    fn bad(&mut self, key: &str, want: &str, got: &Value) {
        self.problems
            .push(format!("[{}].{key}: expected {want}, found {}", self.section, got.type_str()));
    }

    fn float(&mut self, key: &str, slot: &mut f64) {
        match self.table.get(key) {
            None => {}
            Some(Value::Float(v)) => *slot = *v,
            Some(Value::Integer(v)) => *slot = *v as f64,
            Some(other) => self.bad(key, "a number", other),
        }
    }

    fn uint<T: TryFrom<i64>>(&mut self, key: &str, slot: &mut T) -> bool {
        match self.table.get(key) {
            None => false,
            Some(Value::Integer(v)) => match T::try_from(*v) {
                Ok(x) if *v >= 0 => {
                    *slot = x;
                    true
                }
                _ => {
                    self.problems
                        .push(format!("[{}].{key}: {v} is out of range", self.section));
                    false
                }
            },
            Some(other) => {
                self.bad(key, "a non-negative integer", other);
                false
            }
        }
    }

    fn boolean(&mut self, key: &str, slot: &mut bool) {
        match self.table.get(key) {
            None => {}
            Some(Value::Boolean(v)) => *slot = *v,
            Some(other) => self.bad(key, "true or false", other),
        }
    }

    fn reduction(&mut self, key: &str, slot: &mut Reduction) {
        match self.table.get(key) {
            None => {}
            Some(Value::String(s)) if s == "mean" => *slot = Reduction::Mean,
            Some(Value::String(s)) if s == "sum" => *slot = Reduction::Sum,
            Some(other) => self.bad(key, "\"mean\" or \"sum\"", other),
        }
    }

    fn stages(&mut self, key: &str) -> Option<Vec<(usize, usize)>> {
        let value = self.table.get(key)?;
        let parsed = value.as_array().and_then(|stages| {
            stages
                .iter()
                .map(|s| match s.as_array().map(|p| p.as_slice()) {
                    Some([Value::Integer(convs), Value::Integer(ch)]) if *convs > 0 && *ch > 0 => {
                        Some((*convs as usize, *ch as usize))
                    }
                    _ => None,
                })
                .collect::<Option<Vec<_>>>()
        });
        match parsed {
            Some(stages) if !stages.is_empty() => Some(stages),
            _ => {
                self.problems.push(format!(
                    "[{}].{key}: expected a non-empty list of [convs, channels] pairs of positive integers",
                    self.section
                ));
                None
            }
        }
    }

    fn unknown(&mut self, known: &[&str]) {
        for key in self.table.keys() {
            if !known.contains(&key.as_str()) {
                self.problems.push(format!("[{}].{key}: unknown key", self.section));
            }
        }
    }
}

const SECTIONS: [(&str, &[&str]); 5] = [
    ("data", &["image_size"]),
    ("model", &["stages", "latent_channels"]),
    (
        "source_train",
        &["learning_rate", "weight_decay", "batch_size", "epochs", "train_fraction", "seed"],
    ),
    (
        "adapt",
        &[
            "encoder_lr",
            "other_lr",
            "epochs",
            "batch_size",
            "alpha",
            "beta1",
            "beta2",
            "reduction",
            "seed",
            "allow_fast_encoder",
        ],
    ),
    ("eval", &["threshold"]),
];

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let doc: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config(format!("not valid TOML: {}", e.message())))?;
        let mut problems = Vec::new();
        let mut cfg = RunConfig::default();
        let empty = Table::new();
        for (name, value) in &doc {
            match (SECTIONS.iter().find(|(s, _)| s == name), value) {
                (None, _) => problems.push(format!("[{name}]: unknown section")),
                (Some(_), Value::Table(_)) => {}
                (Some(_), other) => problems.push(format!("[{name}]: expected a table, found {}", other.type_str())),
            }
        }
        let section = |name: &str| doc.get(name).and_then(Value::as_table).unwrap_or(&empty);

        let mut stages = None;
        for (name, known) in SECTIONS {
            let mut r = Reader {
                section: name,
                table: section(name),
                problems: &mut problems,
            };
            r.unknown(known);
            match name {
                "data" => {
                    r.uint("image_size", &mut cfg.image_size);
                }
                "model" => {
                    stages = r.stages("stages");
                    r.uint("latent_channels", &mut cfg.adapt.latent_channels);
                }
                "source_train" => {
                    let s = &mut cfg.source;
                    r.float("learning_rate", &mut s.learning_rate);
                    r.float("weight_decay", &mut s.weight_decay);
                    r.uint("batch_size", &mut s.batch_size);
                    r.uint("epochs", &mut s.epochs);
                    r.float("train_fraction", &mut s.train_fraction);
                    cfg.seeds_given.0 = r.uint("seed", &mut s.seed);
                }
                "adapt" => {
                    let a = &mut cfg.adapt;
                    r.float("encoder_lr", &mut a.encoder_lr);
                    r.float("other_lr", &mut a.other_lr);
                    r.uint("epochs", &mut a.epochs);
                    r.uint("batch_size", &mut a.batch_size);
                    r.float("alpha", &mut a.weights.alpha);
                    r.float("beta1", &mut a.weights.beta1);
                    r.float("beta2", &mut a.weights.beta2);
                    r.reduction("reduction", &mut a.weights.reduction);
                    cfg.seeds_given.1 = r.uint("seed", &mut a.seed);
                    r.boolean("allow_fast_encoder", &mut a.allow_fast_encoder);
                }
                _ => r.float("threshold", &mut cfg.threshold),
            }
        }
        let stages = stages.unwrap_or_else(|| {
            EncoderConfig::default()
                .stages
                .iter()
                .map(|s| (s.convs, s.channels))
                .collect()
        });
        cfg.encoder = EncoderConfig::new((3, cfg.image_size, cfg.image_size), &stages);
        if problems.is_empty() {
            for check in [
                cfg.encoder.validate(),
                cfg.source.validate(),
                cfg.adapt.validate(),
            ] {
                if let Err(Error::Config(p)) = check {
                    problems.extend(p);
                }
            }
            if !(cfg.threshold > 0.0 && cfg.threshold < 1.0) {
                problems.push(format!("[eval].threshold {} outside (0, 1)", cfg.threshold));
            }
        }
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&satl_core::io::read_to_string(path)?)
    }

    /// Loads `path`, or the built-in defaults when absent.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map(Self::load).unwrap_or_else(|| Ok(Self::default()))
    }

    /// Applies seed precedence: explicit flag, then the file, then
    /// `SATL_SEED`, then 0.
    pub fn resolve_seeds(&mut self, flag: Option<u64>) -> Result<()> {
        let env = match std::env::var(SEED_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?,
            ),
            Err(_) => None,
        };
        let fallback = env.unwrap_or(0);
        let pick = |given: bool, current: u64| flag.unwrap_or(if given { current } else { fallback });
        self.source.seed = pick(self.seeds_given.0, self.source.seed);
        self.adapt.seed = pick(self.seeds_given.1, self.adapt.seed);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn every_bad_key_is_reported() {
        let text = "[data]\nimage_size = 64\ncolour = 1\n[adapt]\nencoder_lr = \"fast\"\nwarmup = 3\n[extra]\nx = 1\n";
        let Err(Error::Config(problems)) = RunConfig::parse(text) else {
            panic!("accepted")
        };
        assert_eq!(problems.len(), 4, "{problems:?}");
        for needle in ["[data].colour", "[adapt].encoder_lr", "[adapt].warmup", "[extra]"] {
            assert!(problems.iter().any(|p| p.contains(needle)), "{needle} missing from {problems:?}");
        }
    }

    #[test]
    fn flag_beats_file_beats_fallback() {
        let mut cfg = RunConfig::parse("[source_train]\nseed = 9\n").unwrap();
        cfg.resolve_seeds(None).unwrap();
        assert_eq!(cfg.source.seed, 9);
        cfg.resolve_seeds(Some(4)).unwrap();
        assert_eq!((cfg.source.seed, cfg.adapt.seed), (4, 4));
    }
}
