//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key is optional and falls
//! back to the defaults of [`RunConfig::default`]; unknown or repeated keys
//! are errors. [`RunConfig::to_text`] writes every key in a fixed order, so
//! the rendering doubles as the config echo stored in checkpoints.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::io::{gen_synthetic, load_csv, Dataset, Split, SyntheticSpec};
use crate::search::SearchParams;
use crate::sparsity::{ScheduleConfig, SearchSpace, SparsityConfig};
use crate::tensor::AdamConfig;
use crate::trainer::{ModelArch, PruneCriterion, TrainConfig, TrainMode};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// Generated from the synthetic teacher; dimension and class count come
    /// from the architecture.
    Synthetic {
        seed: u64,
        n: usize,
        teacher_width: usize,
        label_noise: f64,
    },
    Csv { train: PathBuf, validation: PathBuf },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub arch: ModelArch,
    pub space: SearchSpace,
    pub train: TrainConfig,
    pub criterion: PruneCriterion,
    pub search: SearchParams,
    pub search_budget: usize,
    pub data: DataSource,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let arch = ModelArch {
            input_dim: 16,
            hidden: 32,
            layers: 4,
            classes: 4,
        };
        Self {
            arch,
            space: SearchSpace::with_default_ratios(arch.layers).expect("default space"),
            train: TrainConfig {
                batch_size: 64,
                adam: AdamConfig::with_lr(2e-3),
                total_steps: 5000,
                kd_weight: 0.5,
                kd_temperature: 1.0,
                schedule: ScheduleConfig::new(0.8, 2048, ScheduleConfig::DEFAULT_INTERVAL).expect("default schedule"),
                seed: 0,
                mode: TrainMode::Supernet,
            },
            criterion: PruneCriterion::Adam,
            search: SearchParams::default(),
            search_budget: 600,
            data: DataSource::Synthetic {
                seed: 0,
                n: 20_000,
                teacher_width: 64,
                label_noise: 0.0,
            },
            output_dir: PathBuf::from("."),
        }
    }
}

fn join_ratios(r: &[f64]) -> String {
    r.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(";")
}

fn split_ratios(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(';')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("invalid ratio {t:?}")))
        .collect()
}

struct Entries<'a> {
    path: &'a Path,
    map: BTreeMap<String, (usize, String)>,
}

impl Entries<'_> {
    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line,
            msg: msg.into(),
        }
    }

    fn take<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.map.remove(key) {
            None => Ok(default),
            Some((line, v)) => v
                .parse()
                .map_err(|_| self.err(line, format!("invalid value {v:?} for {key}"))),
        }
    }

    fn take_with<T>(&mut self, key: &str, default: T, f: impl Fn(&str) -> std::result::Result<T, String>) -> Result<T> {
        match self.map.remove(key) {
            None => Ok(default),
            Some((line, v)) => f(&v).map_err(|m| self.err(line, format!("{key}: {m}"))),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    /// Parses config text; `path` is only used in error messages.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg,
            };
            let (k, v) = content
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected key = value, found {content:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(parse_err("empty key".into()));
            }
            if map.insert(k.to_string(), (line, v.to_string())).is_some() {
                return Err(parse_err(format!("duplicate key {k:?}")));
            }
        }
        let mut e = Entries { path, map };
        let d = RunConfig::default();

        let version: u32 = e.take("version", CONFIG_VERSION)?;
        if version != CONFIG_VERSION {
            return Err(Error::Version(format!("config version {version}, expected {CONFIG_VERSION}")));
        }
        let arch = ModelArch {
            input_dim: e.take("input_dim", d.arch.input_dim)?,
            hidden: e.take("hidden", d.arch.hidden)?,
            layers: e.take("layers", d.arch.layers)?,
            classes: e.take("classes", d.arch.classes)?,
        };
        let ratios = e.take_with("ratios", d.space.allowed().to_vec(), split_ratios)?;
        let adam = AdamConfig {
            lr: e.take("lr", d.train.adam.lr)?,
            beta1: e.take("beta1", d.train.adam.beta1)?,
            beta2: e.take("beta2", d.train.adam.beta2)?,
            eps: e.take("eps", d.train.adam.eps)?,
        };
        let batch_size = e.take("batch_size", d.train.batch_size)?;
        let total_steps = e.take("total_steps", d.train.total_steps)?;
        let kd_weight = e.take("kd_weight", d.train.kd_weight)?;
        let kd_temperature = e.take("kd_temperature", d.train.kd_temperature)?;
        let final_max = e.take("final_max_sparsity", d.train.schedule.final_max_sparsity)?;
        let ramp = e.take("ramp_steps", d.train.schedule.ramp_steps)?;
        let interval = e.take("update_interval", d.train.schedule.update_interval)?;
        let seed: u64 = e.take("seed", d.train.seed)?;
        let mode_name: String = e.take("mode", "supernet".to_string())?;
        let sparsity: Option<f64> = e.take_with("sparsity", None, |s| {
            s.parse().map(Some).map_err(|_| format!("invalid value {s:?}"))
        })?;
        let dsnn_ratios = e.take_with("dsnn_ratios", TrainMode::DSNN_DEFAULT_RATIOS.to_vec(), split_ratios)?;
        let criterion = e.take_with("criterion", d.criterion, |s| PruneCriterion::parse(s).map_err(|x| x.to_string()))?;
        let search = SearchParams {
            initial_population: e.take("search_initial", d.search.initial_population)?,
            children_per_iter: e.take("search_children", d.search.children_per_iter)?,
            mutation_prob: e.take_with("search_mutation_prob", None, |s| match s {
                "auto" => Ok(None),
                _ => s.parse().map(Some).map_err(|_| format!("invalid value {s:?}")),
            })?,
            crossover_fraction: e.take("search_crossover_fraction", d.search.crossover_fraction)?,
            seed: e.take("search_seed", seed)?,
            exhaustive_init: e.take("search_exhaustive_init", d.search.exhaustive_init)?,
        };
        let search_budget = e.take("search_budget", d.search_budget)?;
        let source: String = e.take("data", "synthetic".to_string())?;
        let data = match source.as_str() {
            "synthetic" => {
                let DataSource::Synthetic {
                    n,
                    teacher_width,
                    label_noise,
                    ..
                } = d.data
                else {
                    unreachable!()
                };
                DataSource::Synthetic {
                    seed: e.take("data_seed", seed)?,
                    n: e.take("data_n", n)?,
                    teacher_width: e.take("teacher_width", teacher_width)?,
                    label_noise: e.take("label_noise", label_noise)?,
                }
            }
            "csv" => {
                let mut path_of = |key: &str| -> Result<PathBuf> {
                    e.map
                        .remove(key)
                        .map(|(_, v)| PathBuf::from(v))
                        .ok_or_else(|| Error::Parse {
                            path: path.to_path_buf(),
                            line: 0,
                            msg: format!("data = csv needs {key}"),
                        })
                };
                DataSource::Csv {
                    train: path_of("train_csv")?,
                    validation: path_of("val_csv")?,
                }
            }
            other => return Err(e.err(0, format!("unknown data source {other:?}"))),
        };
        let output_dir: String = e.take("output_dir", ".".to_string())?;
        if let Some((k, (line, _))) = e.map.iter().next() {
            return Err(e.err(*line, format!("unknown key {k:?}")));
        }

        let invalid = |err: Error| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: err.to_string(),
        };
        let mode = match (mode_name.as_str(), sparsity) {
            ("supernet", _) => TrainMode::Supernet,
            ("dsnn", _) => TrainMode::Dsnn { ratios: dsnn_ratios },
            ("single-nokd", Some(s)) => TrainMode::single_no_kd(s, arch.layers),
            ("single-kd", Some(s)) => TrainMode::single_kd(s, arch.layers),
            ("single-nokd" | "single-kd", None) => {
                return Err(invalid(Error::param(format!("mode {mode_name} needs a sparsity"))))
            }
            (other, _) => return Err(invalid(Error::param(format!("unknown mode {other:?}")))),
        };
        arch.validate().map_err(invalid)?;
        let space = SearchSpace::new(arch.layers, ratios).map_err(invalid)?;
        let train = TrainConfig {
            batch_size,
            adam,
            total_steps,
            kd_weight,
            kd_temperature,
            schedule: ScheduleConfig::new(final_max, ramp, interval).map_err(invalid)?,
            seed,
            mode,
        };
        let cfg = RunConfig {
            arch,
            space,
            train,
            criterion,
            search,
            search_budget,
            data,
            output_dir: PathBuf::from(output_dir),
        };
        cfg.validate().map_err(invalid)?;
        Ok(cfg)
    }

    /// Cross-field checks shared by parsing and programmatic construction.
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.train.validate()?;
        if self.space.num_layers() != self.arch.layers {
            return Err(Error::param("search space and architecture disagree on layer count"));
        }
        if let TrainMode::Single { config, .. } = &self.train.mode {
            if config.len() != self.arch.layers || !self.space.contains(config) {
                return Err(Error::param(format!("sparsity {config} is not in the search space")));
            }
        }
        if let DataSource::Synthetic { n, label_noise, .. } = &self.data {
            if *n < 10 || !(0.0..0.5).contains(label_noise) {
                return Err(Error::param("synthetic data needs n >= 10 and label noise in [0, 0.5)"));
            }
        }
        Ok(())
    }

    /// Renders every key in a fixed order.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut kv: Vec<(&str, String)> = vec![
            ("version", CONFIG_VERSION.to_string()),
            ("input_dim", self.arch.input_dim.to_string()),
            ("hidden", self.arch.hidden.to_string()),
            ("layers", self.arch.layers.to_string()),
            ("classes", self.arch.classes.to_string()),
            ("ratios", join_ratios(self.space.allowed())),
            ("batch_size", t.batch_size.to_string()),
            ("lr", format!("{:e}", t.adam.lr)),
            ("beta1", format!("{:e}", t.adam.beta1)),
            ("beta2", format!("{:e}", t.adam.beta2)),
            ("eps", format!("{:e}", t.adam.eps)),
            ("total_steps", t.total_steps.to_string()),
            ("kd_weight", format!("{:e}", t.kd_weight)),
            ("kd_temperature", format!("{:e}", t.kd_temperature)),
            ("final_max_sparsity", format!("{:e}", t.schedule.final_max_sparsity)),
            ("ramp_steps", t.schedule.ramp_steps.to_string()),
            ("update_interval", t.schedule.update_interval.to_string()),
            ("seed", t.seed.to_string()),
            ("mode", t.mode.name().to_string()),
        ];
        match &t.mode {
            TrainMode::Single { config, .. } => kv.push(("sparsity", format!("{:e}", config.ratios()[0]))),
            TrainMode::Dsnn { ratios } => kv.push(("dsnn_ratios", join_ratios(ratios))),
            TrainMode::Supernet => {}
        }
        kv.extend([
            ("criterion", self.criterion.as_str().to_string()),
            ("search_initial", self.search.initial_population.to_string()),
            ("search_children", self.search.children_per_iter.to_string()),
            (
                "search_mutation_prob",
                self.search.mutation_prob.map_or("auto".to_string(), |p| format!("{p:e}")),
            ),
            ("search_crossover_fraction", format!("{:e}", self.search.crossover_fraction)),
            ("search_seed", self.search.seed.to_string()),
            ("search_exhaustive_init", self.search.exhaustive_init.to_string()),
            ("search_budget", self.search_budget.to_string()),
        ]);
        match &self.data {
            DataSource::Synthetic {
                seed,
                n,
                teacher_width,
                label_noise,
            } => kv.extend([
                ("data", "synthetic".to_string()),
                ("data_seed", seed.to_string()),
                ("data_n", n.to_string()),
                ("teacher_width", teacher_width.to_string()),
                ("label_noise", format!("{label_noise:e}")),
            ]),
            DataSource::Csv { train, validation } => kv.extend([
                ("data", "csv".to_string()),
                ("train_csv", train.display().to_string()),
                ("val_csv", validation.display().to_string()),
            ]),
        }
        kv.push(("output_dir", self.output_dir.display().to_string()));
        kv.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Switches the training regime; single modes take a uniform sparsity.
    pub fn set_mode(&mut self, mode: &str, sparsity: Option<f64>) -> Result<()> {
        self.train.mode = match (mode, sparsity) {
            ("supernet", _) => TrainMode::Supernet,
            ("dsnn", _) => TrainMode::dsnn(),
            ("single-nokd", Some(s)) => TrainMode::single_no_kd(s, self.arch.layers),
            ("single-kd", Some(s)) => TrainMode::single_kd(s, self.arch.layers),
            ("single-nokd" | "single-kd", None) => return Err(Error::param(format!("mode {mode} needs --sparsity"))),
            (other, _) => return Err(Error::param(format!("unknown mode {other:?}"))),
        };
        self.validate()
    }

    /// Train and validation sets as described by the data source.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        let (train, val) = match &self.data {
            DataSource::Synthetic {
                seed,
                n,
                teacher_width,
                label_noise,
            } => gen_synthetic(&SyntheticSpec {
                seed: *seed,
                n: *n,
                dim: self.arch.input_dim,
                classes: self.arch.classes,
                teacher_width: *teacher_width,
                label_noise: *label_noise,
            })?,
            DataSource::Csv { train, validation } => (
                load_csv(train, Some(self.arch.classes), Split::Train)?,
                self.validation_csv(validation)?,
            ),
        };
        if train.dim() != self.arch.input_dim {
            return Err(Error::shape(format!(
                "training data has {} features, the model expects {}",
                train.dim(),
                self.arch.input_dim
            )));
        }
        Ok((train, val))
    }

    /// Loads a validation CSV and checks it fits the architecture.
    pub fn validation_csv(&self, path: &Path) -> Result<Dataset> {
        let val = load_csv(path, Some(self.arch.classes), Split::Validation)?;
        if val.dim() != self.arch.input_dim {
            return Err(Error::shape(format!(
                "{} has {} features, the model expects {}",
                path.display(),
                val.dim(),
                self.arch.input_dim
            )));
        }
        Ok(val)
    }

    /// Validation set only.
    pub fn validation_set(&self) -> Result<Dataset> {
        match &self.data {
            DataSource::Csv { validation, .. } => self.validation_csv(validation),
            DataSource::Synthetic { .. } => Ok(self.datasets()?.1),
        }
    }

    pub fn parse_config(&self, s: &str) -> Result<SparsityConfig> {
        let c: SparsityConfig = s.parse()?;
        self.space.validate(&c)?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::parse(text, Path::new("run.cfg"))
    }

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(parse("# nothing\n\n").unwrap(), RunConfig::default());
    }

    #[test]
    fn text_round_trip() {
        let mut c = parse("hidden = 16\nlr = 1.5e-3\nmode = single-kd\nsparsity = 0.6\nsearch_mutation_prob = 0.3\n").unwrap();
        assert_eq!(parse(&c.to_text()).unwrap(), c);
        c.data = DataSource::Csv {
            train: "a.csv".into(),
            validation: "b.csv".into(),
        };
        c.train.mode = TrainMode::dsnn();
        assert_eq!(parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn errors_point_at_lines() {
        let line_of = |t: &str| match parse(t) {
            Err(Error::Parse { line, .. }) => line,
            other => panic!("{other:?}"),
        };
        assert_eq!(line_of("hidden = 32\nbogus = 1\n"), 2);
        assert_eq!(line_of("lr = fast\n"), 1);
        assert_eq!(line_of("seed = 1\n\nseed = 2\n"), 3);
        assert_eq!(line_of("no equals sign\n"), 1);
    }

    #[test]
    fn divisibility_checked_at_load() {
        assert!(matches!(parse("hidden = 12\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse("batch_size = 30\n"), Err(Error::Parse { .. })));
        assert!(parse("batch_size = 30\nmode = single-nokd\nsparsity = 0.5\n").is_ok());
        assert!(matches!(parse("mode = single-nokd\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse("version = 2\n"), Err(Error::Version(_))));
    }
}
