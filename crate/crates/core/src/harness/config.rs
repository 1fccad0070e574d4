//! Flat `key = value` experiment configuration with dotted section keys.
//!
//! ```text
//! # comment
//! data.source = synthetic
//! task.way = 2
//! backbone.hidden = 16
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::autodiff::{Activation, MetaOrder};
use crate::backbone::BackboneConfig;
use crate::baselines::{FinetuneConfig, Kernel, PretrainConfig};
use crate::controller::{ControllerConfig, GradientMode, ReturnMode};
use crate::error::{Error, Result};
use crate::meta::MetaConfig;
use crate::synth::SynthConfig;

/// Environment variable consulted for relative dataset paths.
pub const DATA_ROOT_ENV: &str = "GRAPHMETA_DATA_ROOT";

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Tu(PathBuf),
    Synthetic(SynthConfig),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SplitChoice {
    /// Per-dataset class counts for known benchmarks, else an error.
    Default,
    Random {
        counts: [usize; 3],
    },
    Explicit {
        train: Vec<usize>,
        val: Vec<usize>,
        test: Vec<usize>,
    },
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepMode {
    Adaptive,
    Fixed(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelSettings {
    pub name: String,
    pub wl_iterations: usize,
    pub sp_max_length: usize,
    pub graphlet_samples: usize,
    pub bins: usize,
}

impl KernelSettings {
    pub fn kernel(&self) -> Result<Kernel> {
        Kernel::parse(
            &self.name,
            self.wl_iterations,
            self.sp_max_length,
            self.graphlet_samples,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub split: SplitChoice,
    pub split_seed: u64,
    /// Share of training graphs held out for validation when there are no
    /// validation classes.
    pub val_fraction: f64,
    pub way: usize,
    pub shot: usize,
    pub query: usize,
    pub backbone: BackboneConfig,
    pub meta: MetaConfig,
    pub steps: StepMode,
    pub controller: ControllerConfig,
    pub episodes: usize,
    pub val_interval: usize,
    pub val_tasks: usize,
    pub patience: usize,
    pub eval_tasks: usize,
    pub eval_seed: u64,
    /// Inner steps at test time; `None` uses the trained controller's proposal
    /// (adaptive) or the fixed count.
    pub eval_steps: Option<usize>,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub kernel: KernelSettings,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Synthetic(SynthConfig::default()),
            split: SplitChoice::Default,
            split_seed: 0,
            val_fraction: 0.2,
            way: 5,
            shot: 5,
            query: 10,
            backbone: BackboneConfig::default(),
            meta: MetaConfig::default(),
            steps: StepMode::Adaptive,
            controller: ControllerConfig::default(),
            episodes: 2000,
            val_interval: 100,
            val_tasks: 50,
            patience: 50,
            eval_tasks: 200,
            eval_seed: 1,
            eval_steps: None,
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            kernel: KernelSettings {
                name: "wl".into(),
                wl_iterations: 3,
                sp_max_length: 10,
                graphlet_samples: 1000,
                bins: 8,
            },
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| parse(key, t))
        .collect()
}

fn join(values: &[usize]) -> String {
    values
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn synth_mut(cfg: &mut ExperimentConfig) -> &mut SynthConfig {
    if !matches!(cfg.data, DataSource::Synthetic(_)) {
        cfg.data = DataSource::Synthetic(SynthConfig::default());
    }
    match &mut cfg.data {
        DataSource::Synthetic(s) => s,
        DataSource::Tu(_) => unreachable!(),
    }
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", ln + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", ln + 1, strip(e))))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<'a>(
        &mut self,
        overrides: impl IntoIterator<Item = &'a str>,
    ) -> Result<()> {
        for item in overrides {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{item}' is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "data.source" => match v {
                "synthetic" => {
                    synth_mut(self);
                }
                "tu" => {
                    if !matches!(self.data, DataSource::Tu(_)) {
                        self.data = DataSource::Tu(PathBuf::new());
                    }
                }
                other => {
                    return Err(Error::Config(format!(
                        "data.source: unknown source '{other}'"
                    )))
                }
            },
            "data.path" => self.data = DataSource::Tu(PathBuf::from(v)),
            "synth.families" => {
                synth_mut(self).families = v
                    .split(',')
                    .map(str::trim)
                    .filter(|t| !t.is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            "synth.per_family" => synth_mut(self).per_family = parse(key, v)?,
            "synth.min_nodes" => synth_mut(self).min_nodes = parse(key, v)?,
            "synth.max_nodes" => synth_mut(self).max_nodes = parse(key, v)?,
            "synth.noise" => synth_mut(self).noise = parse(key, v)?,
            "synth.seed" => synth_mut(self).seed = parse(key, v)?,
            "split.mode" => match v {
                "default" => self.split = SplitChoice::Default,
                other => return Err(Error::Config(format!("split.mode: unknown '{other}'"))),
            },
            "split.counts" => {
                let counts: [usize; 3] = parse_list(key, v)?
                    .try_into()
                    .map_err(|_| Error::Config("split.counts needs three numbers".into()))?;
                self.split = SplitChoice::Random { counts };
            }
            "split.train" | "split.val" | "split.test" => {
                let list = parse_list(key, v)?;
                if !matches!(self.split, SplitChoice::Explicit { .. }) {
                    self.split = SplitChoice::Explicit {
                        train: vec![],
                        val: vec![],
                        test: vec![],
                    };
                }
                if let SplitChoice::Explicit { train, val, test } = &mut self.split {
                    match key {
                        "split.train" => *train = list,
                        "split.val" => *val = list,
                        _ => *test = list,
                    }
                }
            }
            "split.file" => self.split = SplitChoice::File(PathBuf::from(v)),
            "split.seed" => self.split_seed = parse(key, v)?,
            "split.val_fraction" => self.val_fraction = parse(key, v)?,
            "task.way" => self.way = parse(key, v)?,
            "task.shot" => self.shot = parse(key, v)?,
            "task.query" => self.query = parse(key, v)?,
            "backbone.layers" => self.backbone.layer_count = parse(key, v)?,
            "backbone.hidden" => self.backbone.hidden_dim = parse(key, v)?,
            "backbone.pool_ratio" => self.backbone.pool_ratio = parse(key, v)?,
            "backbone.conv_activation" => self.backbone.conv_activation = parse_activation(key, v)?,
            "backbone.score_activation" => {
                self.backbone.score_activation = parse_activation(key, v)?
            }
            "backbone.readout_activation" => {
                self.backbone.readout_activation = parse_activation(key, v)?
            }
            "backbone.classifier_hidden" => {
                self.backbone.classifier_hidden = if v == "default" {
                    None
                } else {
                    Some(parse_list(key, v)?)
                }
            }
            "meta.inner_lr" => self.meta.inner_lr = parse(key, v)?,
            "meta.outer_lr" => self.meta.outer_lr = parse(key, v)?,
            "meta.weight_decay" => self.meta.weight_decay = parse(key, v)?,
            "meta.order" => self.meta.order = v.parse::<MetaOrder>()?,
            "meta.batch" => self.meta.batch = parse(key, v)?,
            "steps.mode" => {
                self.steps = match v {
                    "adaptive" => StepMode::Adaptive,
                    "fixed" => StepMode::Fixed(match self.steps {
                        StepMode::Fixed(t) => t,
                        StepMode::Adaptive => self.controller.initial_steps(),
                    }),
                    other => return Err(Error::Config(format!("steps.mode: unknown '{other}'"))),
                }
            }
            "steps.fixed" => self.steps = StepMode::Fixed(parse(key, v)?),
            "steps.min" => self.controller.bounds.t_min = parse(key, v)?,
            "steps.max" => self.controller.bounds.t_max = parse(key, v)?,
            "steps.initial" => {
                self.controller.initial_steps = if v == "default" {
                    None
                } else {
                    Some(parse(key, v)?)
                }
            }
            "controller.hidden" => self.controller.hidden = parse(key, v)?,
            "controller.lr" => self.controller.reward.controller_lr = parse(key, v)?,
            "controller.penalty" => self.controller.reward.penalty = parse(key, v)?,
            "controller.returns" => self.controller.reward.returns = v.parse::<ReturnMode>()?,
            "controller.gradient" => self.controller.reward.gradient = v.parse::<GradientMode>()?,
            "train.episodes" => self.episodes = parse(key, v)?,
            "train.val_interval" => self.val_interval = parse(key, v)?,
            "train.val_tasks" => self.val_tasks = parse(key, v)?,
            "train.patience" => self.patience = parse(key, v)?,
            "eval.tasks" => self.eval_tasks = parse(key, v)?,
            "eval.seed" => self.eval_seed = parse(key, v)?,
            "eval.steps" => {
                self.eval_steps = if v == "auto" {
                    None
                } else {
                    Some(parse(key, v)?)
                }
            }
            "baseline.pretrain_steps" => self.pretrain.steps = parse(key, v)?,
            "baseline.pretrain_batch" => self.pretrain.batch = parse(key, v)?,
            "baseline.pretrain_lr" => self.pretrain.lr = parse(key, v)?,
            "baseline.pretrain_weight_decay" => self.pretrain.weight_decay = parse(key, v)?,
            "baseline.finetune_steps" => self.finetune.steps = parse(key, v)?,
            "baseline.finetune_lr" => self.finetune.lr = parse(key, v)?,
            "kernel.name" => self.kernel.name = v.to_string(),
            "kernel.wl_iterations" => self.kernel.wl_iterations = parse(key, v)?,
            "kernel.sp_max_length" => self.kernel.sp_max_length = parse(key, v)?,
            "kernel.graphlet_samples" => self.kernel.graphlet_samples = parse(key, v)?,
            "kernel.bins" => self.kernel.bins = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "output.dir" => self.output_dir = PathBuf::from(v),
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.meta.validate()?;
        self.controller.validate()?;
        if self.way < 2 || self.shot == 0 || self.query == 0 {
            return Err(Error::Config(
                "task needs way >= 2, shot >= 1 and query >= 1".into(),
            ));
        }
        if self.eval_tasks == 0 {
            return Err(Error::Config("eval.tasks must be at least 1".into()));
        }
        if let StepMode::Fixed(0) = self.steps {
            return Err(Error::Config("steps.fixed must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(
                "split.val_fraction must lie in [0, 1)".into(),
            ));
        }
        if let DataSource::Tu(p) = &self.data {
            if p.as_os_str().is_empty() {
                return Err(Error::Config(
                    "data.path is required for TU datasets".into(),
                ));
            }
        }
        self.kernel.kernel()?;
        Ok(())
    }

    /// Dataset directory, with relative paths resolved against
    /// `$GRAPHMETA_DATA_ROOT` when it is set.
    pub fn resolved_data_path(&self) -> Option<PathBuf> {
        match &self.data {
            DataSource::Tu(p) if p.is_relative() => Some(match std::env::var_os(DATA_ROOT_ENV) {
                Some(root) => PathBuf::from(root).join(p),
                None => p.clone(),
            }),
            DataSource::Tu(p) => Some(p.clone()),
            DataSource::Synthetic(_) => None,
        }
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        match &self.data {
            DataSource::Tu(p) => line("data.path", p.display().to_string()),
            DataSource::Synthetic(c) => {
                line("data.source", "synthetic".into());
                let fams: Vec<&str> = c.families.iter().map(|f| f.name()).collect();
                line("synth.families", fams.join(","));
                line("synth.per_family", c.per_family.to_string());
                line("synth.min_nodes", c.min_nodes.to_string());
                line("synth.max_nodes", c.max_nodes.to_string());
                line("synth.noise", c.noise.to_string());
                line("synth.seed", c.seed.to_string());
            }
        }
        match &self.split {
            SplitChoice::Default => line("split.mode", "default".into()),
            SplitChoice::Random { counts } => line("split.counts", join(counts)),
            SplitChoice::Explicit { train, val, test } => {
                line("split.train", join(train));
                line("split.val", join(val));
                line("split.test", join(test));
            }
            SplitChoice::File(p) => line("split.file", p.display().to_string()),
        }
        line("split.seed", self.split_seed.to_string());
        line("split.val_fraction", self.val_fraction.to_string());
        line("task.way", self.way.to_string());
        line("task.shot", self.shot.to_string());
        line("task.query", self.query.to_string());
        let b = &self.backbone;
        line("backbone.layers", b.layer_count.to_string());
        line("backbone.hidden", b.hidden_dim.to_string());
        line("backbone.pool_ratio", b.pool_ratio.to_string());
        line("backbone.conv_activation", b.conv_activation.to_string());
        line("backbone.score_activation", b.score_activation.to_string());
        line(
            "backbone.readout_activation",
            b.readout_activation.to_string(),
        );
        line(
            "backbone.classifier_hidden",
            b.classifier_hidden
                .as_deref()
                .map_or("default".into(), join),
        );
        let m = &self.meta;
        line("meta.inner_lr", m.inner_lr.to_string());
        line("meta.outer_lr", m.outer_lr.to_string());
        line("meta.weight_decay", m.weight_decay.to_string());
        line("meta.order", m.order.to_string());
        line("meta.batch", m.batch.to_string());
        let c = &self.controller;
        line("steps.min", c.bounds.t_min.to_string());
        line("steps.max", c.bounds.t_max.to_string());
        line(
            "steps.initial",
            c.initial_steps.map_or("default".into(), |t| t.to_string()),
        );
        match self.steps {
            StepMode::Adaptive => line("steps.mode", "adaptive".into()),
            StepMode::Fixed(t) => line("steps.fixed", t.to_string()),
        }
        line("controller.hidden", c.hidden.to_string());
        line("controller.lr", c.reward.controller_lr.to_string());
        line("controller.penalty", c.reward.penalty.to_string());
        line("controller.returns", c.reward.returns.to_string());
        line("controller.gradient", c.reward.gradient.to_string());
        line("train.episodes", self.episodes.to_string());
        line("train.val_interval", self.val_interval.to_string());
        line("train.val_tasks", self.val_tasks.to_string());
        line("train.patience", self.patience.to_string());
        line("eval.tasks", self.eval_tasks.to_string());
        line("eval.seed", self.eval_seed.to_string());
        line(
            "eval.steps",
            self.eval_steps.map_or("auto".into(), |t| t.to_string()),
        );
        line("baseline.pretrain_steps", self.pretrain.steps.to_string());
        line("baseline.pretrain_batch", self.pretrain.batch.to_string());
        line("baseline.pretrain_lr", self.pretrain.lr.to_string());
        line(
            "baseline.pretrain_weight_decay",
            self.pretrain.weight_decay.to_string(),
        );
        line("baseline.finetune_steps", self.finetune.steps.to_string());
        line("baseline.finetune_lr", self.finetune.lr.to_string());
        line("kernel.name", self.kernel.name.clone());
        line(
            "kernel.wl_iterations",
            self.kernel.wl_iterations.to_string(),
        );
        line(
            "kernel.sp_max_length",
            self.kernel.sp_max_length.to_string(),
        );
        line(
            "kernel.graphlet_samples",
            self.kernel.graphlet_samples.to_string(),
        );
        line("kernel.bins", self.kernel.bins.to_string());
        line("seed", self.seed.to_string());
        line("output.dir", self.output_dir.display().to_string());
        s
    }
}

fn parse_activation(key: &str, v: &str) -> Result<Activation> {
    v.parse::<Activation>()
        .map_err(|_| Error::Config(format!("{key}: unknown activation '{v}'")))
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

/// Class counts `[train, val, test]` for the benchmark datasets.
pub fn benchmark_split_counts(name: &str) -> Option<[usize; 3]> {
    let key: String = name
        .chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_lowercase();
    match key.as_str() {
        "coildel" => Some([60, 16, 20]),
        "graphr52" | "r52" => Some([18, 5, 5]),
        "letterhigh" => Some([11, 0, 4]),
        "triangles" => Some([7, 0, 3]),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.meta.inner_lr, 1e-4);
        assert_eq!(cfg.meta.outer_lr, 1e-3);
        assert_eq!(cfg.controller.reward.controller_lr, 1e-4);
        assert_eq!(cfg.meta.weight_decay, 1e-5);
        assert_eq!(cfg.backbone.layer_count, 3);
        assert_eq!(cfg.backbone.hidden_dim, 128);
        assert_eq!(
            (cfg.controller.bounds.t_min, cfg.controller.bounds.t_max),
            (4, 15)
        );
        assert_eq!(cfg.eval_tasks, 200);
        let back = ExperimentConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn parses_and_overrides() {
        let text = "
            # small run
            data.source = synthetic
            synth.families = cycle, star, clique, path, grid, tree
            split.train = 0,1,2,3
            split.test = 4 5
            task.way = 2
            steps.fixed = 6
            backbone.readout_activation = identity
        ";
        let mut cfg = ExperimentConfig::from_text(text).unwrap();
        assert_eq!(cfg.steps, StepMode::Fixed(6));
        assert_eq!(
            cfg.split,
            SplitChoice::Explicit {
                train: vec![0, 1, 2, 3],
                val: vec![],
                test: vec![4, 5]
            }
        );
        cfg.apply_overrides(["steps.mode=adaptive", "seed=7"])
            .unwrap();
        assert_eq!(cfg.steps, StepMode::Adaptive);
        assert_eq!(cfg.seed, 7);
        let back = ExperimentConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn errors_name_line_and_key() {
        let err = ExperimentConfig::from_text("task.way = 2\nbogus.key = 1").unwrap_err();
        assert!(err.to_string().contains("line 2") && err.to_string().contains("bogus.key"));
        let err = ExperimentConfig::from_text("task.way = two").unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let mut cfg = ExperimentConfig::default();
        cfg.meta.inner_lr = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn benchmark_counts() {
        assert_eq!(benchmark_split_counts("COIL-DEL"), Some([60, 16, 20]));
        assert_eq!(benchmark_split_counts("Letter-high"), Some([11, 0, 4]));
        assert_eq!(benchmark_split_counts("TRIANGLES"), Some([7, 0, 3]));
        assert_eq!(benchmark_split_counts("Graph-R52"), Some([18, 5, 5]));
        assert_eq!(benchmark_split_counts("MUTAG"), None);
    }
}
