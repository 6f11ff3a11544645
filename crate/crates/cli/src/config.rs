//! Flat `key = value` run configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cgnmt::cells::{CellKind, GateConfig, GateInputs, GateVariant, ScaleConfig};
use cgnmt::corpus::{TaskKind, ToyTaskSpec};
use cgnmt::training::TrainConfig;
use cgnmt::{Error, Result};

/// The five settings plotted for the scaling probe.
pub const DEFAULT_SCALES: [(f64, f64); 5] = [(1.0, 1.0), (1.0, 0.8), (1.0, 0.5), (0.8, 1.0), (0.5, 1.0)];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Directory relative paths are resolved against.
    pub base: PathBuf,

    pub task: ToyTaskSpec,
    pub sizes: [usize; 3],
    pub train_source: Option<PathBuf>,
    pub train_target: Option<PathBuf>,
    pub dev_source: Option<PathBuf>,
    pub dev_target: Option<PathBuf>,
    pub test_source: Option<PathBuf>,
    pub test_target: Option<PathBuf>,
    pub test_alignments: Option<PathBuf>,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,

    pub emb_dim: usize,
    pub hidden_dim: usize,
    /// Defaults to `hidden_dim`.
    pub att_dim: Option<usize>,
    pub cell: CellKind,
    pub gate: GateConfig,
    pub scale: ScaleConfig,
    pub init_seed: u64,

    pub train: TrainConfig,

    pub beam: usize,
    pub bucket_width: usize,
    pub scales: Vec<(f64, f64)>,

    pub model: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub baseline_hyp: Option<PathBuf>,
    pub gate_trace: Option<PathBuf>,
    pub alignment_hyp: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            base: PathBuf::from("."),
            task: ToyTaskSpec {
                kind: TaskKind::Lexicon,
                vocab_size: 50,
                min_len: 5,
                max_len: 15,
                function_rate: 0.0,
                seed: 1,
            },
            sizes: [5000, 200, 200],
            train_source: None,
            train_target: None,
            dev_source: None,
            dev_target: None,
            test_source: None,
            test_target: None,
            test_alignments: None,
            src_vocab_size: 30_000,
            tgt_vocab_size: 30_000,
            emb_dim: 32,
            hidden_dim: 32,
            att_dim: None,
            cell: CellKind::Gru,
            gate: GateConfig::none(),
            scale: ScaleConfig::IDENTITY,
            init_seed: 1,
            train: TrainConfig::default(),
            beam: 10,
            bucket_width: 5,
            scales: DEFAULT_SCALES.to_vec(),
            model: None,
            log: None,
            output_dir: None,
            reference: None,
            baseline_hyp: None,
            gate_trace: None,
            alignment_hyp: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

/// `a,b; a,b; ...`
fn parse_scales(value: &str) -> Result<Vec<(f64, f64)>> {
    value
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let (a, b) = pair
                .split_once(',')
                .ok_or_else(|| Error::Config(format!("`scales`: expected `a,b`, got `{pair}`")))?;
            let (a, b) = (parse::<f64>("scales", a.trim())?, parse::<f64>("scales", b.trim())?);
            ScaleConfig::new(a, b)?;
            Ok((a, b))
        })
        .collect()
}

impl RunConfig {
    pub fn parse_str(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = RunConfig {
            base: base.to_path_buf(),
            ..Default::default()
        };
        let mut gate_inputs: Option<GateInputs> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            cfg.set(key, value, &mut gate_inputs)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip(e))))?;
        }
        if let Some(inputs) = gate_inputs {
            cfg.gate = cfg.gate.with_inputs(inputs);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::parse_str(&text, base)
    }

    fn path(&self, value: &str) -> PathBuf {
        self.base.join(value)
    }

    fn set(&mut self, key: &str, value: &str, gate_inputs: &mut Option<GateInputs>) -> Result<()> {
        match key {
            "task" => self.task.kind = parse(key, value)?,
            "task_vocab" => self.task.vocab_size = parse(key, value)?,
            "min_len" => self.task.min_len = parse(key, value)?,
            "max_len" => self.task.max_len = parse(key, value)?,
            "function_rate" => self.task.function_rate = parse(key, value)?,
            "data_seed" => self.task.seed = parse(key, value)?,
            "train_size" => self.sizes[0] = parse(key, value)?,
            "dev_size" => self.sizes[1] = parse(key, value)?,
            "test_size" => self.sizes[2] = parse(key, value)?,
            "train_source" => self.train_source = Some(self.path(value)),
            "train_target" => self.train_target = Some(self.path(value)),
            "dev_source" => self.dev_source = Some(self.path(value)),
            "dev_target" => self.dev_target = Some(self.path(value)),
            "test_source" => self.test_source = Some(self.path(value)),
            "test_target" => self.test_target = Some(self.path(value)),
            "test_alignments" => self.test_alignments = Some(self.path(value)),
            "src_vocab_size" => self.src_vocab_size = parse(key, value)?,
            "tgt_vocab_size" => self.tgt_vocab_size = parse(key, value)?,
            "emb_dim" => self.emb_dim = parse(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "att_dim" => self.att_dim = Some(parse(key, value)?),
            "cell" => self.cell = value.parse()?,
            "gate" => self.gate = GateConfig::new(value.parse::<GateVariant>()?),
            "gate_inputs" => *gate_inputs = Some(value.parse()?),
            "scale_a" => self.scale.a = parse(key, value)?,
            "scale_b" => self.scale.b = parse(key, value)?,
            "init_seed" => self.init_seed = parse(key, value)?,
            "lr" => self.train.lr = parse(key, value)?,
            "clip" => self.train.clip = parse(key, value)?,
            "max_epochs" => self.train.max_epochs = parse(key, value)?,
            "patience" => self.train.patience = parse(key, value)?,
            "max_train_len" => self.train.max_len = parse(key, value)?,
            "shuffle_seed" => self.train.shuffle_seed = parse(key, value)?,
            "beam" => self.beam = parse(key, value)?,
            "bucket_width" => self.bucket_width = parse(key, value)?,
            "scales" => self.scales = parse_scales(value)?,
            "model" => self.model = Some(self.path(value)),
            "log" => self.log = Some(self.path(value)),
            "output_dir" => self.output_dir = Some(self.path(value)),
            "reference" => self.reference = Some(self.path(value)),
            "baseline_hyp" => self.baseline_hyp = Some(self.path(value)),
            "gate_trace" => self.gate_trace = Some(self.path(value)),
            "alignment_hyp" => self.alignment_hyp = Some(self.path(value)),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.gate.validate()?;
        self.scale.validate()?;
        self.train.validate()?;
        if self.beam == 0 {
            return Err(Error::Config("beam must be >= 1".into()));
        }
        if self.bucket_width == 0 {
            return Err(Error::Config("bucket_width must be >= 1".into()));
        }
        let pairs = [
            ("train", &self.train_source, &self.train_target),
            ("dev", &self.dev_source, &self.dev_target),
            ("test", &self.test_source, &self.test_target),
        ];
        for (name, s, t) in pairs {
            if s.is_some() != t.is_some() {
                return Err(Error::Config(format!("{name}_source and {name}_target must be set together")));
            }
        }
        Ok(())
    }

    /// Whether the corpora come from files rather than the toy generator.
    pub fn uses_files(&self) -> bool {
        self.train_source.is_some()
    }

    pub fn att_dim(&self) -> usize {
        self.att_dim.unwrap_or(self.hidden_dim)
    }
}

/// Drops the variant prefix so nested config errors read cleanly.
fn strip(e: Error) -> String {
    match e {
        Error::Config(s) => s,
        other => other.to_string(),
    }
}
