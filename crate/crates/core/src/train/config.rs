//! Training configuration: `key = value` files, command-line overrides and
//! environment overrides, all addressing the same flat key space.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::optim::AdamWConfig;
use crate::error::{Error, Result};
use crate::losses::DEFAULT_ALPHA;
use crate::srtransformer::ModelConfig;

pub const ENV_SEED: &str = "STAINR_SEED";
pub const ENV_THREADS: &str = "STAINR_THREADS";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_steps: usize,
    pub alpha: f64,
    /// Side of the square training crops.
    pub train_resolution: usize,
    /// Largest side restored in one pass during evaluation; larger images are tiled.
    pub eval_resolution: usize,
    /// Overlap between evaluation tiles.
    pub eval_overlap: usize,
    pub seed: u64,
    pub dataset: PathBuf,
    /// Where logs and checkpoints go; `None` keeps everything in memory.
    pub out_dir: Option<PathBuf>,
    /// Save a checkpoint every this many steps; `0` saves only the final one.
    pub checkpoint_interval: usize,
    pub mixup_alpha: f64,
    pub mixup_prob: f64,
    pub optimizer: AdamWConfig,
    pub threads: Option<usize>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            lr_max: 2e-4,
            lr_min: 1e-6,
            total_steps: 2000,
            alpha: DEFAULT_ALPHA,
            train_resolution: 64,
            eval_resolution: 256,
            eval_overlap: 32,
            seed: 0,
            dataset: PathBuf::from("data"),
            out_dir: None,
            checkpoint_interval: 0,
            mixup_alpha: 1.2,
            mixup_prob: 0.25,
            optimizer: AdamWConfig::default(),
            threads: None,
            model: ModelConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{value}`: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

/// Sets one architecture field by its canonical key.
pub fn set_model_key(m: &mut ModelConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "levels" => m.levels = parse(key, value)?,
        "blocks_per_level" => m.blocks_per_level = parse_list(key, value)?,
        "base_channels" => m.base_channels = parse(key, value)?,
        "heads_per_level" => m.heads_per_level = parse_list(key, value)?,
        "bank_sizes" => {
            m.bank_sizes = parse_list(key, value)?
                .try_into()
                .map_err(|_| Error::Config("`bank_sizes` needs three values".into()))?
        }
        "sparsity_threshold" => {
            m.sparsity_threshold = if value == "auto" { None } else { Some(parse(key, value)?) }
        }
        "enable_docmemory" => m.enable_docmemory = parse(key, value)?,
        "enable_srtransformer" => m.enable_srtransformer = parse(key, value)?,
        "memory_residual" => m.memory_residual = parse(key, value)?,
        "ffn_expansion" => m.ffn_expansion = parse(key, value)?,
        "q_window" => m.q_window = parse(key, value)?,
        "overlap_ratio" => m.overlap_ratio = parse(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Rebuilds a config from [`ModelConfig::canonical`] text.
pub fn model_from_canonical(text: &str) -> Result<ModelConfig> {
    let mut m = ModelConfig::default();
    for (key, value) in entries(text)? {
        if !set_model_key(&mut m, &key, &value)? {
            return Err(Error::Config(format!("unknown architecture key `{key}`")));
        }
    }
    m.validate()?;
    Ok(m)
}

/// `(key, value)` pairs of a `key = value` document; `#` starts a comment.
fn entries(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{raw}`", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr_max" => self.lr_max = parse(key, value)?,
            "lr_min" => self.lr_min = parse(key, value)?,
            "total_steps" => self.total_steps = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "train_resolution" => self.train_resolution = parse(key, value)?,
            "eval_resolution" => self.eval_resolution = parse(key, value)?,
            "eval_overlap" => self.eval_overlap = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "dataset" => self.dataset = PathBuf::from(value),
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            "checkpoint_interval" => self.checkpoint_interval = parse(key, value)?,
            "mixup_alpha" => self.mixup_alpha = parse(key, value)?,
            "mixup_prob" => self.mixup_prob = parse(key, value)?,
            "beta1" => self.optimizer.beta1 = parse(key, value)?,
            "beta2" => self.optimizer.beta2 = parse(key, value)?,
            "eps" => self.optimizer.eps = parse(key, value)?,
            "weight_decay" => self.optimizer.weight_decay = parse(key, value)?,
            "threads" => self.threads = Some(parse(key, value)?),
            _ => {
                if !set_model_key(&mut self.model, key, value)? {
                    return Err(Error::Config(format!("unknown config key `{key}`")));
                }
            }
        }
        Ok(())
    }

    /// Applies every entry of a `key = value` document.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in entries(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = TrainConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Applies `STAINR_SEED` and `STAINR_THREADS` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        self.apply_env_from(|k| std::env::var(k).ok())
    }

    pub fn apply_env_from(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(v) = get(ENV_SEED) {
            self.set("seed", v.trim())?;
        }
        if let Some(v) = get(ENV_THREADS) {
            self.set("threads", v.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(self.lr_min >= 0.0 && self.lr_min < self.lr_max && self.lr_max.is_finite()) {
            return fail(format!("need 0 ≤ lr_min < lr_max, got {} and {}", self.lr_min, self.lr_max));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be ≥ 0, got {}", self.alpha));
        }
        if !(self.mixup_alpha > 0.0) || !(0.0..=1.0).contains(&self.mixup_prob) {
            return fail("mixup_alpha must be > 0 and mixup_prob in [0,1]".into());
        }
        if self.threads == Some(0) {
            return fail("threads must be positive".into());
        }
        let o = &self.optimizer;
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0 && o.weight_decay >= 0.0) {
            return fail("AdamW needs β1, β2 ∈ [0,1), eps > 0, weight_decay ≥ 0".into());
        }
        let m = self.model.size_multiple();
        for (name, r) in [("train_resolution", self.train_resolution), ("eval_resolution", self.eval_resolution)] {
            if r == 0 || r % m != 0 {
                return fail(format!("{name}={r} must be a positive multiple of {m}"));
            }
        }
        if 2 * self.eval_overlap >= self.eval_resolution {
            return fail(format!(
                "eval_overlap={} must be below half of eval_resolution={}",
                self.eval_overlap, self.eval_resolution
            ));
        }
        Ok(())
    }

    /// Every key with its current value, in the file format.
    pub fn to_text(&self) -> String {
        let o = &self.optimizer;
        let mut s = format!(
            "batch_size = {}\nlr_max = {:?}\nlr_min = {:?}\ntotal_steps = {}\nalpha = {:?}\n\
             train_resolution = {}\neval_resolution = {}\neval_overlap = {}\nseed = {}\ndataset = {}\n",
            self.batch_size,
            self.lr_max,
            self.lr_min,
            self.total_steps,
            self.alpha,
            self.train_resolution,
            self.eval_resolution,
            self.eval_overlap,
            self.seed,
            self.dataset.display(),
        );
        if let Some(dir) = &self.out_dir {
            s.push_str(&format!("out_dir = {}\n", dir.display()));
        }
        s.push_str(&format!(
            "checkpoint_interval = {}\nmixup_alpha = {:?}\nmixup_prob = {:?}\nbeta1 = {:?}\nbeta2 = {:?}\n\
             eps = {:?}\nweight_decay = {:?}\n",
            self.checkpoint_interval, self.mixup_alpha, self.mixup_prob, o.beta1, o.beta2, o.eps, o.weight_decay,
        ));
        if let Some(t) = self.threads {
            s.push_str(&format!("threads = {t}\n"));
        }
        for line in self.model.canonical().lines() {
            let (k, v) = line.split_once('=').expect("canonical lines are key=value");
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_covers_every_field() {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(
            "# desk run\nbatch_size = 2\nlr_max=1e-3\nseed = 9 # trailing\nout_dir = /tmp/x\nthreads = 3\n\
             enable_docmemory = false\nbank_sizes = 8,4,2\nsparsity_threshold = 0.01\nweight_decay = 0",
        )
        .unwrap();
        assert_eq!(cfg.batch_size, 2);
        assert_eq!(cfg.seed, 9);
        assert!(!cfg.model.enable_docmemory);
        assert_eq!(cfg.model.bank_sizes, [8, 4, 2]);
        assert_eq!(cfg.model.sparsity_threshold, Some(0.01));
        let mut again = TrainConfig::default();
        again.apply_text(&cfg.to_text()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn canonical_model_text_round_trips() {
        let m = ModelConfig {
            enable_srtransformer: false,
            blocks_per_level: vec![2, 1, 1],
            ..ModelConfig::default()
        };
        assert_eq!(model_from_canonical(&m.canonical()).unwrap(), m);
    }

    #[test]
    fn errors_are_config_errors() {
        let mut cfg = TrainConfig::default();
        for bad in ["nonsense = 1", "batch_size = x", "no equals sign", "bank_sizes = 1,2"] {
            let err = cfg.apply_text(bad).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{bad}: {err}");
        }
        cfg = TrainConfig {
            lr_min: 1.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg = TrainConfig {
            train_resolution: 48,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn environment_overrides() {
        let mut cfg = TrainConfig::default();
        cfg.apply_env_from(|k| match k {
            ENV_SEED => Some("42".into()),
            ENV_THREADS => Some("2".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!((cfg.seed, cfg.threads), (42, Some(2)));
        assert!(cfg.apply_env_from(|_| Some("x".into())).is_err());
    }
}
