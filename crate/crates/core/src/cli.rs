//! Config-driven experiment commands behind the `pdenetpp` binary.
//!
//! Relative paths in a config are resolved against the config file's
//! directory; outputs go to `--out`, else the config's `out`, else the
//! config directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::hybrid::{HybridModel, ModelConfig};
use crate::io::{encode_pgm, load_checkpoint, read_pdnx, save_checkpoint, write_atomic, write_csv, write_json, write_pdnx, FrameBounds};
use crate::schemes::{run_demo, AdvectionConfig, Scheme};
use crate::solvers::{add_noise, generate_dataset, Dataset, PdeConfig, Preset};
use crate::tensor::Tensor;
use crate::training::{evaluate, rollout, train, TrainConfig, FAILURE_THRESHOLD};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Generate,
    Train,
    Evaluate,
    Rollout,
    Schemes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default = "default_train_n")]
    pub train_trajectories: usize,
    #[serde(default = "default_train_m")]
    pub train_steps: usize,
    #[serde(default = "default_test_n")]
    pub test_trajectories: usize,
    #[serde(default = "default_test_m")]
    pub test_steps: usize,
    /// Noise amplitude relative to each snapshot's standard deviation.
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_train_n() -> usize {
    100
}
fn default_train_m() -> usize {
    10
}
fn default_test_n() -> usize {
    20
}
fn default_test_m() -> usize {
    50
}
fn default_noise() -> f64 {
    1e-3
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_trajectories: default_train_n(),
            train_steps: default_train_m(),
            test_trajectories: default_test_n(),
            test_steps: default_test_m(),
            noise: default_noise(),
        }
    }
}

/// Optional input overrides; unset entries default to the files written by
/// earlier commands into the output directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub initial_condition: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutConfig {
    pub steps: i64,
    /// Steps written as PGM frames; defaults to the first and last.
    #[serde(default)]
    pub frames: Option<Vec<usize>>,
    /// Test trajectory whose first snapshot starts the rollout when no
    /// initial-condition file is given.
    #[serde(default)]
    pub trajectory: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub pde: Option<PdeConfig>,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub rollout: Option<RolloutConfig>,
    #[serde(default)]
    pub schemes: Option<AdvectionConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Expands `"pde": {"preset": name, ...overrides}` into a full PDE config.
fn expand_pde(value: &mut Value) -> Result<()> {
    let Some(pde) = value.get_mut("pde") else {
        return Ok(());
    };
    let Some(obj) = pde.as_object_mut() else {
        return Err(Error::Config("pde must be an object".into()));
    };
    if let Some(preset) = obj.remove("preset") {
        let preset: Preset = serde_json::from_value(preset).map_err(|e| Error::Config(format!("pde.preset: {e}")))?;
        let Value::Object(mut full) = serde_json::to_value(PdeConfig::preset(preset))? else {
            unreachable!("PdeConfig serializes to an object")
        };
        for (k, v) in std::mem::take(obj) {
            full.insert(k, v);
        }
        *obj = full;
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        expand_pde(&mut value)?;
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(p) = &cfg.pde {
            p.validate()?;
            if let Some(m) = &cfg.model {
                m.validate(p.kind)?;
            }
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    fn pde(&self) -> Result<&PdeConfig> {
        self.pde.as_ref().ok_or_else(|| Error::Config("missing pde section".into()))
    }
}

/// Resolved invocation of one command.
pub struct Invocation {
    pub config: ExperimentConfig,
    pub base: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
}

impl Invocation {
    pub fn load(config: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let text = fs::read_to_string(config).map_err(|e| Error::Config(format!("cannot read {}: {e}", config.display())))?;
        let cfg = ExperimentConfig::from_json(&text)?;
        let base = config.parent().map(Path::to_path_buf).unwrap_or_default();
        let out = match (out, &cfg.out) {
            (Some(o), _) => o.to_path_buf(),
            (None, Some(o)) => base.join(o),
            (None, None) => base.clone(),
        };
        Ok(Self {
            seed: seed.unwrap_or(cfg.seed),
            config: cfg,
            base,
            out,
        })
    }

    fn input(&self, configured: &Option<PathBuf>, default: &str) -> PathBuf {
        match configured {
            Some(p) => self.base.join(p),
            None => self.out.join(default),
        }
    }
}

fn read_input(path: &Path) -> Result<Tensor<f64>> {
    if !path.exists() {
        return Err(Error::Config(format!("missing input file {}", path.display())));
    }
    read_pdnx(path)
}

pub fn run(cmd: Command, inv: &Invocation) -> Result<()> {
    fs::create_dir_all(&inv.out)?;
    match cmd {
        Command::Generate => cmd_generate(inv),
        Command::Train => cmd_train(inv),
        Command::Evaluate => cmd_evaluate(inv),
        Command::Rollout => cmd_rollout(inv),
        Command::Schemes => cmd_schemes(inv),
    }
}

#[derive(Serialize)]
struct DatasetMeta<'a> {
    pde: &'a PdeConfig,
    seed: u64,
    train_seed: u64,
    test_seed: u64,
    noise_seed: u64,
    noise: f64,
    dt: f64,
    solver_dt: f64,
    train_shape: Vec<usize>,
    test_shape: Vec<usize>,
    shared_forcing: bool,
}

/// Seeds of the train, test and noise streams derived from the run seed.
pub fn derived_seeds(seed: u64) -> (u64, u64, u64) {
    (seed, seed.wrapping_add(1_000_003), seed.wrapping_add(2_000_006))
}

fn cmd_generate(inv: &Invocation) -> Result<()> {
    let cfg = &inv.config;
    let pde = cfg.pde()?;
    let d = &cfg.data;
    let (train_seed, test_seed, noise_seed) = derived_seeds(inv.seed);
    let train = generate_dataset(pde, d.train_trajectories, d.train_steps, train_seed)?;
    let test = generate_dataset(pde, d.test_trajectories, d.test_steps, test_seed)?;
    let noisy = add_noise(&train.trajectories, d.noise, noise_seed)?;
    write_pdnx(&inv.out.join("train_clean.pdnx"), &train.trajectories)?;
    write_pdnx(&inv.out.join("train_noisy.pdnx"), &noisy)?;
    write_pdnx(&inv.out.join("test.pdnx"), &test.trajectories)?;
    if let Some(f) = &train.forcing {
        write_pdnx(&inv.out.join("forcing.pdnx"), f)?;
    }
    write_json(
        &inv.out.join("dataset.json"),
        &DatasetMeta {
            pde,
            seed: inv.seed,
            train_seed,
            test_seed,
            noise_seed,
            noise: d.noise,
            dt: pde.dt,
            solver_dt: pde.solver_dt(),
            train_shape: train.trajectories.shape().to_vec(),
            test_shape: test.trajectories.shape().to_vec(),
            shared_forcing: train.forcing.is_some(),
        },
    )
}

fn check_data_shape(data: &Tensor<f64>, pde: &PdeConfig, what: &str) -> Result<()> {
    let s = data.shape();
    let n = pde.coarse_grid;
    if s.len() != 5 || s[2] != pde.kind.channels() || s[3] != n || s[4] != n {
        return Err(Error::ShapeMismatch {
            op: if what == "train" { "training data" } else { "test data" },
            expected: vec![s.first().copied().unwrap_or(0), s.get(1).copied().unwrap_or(0), pde.kind.channels(), n, n],
            found: s.to_vec(),
        });
    }
    Ok(())
}

fn cmd_train(inv: &Invocation) -> Result<()> {
    let cfg = &inv.config;
    let pde = cfg.pde()?;
    let model_cfg = cfg.model.as_ref().ok_or_else(|| Error::Config("missing model section".into()))?;
    let data = read_input(&inv.input(&cfg.paths.train_data, "train_noisy.pdnx"))?;
    check_data_shape(&data, pde, "train")?;
    let data = Dataset::new(data, None)?;
    let mut model = HybridModel::<f64>::new(pde, model_cfg, inv.seed)?;
    let history = train(&mut model, &data, &cfg.train)?;
    save_checkpoint(&inv.out, "checkpoint", &model, inv.seed)?;
    write_csv(&inv.out.join("loss_history.csv"), &history, &["epoch", "loss", "pred_loss", "reg_loss"])
}

#[derive(Serialize)]
struct ErrorRow {
    trajectory: usize,
    step: usize,
    rel_error: f64,
    failed_flag: u8,
}

fn cmd_evaluate(inv: &Invocation) -> Result<()> {
    let cfg = &inv.config;
    let model = load_checkpoint(&inv.input(&cfg.paths.checkpoint, "checkpoint.json"))?;
    let test = read_input(&inv.input(&cfg.paths.test_data, "test.pdnx"))?;
    check_data_shape(&test, model.pde(), "test")?;
    let test = Dataset::new(test, None)?;
    let report = evaluate(&model, &test, None, FAILURE_THRESHOLD)?;
    let mut rows = Vec::new();
    for (i, errs) in report.errors.iter().enumerate() {
        let mut failed = false;
        for (j, &e) in errs.iter().enumerate() {
            failed |= !(e <= FAILURE_THRESHOLD);
            rows.push(ErrorRow {
                trajectory: i,
                step: j + 1,
                rel_error: e,
                failed_flag: failed as u8,
            });
        }
    }
    write_json(&inv.out.join("report.json"), &report)?;
    write_csv(&inv.out.join("errors.csv"), &rows, &["trajectory", "step", "rel_error", "failed_flag"])
}

#[derive(Serialize)]
struct FrameMeta {
    step: usize,
    file: String,
    bounds: FrameBounds,
}

fn cmd_rollout(inv: &Invocation) -> Result<()> {
    let cfg = &inv.config;
    let rc = cfg.rollout.as_ref().ok_or_else(|| Error::Config("missing rollout section".into()))?;
    if rc.steps < 0 {
        return Err(Error::Config(format!("rollout steps must be non-negative, got {}", rc.steps)));
    }
    let steps = rc.steps as usize;
    let model = load_checkpoint(&inv.input(&cfg.paths.checkpoint, "checkpoint.json"))?;
    let initial = match &cfg.paths.initial_condition {
        Some(p) => read_input(&inv.base.join(p))?,
        None => {
            let test = read_input(&inv.input(&cfg.paths.test_data, "test.pdnx"))?;
            check_data_shape(&test, model.pde(), "test")?;
            let test = Dataset::new(test, None)?;
            if rc.trajectory >= test.len() {
                return Err(Error::Config(format!("trajectory {} not in the test set", rc.trajectory)));
            }
            test.snapshot(rc.trajectory, 0)
        }
    };
    let n = model.pde().coarse_grid;
    if initial.shape() != [model.channels(), n, n] {
        return Err(Error::ShapeMismatch {
            op: "rollout initial condition",
            expected: vec![model.channels(), n, n],
            found: initial.shape().to_vec(),
        });
    }
    let result = rollout(&model, &initial, steps, None)?;
    write_pdnx(&inv.out.join("rollout.pdnx"), &result.states)?;
    let frames = rc.frames.clone().unwrap_or_else(|| if steps == 0 { vec![0] } else { vec![0, steps] });
    let mut meta = Vec::with_capacity(frames.len());
    for &t in &frames {
        if t > steps {
            return Err(Error::Config(format!("frame {t} beyond the {steps} rollout steps")));
        }
        // channels side by side
        let frame = result.states.index_outer(t)?;
        let c = frame.shape()[0];
        let tiled = Tensor::from_fn(&[n, n * c], |i| frame.get(&[i[1] / n, i[0], i[1] % n]));
        let (bytes, bounds) = encode_pgm(&tiled)?;
        let file = format!("frame_{t:05}.pgm");
        write_atomic(&inv.out.join(&file), &bytes)?;
        meta.push(FrameMeta { step: t, file, bounds });
    }
    write_json(&inv.out.join("frames.json"), &meta)
}

#[derive(Serialize)]
struct SchemeRow {
    step: usize,
    total_variation: f64,
    error: f64,
}

#[derive(Serialize)]
struct SchemesSummary<'a> {
    config: &'a AdvectionConfig,
    cfl_warning: bool,
    schemes: Vec<&'static str>,
}

fn cmd_schemes(inv: &Invocation) -> Result<()> {
    let cfg = inv.config.schemes.as_ref().ok_or_else(|| Error::Config("missing schemes section".into()))?;
    let mut ran = Vec::new();
    for scheme in Scheme::ALL {
        // flux-limited and WENO demos are defined for positive speeds only
        if scheme != Scheme::Upwind1 && scheme != Scheme::Upwind2 && !(cfg.mu > 0.0 && cfg.mu <= 1.0) {
            continue;
        }
        let rows: Vec<SchemeRow> = run_demo(cfg, scheme)?
            .into_iter()
            .map(|r| SchemeRow {
                step: r.step,
                total_variation: r.total_variation,
                error: r.error,
            })
            .collect();
        write_csv(&inv.out.join(format!("scheme_{}.csv", scheme.name())), &rows, &["step", "total_variation", "error"])?;
        ran.push(scheme.name());
    }
    write_json(
        &inv.out.join("schemes.json"),
        &SchemesSummary {
            config: cfg,
            cfl_warning: cfg.cfl_violated(),
            schemes: ran,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_overrides_merge() {
        let cfg = ExperimentConfig::from_json(r#"{"pde": {"preset": "burgers", "fine_grid": 128}}"#).unwrap();
        let p = cfg.pde.unwrap();
        assert_eq!(p.fine_grid, 128);
        assert_eq!(p.coefficient, 0.05);
        assert!(ExperimentConfig::from_json(r#"{"pde": {"preset": "burgers", "viscosity": 1}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"sed": 3}"#).is_err());
    }

    #[test]
    fn fn_tfdl_is_a_config_error() {
        let err = ExperimentConfig::from_json(r#"{"pde": {"preset": "fitzhugh_nagumo"}, "model": {"method": "tfdl"}}"#).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(matches!(err, Error::Config(_)));
    }
}
