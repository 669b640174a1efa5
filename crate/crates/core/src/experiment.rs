//! Experiment configuration and the staged pipeline
//! generate → preprocess → train → evaluate → report.
//!
//! A run directory holds everything needed to audit or repeat a run:
//!
//! ```text
//! config.json                 exact configuration
//! manifest.json               per-stage status
//! cohort.csv                  raw episodes
//! registry.json               feature routing and normalization statistics
//! imputation_{train,validation}.json
//! {train,validation}_{shaped,terminal_only}.ventrl
//! checkpoints/<arm>_seed<k>.ckpt, logs/<arm>_seed<k>.jsonl
//! values.csv, physician.json, ood_split.json, ood_values.csv
//! action_distribution.csv, ood_action_distribution.csv
//! summary.csv, summary.txt, plots/
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::algorithms::{train_with_log, Algo, GreedyPolicy, TrainConfig};
use crate::dataset::{
    default_feature_names, default_features, generate_synthetic_cohort, load_dataset,
    load_episodes, save_dataset, save_episodes, BehaviorProfile, EpisodeFormat, RawEpisode,
    ReplayDataset, RewardMode,
};
use crate::evaluation::{
    action_distribution, dataset_states, fqe_fit, histograms_csv, initial_state_value, ood_split,
    overestimation_report, physician_distribution, physician_return, ActionHistogram, EvalPolicy,
    FqeConfig, OverestimationInput, ValueReport, OVERESTIMATION_THRESHOLD,
};
use crate::mdp::{build_replay, ActionBinning, RewardConfig, Setting, BINS_PER_SETTING};
use crate::nn::{load_checkpoint, save_checkpoint};
use crate::preprocess::{split_train_validation, FittedPreprocessor, PreprocessConfig};
use crate::{Error, Result};

/// Prefix of environment variables that override configuration keys, with
/// `__` separating path segments: `VENTRL__cohort__n_patients=200`.
pub const ENV_PREFIX: &str = "VENTRL__";

pub const PHYSICIAN: &str = "physician";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub n_patients: usize,
    /// Seeds cohort generation and the train/validation split.
    pub seed: u64,
    pub profile: BehaviorProfile,
    /// Episode file (CSV or JSONL) used instead of a synthetic cohort.
    pub input: Option<PathBuf>,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            n_patients: 1000,
            seed: 0,
            profile: BehaviorProfile::noisy_suboptimal(),
            input: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmConfig {
    pub name: String,
    pub algo: Algo,
    /// Reward variant of the training dataset.
    pub reward_mode: RewardMode,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ArmConfig {
    fn slug(&self) -> String {
        self.name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub cohort: CohortConfig,
    pub preprocess: PreprocessConfig,
    pub binning: ActionBinning,
    pub reward: RewardConfig,
    pub arms: Vec<ArmConfig>,
    pub fqe: FqeConfig,
    /// Split on which policies are evaluated.
    pub evaluate_on: EvalSplit,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let arm = |name: &str, algo, reward_mode| ArmConfig {
            name: name.into(),
            algo,
            reward_mode,
            train: TrainConfig::default(),
        };
        ExperimentConfig {
            cohort: CohortConfig::default(),
            preprocess: PreprocessConfig::default(),
            binning: ActionBinning::default(),
            reward: RewardConfig::default(),
            arms: vec![
                arm("BC", Algo::Bc, RewardMode::Shaped),
                arm("DeepVent-", Algo::Cql, RewardMode::TerminalOnly),
                arm("DeepVent", Algo::Cql, RewardMode::Shaped),
                arm("DDQN", Algo::Ddqn, RewardMode::Shaped),
            ],
            fqe: FqeConfig::default(),
            evaluate_on: EvalSplit::Train,
            seeds: vec![0, 1, 2, 3, 4],
            out: PathBuf::from("runs/experiment"),
        }
    }
}

/// Overwrite `root` at the dotted path given by `key` segments. Numeric
/// segments index arrays. Values parse as JSON, falling back to strings.
pub fn apply_override(root: &mut Value, key: &[&str], raw: &str) -> Result<()> {
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    for (i, seg) in key.iter().enumerate() {
        let last = i + 1 == key.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(seg.to_string(), parsed);
                    return Ok(());
                }
                map.entry(seg.to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| Error::Param(format!("override segment {seg:?} must index an array")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| Error::Param(format!("override index {idx} out of range ({len})")))?;
                if last {
                    *slot = parsed;
                    return Ok(());
                }
                slot
            }
            _ => {
                return Err(Error::Param(format!(
                    "override path {} crosses a scalar",
                    key.join(".")
                )))
            }
        };
    }
    Err(Error::Param("empty override key".into()))
}

impl ExperimentConfig {
    /// Parse JSON, filling omitted fields with defaults, then apply
    /// `overrides` as `(dotted key with "__" separators, value)` pairs.
    pub fn from_json_with_overrides<I>(text: &str, overrides: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut value: Value = serde_json::from_str(text)?;
        if !value.is_object() {
            return Err(Error::Schema("configuration must be a JSON object".into()));
        }
        // Materialize defaults so overrides can address nested fields.
        let mut full = serde_json::to_value(serde_json::from_value::<ExperimentConfig>(value.clone())?)?;
        merge(&mut full, value.take());
        for (key, raw) in overrides {
            let segs: Vec<&str> = key.split("__").collect();
            apply_override(&mut full, &segs, &raw)?;
        }
        let cfg: ExperimentConfig = serde_json::from_value(full)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a configuration file with `VENTRL__` environment overrides.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_with_overrides(&text, env_overrides())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.binning.validate()?;
        self.reward.validate()?;
        self.fqe.validate()?;
        if self.cohort.input.is_none() {
            self.cohort.profile.validate()?;
        }
        if self.seeds.is_empty() {
            return Err(Error::Param("at least one seed is required".into()));
        }
        let mut names = BTreeMap::new();
        for arm in &self.arms {
            arm.train.validate()?;
            if names.insert(arm.slug(), &arm.name).is_some() {
                return Err(Error::Param(format!("duplicate arm name {:?}", arm.name)));
            }
            if arm.slug() == PHYSICIAN {
                return Err(Error::Param("arm name \"physician\" is reserved".into()));
            }
        }
        Ok(())
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

/// `VENTRL__a__b=v` environment variables as `("a__b", "v")`.
pub fn env_overrides() -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = std::env::vars()
        .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|k| (k.to_string(), v)))
        .collect();
    out.sort();
    out
}

// ---------------------------------------------------------------------------
// Run directories and manifest
// ---------------------------------------------------------------------------

/// Pick the directory for a new run. An existing non-empty `out` is replaced
/// when `overwrite` is set; otherwise the first free `out-N` is used.
pub fn prepare_run_dir(out: &Path, overwrite: bool) -> Result<PathBuf> {
    let occupied = |p: &Path| {
        fs::read_dir(p)
            .map(|mut d| d.next().is_some())
            .unwrap_or(p.exists())
    };
    let dir = if !occupied(out) {
        out.to_path_buf()
    } else if overwrite {
        fs::remove_dir_all(out).map_err(|e| Error::io(out, e))?;
        out.to_path_buf()
    } else {
        let name = out
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        (1..)
            .map(|i| out.with_file_name(format!("{name}-{i}")))
            .find(|p| !occupied(p))
            .expect("unbounded search")
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: StageStatus,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        match fs::read_to_string(&path) {
            Ok(text) => Ok(serde_json::from_str(&text)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Manifest {
                format: "ventrl-run v1".into(),
                stages: Vec::new(),
            }),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    /// Record a stage outcome, replacing an earlier record of the same stage.
    pub fn record(&mut self, stage: &str, outcome: &Result<()>) {
        self.stages.retain(|s| s.stage != stage);
        self.stages.push(StageRecord {
            stage: stage.into(),
            status: if outcome.is_ok() { StageStatus::Ok } else { StageStatus::Failed },
            message: outcome.as_ref().err().map(|e| e.to_string()),
        });
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join("manifest.json"), &serde_json::to_string_pretty(self)?)
    }
}

/// Run `f` as a named stage and record its outcome in the run manifest.
pub fn run_stage<T>(dir: &Path, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let result = f();
    let mut manifest = Manifest::load(dir)?;
    manifest.record(stage, &result.as_ref().map(|_| ()).map_err(clone_err));
    manifest.save(dir)?;
    result
}

fn clone_err(e: &Error) -> Error {
    Error::Data(e.to_string())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_config(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    write_file(&dir.join("config.json"), &cfg.to_json()?)
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

pub const COHORT_FILE: &str = "cohort.csv";

/// Write the cohort (synthetic or loaded) to `dir/cohort.csv`.
pub fn generate_stage(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<RawEpisode>> {
    let names = default_feature_names();
    let episodes = match &cfg.cohort.input {
        Some(path) => {
            let format = EpisodeFormat::from_path(path).ok_or_else(|| {
                Error::Param(format!("cannot tell the format of {}", path.display()))
            })?;
            load_episodes(path, format, &names)?
        }
        None => generate_synthetic_cohort(cfg.cohort.n_patients, cfg.cohort.seed, &cfg.cohort.profile)?,
    };
    save_episodes(&episodes, dir.join(COHORT_FILE), EpisodeFormat::Csv, &names)?;
    Ok(episodes)
}

/// Replay datasets of both reward variants for both splits.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub train_shaped: ReplayDataset,
    pub train_terminal: ReplayDataset,
    pub validation_shaped: ReplayDataset,
    pub validation_terminal: ReplayDataset,
}

impl Datasets {
    const FILES: [&'static str; 4] = [
        "train_shaped.ventrl",
        "train_terminal_only.ventrl",
        "validation_shaped.ventrl",
        "validation_terminal_only.ventrl",
    ];

    pub fn training(&self, mode: RewardMode) -> &ReplayDataset {
        match mode {
            RewardMode::Shaped => &self.train_shaped,
            RewardMode::TerminalOnly => &self.train_terminal,
        }
    }

    /// Terminal-only dataset of the evaluation split.
    pub fn evaluation(&self, split: EvalSplit) -> &ReplayDataset {
        match split {
            EvalSplit::Train => &self.train_terminal,
            EvalSplit::Validation => &self.validation_terminal,
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let [a, b, c, d] = Self::FILES.map(|f| load_dataset(dir.join(f)));
        Ok(Datasets {
            train_shaped: a?,
            train_terminal: b?,
            validation_shaped: c?,
            validation_terminal: d?,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let all = [
            &self.train_shaped,
            &self.train_terminal,
            &self.validation_shaped,
            &self.validation_terminal,
        ];
        for (ds, f) in all.into_iter().zip(Self::FILES) {
            save_dataset(ds, dir.join(f))?;
        }
        Ok(())
    }
}

/// Split, impute, normalize and build the replay datasets.
pub fn preprocess_episodes(cfg: &ExperimentConfig, episodes: &[RawEpisode]) -> Result<(Datasets, FittedPreprocessor)> {
    let (train, validation) =
        split_train_validation(episodes, cfg.preprocess.train_fraction, cfg.cohort.seed)?;
    let pre = FittedPreprocessor::fit(&train, default_features(), cfg.preprocess.clone())?;
    let (train_eps, _) = pre.transform(&train, &cfg.binning)?;
    let (val_eps, _) = pre.transform(&validation, &cfg.binning)?;
    let build = |eps, mode| build_replay(eps, &cfg.reward, mode);
    let datasets = Datasets {
        train_shaped: build(&train_eps, RewardMode::Shaped)?,
        train_terminal: build(&train_eps, RewardMode::TerminalOnly)?,
        validation_shaped: build(&val_eps, RewardMode::Shaped)?,
        validation_terminal: build(&val_eps, RewardMode::TerminalOnly)?,
    };
    Ok((datasets, pre))
}

/// Preprocess `dir/cohort.csv` and write datasets and audit files.
pub fn preprocess_stage(cfg: &ExperimentConfig, dir: &Path) -> Result<Datasets> {
    let names = default_feature_names();
    let episodes = load_episodes(dir.join(COHORT_FILE), EpisodeFormat::Csv, &names)?;
    let (datasets, pre) = preprocess_episodes(cfg, &episodes)?;
    let (train, validation) =
        split_train_validation(&episodes, cfg.preprocess.train_fraction, cfg.cohort.seed)?;
    write_file(&dir.join("registry.json"), &serde_json::to_string_pretty(&pre.registry)?)?;
    write_file(&dir.join("imputation_train.json"), &pre.impute(&train).1.to_json()?)?;
    write_file(&dir.join("imputation_validation.json"), &pre.impute(&validation).1.to_json()?)?;
    datasets.save(dir)?;
    Ok(datasets)
}

fn checkpoint_path(dir: &Path, arm: &ArmConfig, seed: u64) -> PathBuf {
    dir.join("checkpoints").join(format!("{}_seed{seed}.ckpt", arm.slug()))
}

/// Train every arm (optionally only those using `only`) for every seed.
pub fn train_stage(cfg: &ExperimentConfig, dir: &Path, datasets: &Datasets, only: Option<Algo>) -> Result<()> {
    for arm in cfg.arms.iter().filter(|a| only.is_none_or(|o| o == a.algo)) {
        for &seed in &cfg.seeds {
            let tc = TrainConfig {
                seed,
                ..arm.train.clone()
            };
            let log_path = dir.join("logs").join(format!("{}_seed{seed}.jsonl", arm.slug()));
            fs::create_dir_all(log_path.parent().expect("parent")).map_err(|e| Error::io(&log_path, e))?;
            let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
            let mut sink = BufWriter::new(file);
            log::info!("training {} (seed {seed})", arm.name);
            let ckpt = checkpoint_path(dir, arm, seed);
            fs::create_dir_all(ckpt.parent().expect("parent")).map_err(|e| Error::io(&ckpt, e))?;
            match train_with_log(datasets.training(arm.reward_mode), &tc, arm.algo, Some(&mut sink)) {
                Ok(outcome) => save_checkpoint(&outcome.network, &ckpt)?,
                Err(Error::Diverged {
                    step,
                    reason,
                    last_finite,
                }) => {
                    save_checkpoint(&last_finite, ckpt.with_extension("diverged.ckpt"))?;
                    return Err(Error::Diverged {
                        step,
                        reason: format!("{} seed {seed}: {reason}", arm.name),
                        last_finite,
                    });
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(())
}

/// One evaluated (arm, seed) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunValue {
    pub policy: String,
    pub seed: u64,
    pub mean: f64,
    pub std_error: f64,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

/// FQE every trained policy on the terminal-only evaluation split, plus the
/// physician return, OOD diagnostics and action histograms.
pub fn evaluate_stage(cfg: &ExperimentConfig, dir: &Path, datasets: &Datasets) -> Result<Vec<RunValue>> {
    let eval = datasets.evaluation(cfg.evaluate_on);
    let physician = physician_return(eval, cfg.fqe.gamma);
    write_file(&dir.join("physician.json"), &serde_json::to_string_pretty(&physician)?)?;
    let ood = ood_split(eval);
    write_file(&dir.join("ood_split.json"), &serde_json::to_string_pretty(&ood)?)?;

    let states = dataset_states(eval);
    let ood_states = eval.subset(&ood.outliers)?;
    let ood_states = dataset_states(&ood_states);
    let mut hist = vec![(PHYSICIAN.to_string(), physician_distribution(eval))];
    let mut ood_hist = vec![(
        PHYSICIAN.to_string(),
        physician_distribution(&eval.subset(&ood.outliers)?),
    )];

    let mut values = Vec::new();
    let mut ood_csv = String::from("policy,seed,id_mean,ood_mean,own_q_id_mean,own_q_ood_mean,threshold\n");
    for arm in &cfg.arms {
        let mut arm_hist = ActionHistogram::default();
        let mut arm_ood_hist = ActionHistogram::default();
        for &seed in &cfg.seeds {
            let net = load_checkpoint(checkpoint_path(dir, arm, seed))?;
            let policy = GreedyPolicy::new(net);
            let fqe_cfg = FqeConfig {
                seed: cfg.fqe.seed.wrapping_add(seed),
                ..cfg.fqe.clone()
            };
            log::info!("evaluating {} (seed {seed})", arm.name);
            let est = fqe_fit(eval, EvalPolicy::Agent(&policy), &fqe_cfg)?;
            let report = initial_state_value(&est, eval)?;
            values.push(RunValue {
                policy: arm.name.clone(),
                seed,
                mean: report.mean,
                std_error: report.std_error,
            });
            if arm.algo != Algo::Bc {
                let own_q = Some(&policy.network);
                let rows = overestimation_report(
                    &[OverestimationInput {
                        name: arm.name.clone(),
                        estimator: &est,
                        own_q,
                    }],
                    eval,
                    &ood,
                )?;
                for r in rows {
                    let _ = writeln!(
                        ood_csv,
                        "{},{seed},{},{},{},{},{:.1}",
                        r.policy,
                        fmt_opt(r.id_mean),
                        fmt_opt(r.ood_mean),
                        fmt_opt(r.own_q_id_mean),
                        fmt_opt(r.own_q_ood_mean),
                        r.threshold
                    );
                }
            }
            let h = action_distribution(&policy, states.view())?;
            let ho = action_distribution(&policy, ood_states.view())?;
            for s in 0..3 {
                for b in 0..BINS_PER_SETTING {
                    arm_hist.counts[s][b] += h.counts[s][b];
                    arm_ood_hist.counts[s][b] += ho.counts[s][b];
                }
            }
        }
        hist.push((arm.name.clone(), arm_hist));
        ood_hist.push((arm.name.clone(), arm_ood_hist));
    }

    let mut values_csv = String::from("policy,seed,mean,std_error\n");
    for v in &values {
        let _ = writeln!(values_csv, "{},{},{:.6},{:.6}", v.policy, v.seed, v.mean, v.std_error);
    }
    write_file(&dir.join("values.csv"), &values_csv)?;
    write_file(&dir.join("ood_values.csv"), &ood_csv)?;
    write_file(&dir.join("action_distribution.csv"), &histograms_csv(&hist, &cfg.binning))?;
    write_file(&dir.join("ood_action_distribution.csv"), &histograms_csv(&ood_hist, &cfg.binning))?;
    Ok(values)
}

/// One row of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub policy: String,
    pub mean: f64,
    pub std_error: f64,
    pub runs: usize,
}

fn read_values(dir: &Path) -> Result<Vec<RunValue>> {
    let mut rdr = csv::Reader::from_path(dir.join("values.csv"))?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Summarize evaluation outputs as `summary.csv` and `summary.txt`, one row
/// for the physician and one per arm (mean ± standard error across seeds),
/// then emit plot data.
pub fn report_stage(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<SummaryRow>> {
    let physician: ValueReport = serde_json::from_str(&read_file(&dir.join("physician.json"))?)?;
    let values = read_values(dir)?;
    let mut rows = vec![SummaryRow {
        policy: PHYSICIAN.into(),
        mean: physician.mean,
        std_error: physician.std_error,
        runs: 1,
    }];
    for arm in &cfg.arms {
        let runs: Vec<ValueReport> = values
            .iter()
            .filter(|v| v.policy == arm.name)
            .map(|v| ValueReport::from_values(vec![v.mean]))
            .collect();
        if runs.is_empty() {
            continue;
        }
        let agg = ValueReport::across_runs(&runs);
        rows.push(SummaryRow {
            policy: arm.name.clone(),
            mean: agg.mean,
            std_error: agg.std_error,
            runs: runs.len(),
        });
    }
    let mut csv_out = String::from("policy,mean,std_error,runs\n");
    let mut txt = String::from("Mean initial state value (FQE, terminal-only rewards)\n\n");
    let _ = writeln!(txt, "{:<14} {:>10} {:>10} {:>5}", "policy", "mean", "std.err", "runs");
    for r in &rows {
        let _ = writeln!(csv_out, "{},{:.6},{:.6},{}", r.policy, r.mean, r.std_error, r.runs);
        let _ = writeln!(txt, "{:<14} {:>10.4} {:>10.4} {:>5}", r.policy, r.mean, r.std_error, r.runs);
    }
    write_file(&dir.join("summary.csv"), &csv_out)?;
    write_file(&dir.join("summary.txt"), &txt)?;
    emit_plots(dir)?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Plots
// ---------------------------------------------------------------------------

const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

/// Grouped bar chart: one group per category, one bar per series.
fn grouped_bar_svg(title: &str, categories: &[String], series: &[(String, Vec<f64>)], hline: Option<f64>) -> String {
    let (w, h, left, bottom, top) = (720.0, 360.0, 60.0, 60.0, 40.0);
    let plot_w = w - left - 20.0;
    let plot_h = h - top - bottom;
    let max = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .chain(hline)
        .fold(0.0f64, f64::max)
        .max(1e-9)
        * 1.1;
    let min = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .fold(0.0f64, f64::min)
        * 1.1;
    let y = |v: f64| top + plot_h * (max - v) / (max - min);
    let group_w = plot_w / categories.len().max(1) as f64;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n\
         <line x1=\"{left}\" y1=\"{:.1}\" x2=\"{}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        w / 2.0,
        y(0.0),
        w - 20.0,
        y(0.0)
    );
    for (c, cat) in categories.iter().enumerate() {
        let x0 = left + group_w * c as f64 + group_w * 0.1;
        for (k, (_, vals)) in series.iter().enumerate() {
            let v = vals.get(c).copied().unwrap_or(0.0);
            let (y0, y1) = (y(v.max(0.0)), y(v.min(0.0)));
            let _ = writeln!(
                s,
                "<rect x=\"{:.1}\" y=\"{y0:.1}\" width=\"{bar_w:.1}\" height=\"{:.1}\" fill=\"{}\"/>",
                x0 + bar_w * k as f64,
                (y1 - y0).max(0.0),
                PALETTE[k % PALETTE.len()]
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{cat}</text>",
            left + group_w * (c as f64 + 0.5),
            h - bottom + 16.0
        );
    }
    if let Some(t) = hline {
        let _ = writeln!(
            s,
            "<line x1=\"{left}\" y1=\"{:.1}\" x2=\"{}\" y2=\"{:.1}\" stroke=\"red\" stroke-dasharray=\"6,4\"/>",
            y(t),
            w - 20.0,
            y(t)
        );
    }
    for (k, (name, _)) in series.iter().enumerate() {
        let ly = h - 20.0;
        let lx = left + 110.0 * k as f64;
        let _ = writeln!(
            s,
            "<rect x=\"{lx:.1}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{:.1}\" y=\"{ly:.1}\">{name}</text>",
            ly - 9.0,
            PALETTE[k % PALETTE.len()],
            lx + 14.0
        );
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Deserialize)]
struct HistRow {
    policy: String,
    setting: String,
    bin: usize,
    label: String,
    fraction: f64,
}

#[derive(Debug, Deserialize)]
struct OodRow {
    policy: String,
    id_mean: Option<f64>,
    ood_mean: Option<f64>,
}

fn ordered_unique<'a>(names: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for n in names {
        if !out.iter().any(|o| o == n) {
            out.push(n.to_string());
        }
    }
    out
}

/// Write grouped-bar data (CSV) and charts (SVG) for action distributions and
/// ID/OOD values into `dir/plots`. Returns the written files; with no
/// policies nothing is written and a warning is logged.
pub fn emit_plots(dir: &Path) -> Result<Vec<PathBuf>> {
    let needed = ["action_distribution.csv", "ood_values.csv"];
    let absent: Vec<&str> = needed.iter().copied().filter(|f| !dir.join(f).exists()).collect();
    if !absent.is_empty() {
        return Err(Error::Data(format!("missing evaluation outputs: {}", absent.join(", "))));
    }
    let hist: Vec<HistRow> = csv::Reader::from_path(dir.join(needed[0]))?
        .deserialize()
        .collect::<std::result::Result<_, _>>()?;
    let ood: Vec<OodRow> = csv::Reader::from_path(dir.join(needed[1]))?
        .deserialize()
        .collect::<std::result::Result<_, _>>()?;
    let policies = ordered_unique(hist.iter().map(|r| r.policy.as_str()));
    if policies.is_empty() {
        log::warn!("no policies to plot in {}", dir.display());
        return Ok(Vec::new());
    }
    let plots = dir.join("plots");
    let mut written = Vec::new();
    for setting in Setting::ALL {
        let rows: Vec<&HistRow> = hist.iter().filter(|r| r.setting == setting.name()).collect();
        let mut labels = vec![String::new(); BINS_PER_SETTING];
        for r in &rows {
            labels[r.bin] = r.label.clone();
        }
        let series: Vec<(String, Vec<f64>)> = policies
            .iter()
            .map(|p| {
                let mut v = vec![0.0; BINS_PER_SETTING];
                for r in rows.iter().filter(|r| &r.policy == p) {
                    v[r.bin] = r.fraction;
                }
                (p.clone(), v)
            })
            .collect();
        let mut data = format!("bin,label,{}\n", policies.join(","));
        for b in 0..BINS_PER_SETTING {
            let cells: Vec<String> = series.iter().map(|(_, v)| format!("{:.6}", v[b])).collect();
            let _ = writeln!(data, "{b},{},{}", labels[b], cells.join(","));
        }
        let csv_path = plots.join(format!("actions_{}.csv", setting.name()));
        let svg_path = plots.join(format!("actions_{}.svg", setting.name()));
        write_file(&csv_path, &data)?;
        write_file(
            &svg_path,
            &grouped_bar_svg(&format!("{} bins", setting.name()), &labels, &series, None),
        )?;
        written.extend([csv_path, svg_path]);
    }

    let ood_policies = ordered_unique(ood.iter().map(|r| r.policy.as_str()));
    let mean_of = |p: &str, f: fn(&OodRow) -> Option<f64>| {
        let v: Vec<f64> = ood.iter().filter(|r| r.policy == p).filter_map(f).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let mut data = String::from("policy,id_mean,ood_mean,threshold\n");
    let mut id_series = Vec::new();
    let mut ood_series = Vec::new();
    for p in &ood_policies {
        let (i, o) = (mean_of(p, |r| r.id_mean), mean_of(p, |r| r.ood_mean));
        let _ = writeln!(data, "{p},{i:.6},{o:.6},{OVERESTIMATION_THRESHOLD:.1}");
        id_series.push(i);
        ood_series.push(o);
    }
    let csv_path = plots.join("ood_values.csv");
    write_file(&csv_path, &data)?;
    written.push(csv_path);
    if !ood_policies.is_empty() {
        let svg_path = plots.join("ood_values.svg");
        write_file(
            &svg_path,
            &grouped_bar_svg(
                "Mean initial value, ID vs OOD",
                &ood_policies,
                &[("ID".into(), id_series), ("OOD".into(), ood_series)],
                Some(OVERESTIMATION_THRESHOLD),
            ),
        )?;
        written.push(svg_path);
    }
    Ok(written)
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

/// Run every stage in a fresh run directory and return its path. A failing
/// stage keeps earlier outputs and is recorded in `manifest.json`.
pub fn run_pipeline(cfg: &ExperimentConfig, overwrite: bool) -> Result<PathBuf> {
    cfg.validate()?;
    let dir = prepare_run_dir(&cfg.out, overwrite)?;
    write_config(cfg, &dir)?;
    run_stage(&dir, "generate", || generate_stage(cfg, &dir))?;
    let datasets = run_stage(&dir, "preprocess", || preprocess_stage(cfg, &dir))?;
    run_stage(&dir, "train", || train_stage(cfg, &dir, &datasets, None))?;
    run_stage(&dir, "evaluate", || evaluate_stage(cfg, &dir, &datasets))?;
    run_stage(&dir, "report", || report_stage(cfg, &dir))?;
    Ok(dir)
}
