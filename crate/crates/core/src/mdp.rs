//! MDP construction: ventilator action space, modified APACHE II severity
//! score, reward function and replay-dataset assembly.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::{EpisodeSpan, ReplayDataset, RewardMode, Transition};
use crate::{Error, Result};

/// Bins per ventilator setting.
pub const BINS_PER_SETTING: usize = 7;
/// Size of the discrete action space (7 × 7 × 7).
pub const N_ACTIONS: usize = BINS_PER_SETTING * BINS_PER_SETTING * BINS_PER_SETTING;

/// Normalized state vector in feature-registry order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector(pub Vec<f64>);

impl StateVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("state entry {i} is not finite")));
        }
        Ok(StateVector(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// The three controlled ventilator settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Vt,
    Fio2,
    Peep,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Setting::Vt, Setting::Fio2, Setting::Peep];

    pub fn name(self) -> &'static str {
        match self {
            Setting::Vt => "vt",
            Setting::Fio2 => "fio2",
            Setting::Peep => "peep",
        }
    }
}

/// A (Vt, FiO2, PEEP) bin triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub vt: u8,
    pub fio2: u8,
    pub peep: u8,
}

impl Action {
    pub fn new(vt: u8, fio2: u8, peep: u8) -> Result<Self> {
        for (name, b) in [("vt", vt), ("fio2", fio2), ("peep", peep)] {
            if b as usize >= BINS_PER_SETTING {
                return Err(Error::Domain(format!("{name} bin {b} outside 0..7")));
            }
        }
        Ok(Action { vt, fio2, peep })
    }

    /// `vt·49 + fio2·7 + peep`.
    pub fn flat(self) -> usize {
        self.vt as usize * 49 + self.fio2 as usize * 7 + self.peep as usize
    }

    pub fn from_flat(index: usize) -> Result<Self> {
        if index >= N_ACTIONS {
            return Err(Error::Domain(format!(
                "action index {index} outside 0..{N_ACTIONS}"
            )));
        }
        Ok(Action {
            vt: (index / 49) as u8,
            fio2: ((index / 7) % 7) as u8,
            peep: (index % 7) as u8,
        })
    }

    pub fn bin(self, setting: Setting) -> usize {
        match setting {
            Setting::Vt => self.vt as usize,
            Setting::Fio2 => self.fio2 as usize,
            Setting::Peep => self.peep as usize,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(vt={}, fio2={}, peep={})", self.vt, self.fio2, self.peep)
    }
}

/// `action_from_flat` in function form.
pub fn action_from_flat(index: usize) -> Result<Action> {
    Action::from_flat(index)
}

pub fn flat_from_action(action: Action) -> usize {
    action.flat()
}

/// Seven half-open bins for one setting: `[0, c0), [c0, c1), …, [c5, ∞)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingBins {
    /// The six interior cut points, strictly ascending and positive.
    pub cuts: Vec<f64>,
}

impl SettingBins {
    pub fn new(cuts: Vec<f64>) -> Result<Self> {
        let bins = SettingBins { cuts };
        bins.validate()?;
        Ok(bins)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cuts.len() != BINS_PER_SETTING - 1 {
            return Err(Error::Param(format!(
                "expected {} cut points, got {}",
                BINS_PER_SETTING - 1,
                self.cuts.len()
            )));
        }
        let mut prev = 0.0;
        for &c in &self.cuts {
            if !c.is_finite() || c <= prev {
                return Err(Error::Param(format!(
                    "bin edges must be finite and strictly ascending from 0: {:?}",
                    self.cuts
                )));
            }
            prev = c;
        }
        Ok(())
    }

    pub fn bin_of(&self, value: f64) -> usize {
        self.cuts.iter().take_while(|&&c| value >= c).count()
    }

    /// Midpoint of a bin; the open top bin extends by the width of its neighbour.
    pub fn representative(&self, bin: usize) -> f64 {
        let lower = if bin == 0 { 0.0 } else { self.cuts[bin - 1] };
        let upper = if bin < self.cuts.len() {
            self.cuts[bin]
        } else {
            let n = self.cuts.len();
            self.cuts[n - 1] + (self.cuts[n - 1] - self.cuts[n - 2])
        };
        0.5 * (lower + upper)
    }

    pub fn label(&self, bin: usize) -> String {
        let lower = if bin == 0 { 0.0 } else { self.cuts[bin - 1] };
        if bin < self.cuts.len() {
            format!("{}-{}", lower, self.cuts[bin])
        } else {
            format!(">{}", lower)
        }
    }
}

/// Bin-edge tables for all three settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBinning {
    pub vt: SettingBins,
    pub fio2: SettingBins,
    pub peep: SettingBins,
}

impl Default for ActionBinning {
    fn default() -> Self {
        ActionBinning {
            // ml/kg ideal body weight
            vt: SettingBins {
                cuts: vec![2.5, 5.0, 7.5, 10.0, 12.5, 15.0],
            },
            // percent
            fio2: SettingBins {
                cuts: vec![30.0, 35.0, 40.0, 45.0, 50.0, 55.0],
            },
            // cmH2O
            peep: SettingBins {
                cuts: vec![5.0, 7.0, 9.0, 11.0, 13.0, 15.0],
            },
        }
    }
}

impl ActionBinning {
    pub fn validate(&self) -> Result<()> {
        self.vt.validate()?;
        self.fio2.validate()?;
        self.peep.validate()
    }

    pub fn setting(&self, setting: Setting) -> &SettingBins {
        match setting {
            Setting::Vt => &self.vt,
            Setting::Fio2 => &self.fio2,
            Setting::Peep => &self.peep,
        }
    }

    pub fn discretize(&self, vt_raw: f64, fio2_raw: f64, peep_raw: f64) -> Result<Action> {
        for (name, v) in [("vt", vt_raw), ("fio2", fio2_raw), ("peep", peep_raw)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Domain(format!(
                    "{name} setting must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(Action {
            vt: self.vt.bin_of(vt_raw) as u8,
            fio2: self.fio2.bin_of(fio2_raw) as u8,
            peep: self.peep.bin_of(peep_raw) as u8,
        })
    }

    /// Representative raw settings for an action.
    pub fn representative(&self, action: Action) -> (f64, f64, f64) {
        (
            self.vt.representative(action.vt as usize),
            self.fio2.representative(action.fio2 as usize),
            self.peep.representative(action.peep as usize),
        )
    }
}

/// Map raw ventilator settings to an action under the default edge tables.
pub fn discretize_action(vt_raw: f64, fio2_raw: f64, peep_raw: f64) -> Result<Action> {
    ActionBinning::default().discretize(vt_raw, fio2_raw, peep_raw)
}

// ---------------------------------------------------------------------------
// Modified APACHE II
// ---------------------------------------------------------------------------

/// Inputs to the nine-variable modified APACHE II acute physiology score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApacheInput {
    /// °C
    pub temperature: f64,
    /// mmHg
    pub mean_bp: f64,
    /// beats per minute
    pub heart_rate: f64,
    pub arterial_ph: f64,
    /// mEq/L
    pub sodium: f64,
    /// mEq/L
    pub potassium: f64,
    /// mg/dL
    pub creatinine: f64,
    /// 10³/mm³
    pub wbc: f64,
    pub gcs: u8,
}

/// Largest attainable modified score: eight variables at 4 points plus GCS 3.
pub const APACHE_MAX: i32 = 44;
pub const APACHE_MIN: i32 = 0;

// Each table lists (lower bound, points) from the top band downward; the first
// band whose bound the value reaches wins, and the final entry is the floor.
const TEMPERATURE: &[(f64, i32)] = &[
    (41.0, 4),
    (39.0, 3),
    (38.5, 1),
    (36.0, 0),
    (34.0, 1),
    (32.0, 2),
    (30.0, 3),
    (f64::NEG_INFINITY, 4),
];
const MEAN_BP: &[(f64, i32)] = &[
    (160.0, 4),
    (130.0, 3),
    (110.0, 2),
    (70.0, 0),
    (50.0, 2),
    (f64::NEG_INFINITY, 4),
];
const HEART_RATE: &[(f64, i32)] = &[
    (180.0, 4),
    (140.0, 3),
    (110.0, 2),
    (70.0, 0),
    (55.0, 2),
    (40.0, 3),
    (f64::NEG_INFINITY, 4),
];
const ARTERIAL_PH: &[(f64, i32)] = &[
    (7.7, 4),
    (7.6, 3),
    (7.5, 1),
    (7.33, 0),
    (7.25, 2),
    (7.15, 3),
    (f64::NEG_INFINITY, 4),
];
const SODIUM: &[(f64, i32)] = &[
    (180.0, 4),
    (160.0, 3),
    (155.0, 2),
    (150.0, 1),
    (130.0, 0),
    (120.0, 2),
    (111.0, 3),
    (f64::NEG_INFINITY, 4),
];
const POTASSIUM: &[(f64, i32)] = &[
    (7.0, 4),
    (6.0, 3),
    (5.5, 1),
    (3.5, 0),
    (3.0, 1),
    (2.5, 2),
    (f64::NEG_INFINITY, 4),
];
const CREATININE: &[(f64, i32)] = &[
    (3.5, 4),
    (2.0, 3),
    (1.5, 2),
    (0.6, 0),
    (f64::NEG_INFINITY, 2),
];
const WBC: &[(f64, i32)] = &[
    (40.0, 4),
    (20.0, 2),
    (15.0, 1),
    (3.0, 0),
    (1.0, 2),
    (f64::NEG_INFINITY, 4),
];

fn lookup(table: &[(f64, i32)], value: f64) -> i32 {
    table
        .iter()
        .find(|(lower, _)| value >= *lower)
        .map(|&(_, pts)| pts)
        .unwrap_or(table[table.len() - 1].1)
}

/// One retained APACHE II variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApacheVariable {
    Temperature,
    MeanBp,
    HeartRate,
    ArterialPh,
    Sodium,
    Potassium,
    Creatinine,
    Wbc,
    Gcs,
}

impl ApacheVariable {
    pub const ALL: [ApacheVariable; 9] = [
        ApacheVariable::Temperature,
        ApacheVariable::MeanBp,
        ApacheVariable::HeartRate,
        ApacheVariable::ArterialPh,
        ApacheVariable::Sodium,
        ApacheVariable::Potassium,
        ApacheVariable::Creatinine,
        ApacheVariable::Wbc,
        ApacheVariable::Gcs,
    ];

    /// Name of the matching column in the feature registry.
    pub fn feature_name(self) -> &'static str {
        match self {
            ApacheVariable::Temperature => "temperature",
            ApacheVariable::MeanBp => "mean_bp",
            ApacheVariable::HeartRate => "heart_rate",
            ApacheVariable::ArterialPh => "ph",
            ApacheVariable::Sodium => "sodium",
            ApacheVariable::Potassium => "potassium",
            ApacheVariable::Creatinine => "creatinine",
            ApacheVariable::Wbc => "wbc",
            ApacheVariable::Gcs => "gcs",
        }
    }
}

/// Points contributed by a single variable. GCS values are rounded and must
/// lie in 3..=15.
pub fn variable_points(var: ApacheVariable, value: f64) -> Result<i32> {
    Ok(match var {
        ApacheVariable::Temperature => lookup(TEMPERATURE, value),
        ApacheVariable::MeanBp => lookup(MEAN_BP, value),
        ApacheVariable::HeartRate => lookup(HEART_RATE, value),
        ApacheVariable::ArterialPh => lookup(ARTERIAL_PH, value),
        ApacheVariable::Sodium => lookup(SODIUM, value),
        ApacheVariable::Potassium => lookup(POTASSIUM, value),
        ApacheVariable::Creatinine => lookup(CREATININE, value),
        ApacheVariable::Wbc => lookup(WBC, value),
        ApacheVariable::Gcs => {
            let gcs = value.round();
            if !(3.0..=15.0).contains(&gcs) {
                return Err(Error::Domain(format!("GCS {value} outside 3..=15")));
            }
            15 - gcs as i32
        }
    })
}

impl ApacheInput {
    pub fn value(&self, var: ApacheVariable) -> f64 {
        match var {
            ApacheVariable::Temperature => self.temperature,
            ApacheVariable::MeanBp => self.mean_bp,
            ApacheVariable::HeartRate => self.heart_rate,
            ApacheVariable::ArterialPh => self.arterial_ph,
            ApacheVariable::Sodium => self.sodium,
            ApacheVariable::Potassium => self.potassium,
            ApacheVariable::Creatinine => self.creatinine,
            ApacheVariable::Wbc => self.wbc,
            ApacheVariable::Gcs => self.gcs as f64,
        }
    }

    /// Build from a raw feature row using the registry column names.
    pub fn from_features(names: &[String], row: &[f64]) -> Result<Self> {
        let get = |var: ApacheVariable| -> Result<f64> {
            let name = var.feature_name();
            names
                .iter()
                .position(|n| n == name)
                .map(|i| row[i])
                .ok_or_else(|| Error::Data(format!("feature {name} not available for scoring")))
        };
        let gcs = get(ApacheVariable::Gcs)?.round().clamp(3.0, 15.0) as u8;
        Ok(ApacheInput {
            temperature: get(ApacheVariable::Temperature)?,
            mean_bp: get(ApacheVariable::MeanBp)?,
            heart_rate: get(ApacheVariable::HeartRate)?,
            arterial_ph: get(ApacheVariable::ArterialPh)?,
            sodium: get(ApacheVariable::Sodium)?,
            potassium: get(ApacheVariable::Potassium)?,
            creatinine: get(ApacheVariable::Creatinine)?,
            wbc: get(ApacheVariable::Wbc)?,
            gcs,
        })
    }
}

/// Modified APACHE II score: acute physiology points for the nine retained
/// variables with GCS contributing `15 − GCS`. No age, chronic-health or
/// renal-failure doubling.
pub fn apache_score(inp: &ApacheInput) -> Result<i32> {
    ApacheVariable::ALL
        .iter()
        .map(|&v| variable_points(v, inp.value(v)))
        .sum()
}

// ---------------------------------------------------------------------------
// Reward
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    /// `(A_t − A_{t+1}) / range`: a falling score is rewarded.
    ImprovementPositive,
    /// `(A_{t+1} − A_t) / range`, the formula as printed.
    PaperLiteral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub max_a: i32,
    pub min_a: i32,
    pub shaping_enabled: bool,
    pub sign_convention: SignConvention,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            max_a: APACHE_MAX,
            min_a: APACHE_MIN,
            shaping_enabled: true,
            sign_convention: SignConvention::ImprovementPositive,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_a <= self.min_a {
            return Err(Error::Param(format!(
                "max_A ({}) must exceed min_A ({})",
                self.max_a, self.min_a
            )));
        }
        Ok(())
    }

    pub fn range(&self) -> f64 {
        (self.max_a - self.min_a) as f64
    }
}

/// Reward for one transition: ±1 at the terminal step, otherwise the
/// normalized change in modified APACHE II score (0 when shaping is off).
pub fn reward(
    prev: Option<&ApacheInput>,
    next: Option<&ApacheInput>,
    is_terminal: bool,
    survived_90d: bool,
    cfg: &RewardConfig,
) -> Result<f64> {
    if is_terminal {
        return Ok(if survived_90d { 1.0 } else { -1.0 });
    }
    if !cfg.shaping_enabled {
        return Ok(0.0);
    }
    let (prev, next) = match (prev, next) {
        (Some(p), Some(n)) => (p, n),
        _ => {
            return Err(Error::Data(
                "shaped non-terminal reward needs scores at both steps".into(),
            ))
        }
    };
    let a_t = apache_score(prev)?;
    let a_next = apache_score(next)?;
    Ok(shaped_reward(a_t, a_next, cfg))
}

/// Intermediate reward from two precomputed scores, clamped to [−1, 1].
pub fn shaped_reward(a_t: i32, a_next: i32, cfg: &RewardConfig) -> f64 {
    let delta = match cfg.sign_convention {
        SignConvention::ImprovementPositive => a_t - a_next,
        SignConvention::PaperLiteral => a_next - a_t,
    };
    (delta as f64 / cfg.range()).clamp(-1.0, 1.0)
}

// ---------------------------------------------------------------------------
// Replay construction
// ---------------------------------------------------------------------------

/// A preprocessed episode ready for MDP construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedEpisode {
    pub patient_id: String,
    pub survived: bool,
    /// Normalized state per step.
    pub states: Vec<StateVector>,
    /// Discretized action per step.
    pub actions: Vec<Action>,
    /// Modified APACHE II inputs per step (imputed, raw units).
    pub apache: Vec<ApacheInput>,
}

impl PreparedEpisode {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Decompose episodes into transitions. Each episode of length `l` yields
/// `l` transitions: `l − 1` step pairs plus a terminal one into the absorbing
/// state. `mode` selects whether intermediate rewards are shaped.
pub fn build_replay(
    episodes: &[PreparedEpisode],
    cfg: &RewardConfig,
    mode: RewardMode,
) -> Result<ReplayDataset> {
    cfg.validate()?;
    let mut transitions = Vec::new();
    let mut spans = Vec::new();
    for ep in episodes {
        if ep.is_empty() {
            log::warn!("skipping empty episode {}", ep.patient_id);
            continue;
        }
        if ep.actions.len() != ep.len() || ep.apache.len() != ep.len() {
            return Err(Error::Shape(format!(
                "episode {}: {} states, {} actions, {} score inputs",
                ep.patient_id,
                ep.len(),
                ep.actions.len(),
                ep.apache.len()
            )));
        }
        let episode = spans.len();
        let start = transitions.len();
        let scores = ep
            .apache
            .iter()
            .map(apache_score)
            .collect::<Result<Vec<_>>>()?;
        let l = ep.len();
        for t in 0..l {
            let terminal = t + 1 == l;
            let r = if terminal {
                if ep.survived {
                    1.0
                } else {
                    -1.0
                }
            } else {
                match mode {
                    RewardMode::TerminalOnly => 0.0,
                    RewardMode::Shaped if cfg.shaping_enabled => {
                        shaped_reward(scores[t], scores[t + 1], cfg)
                    }
                    RewardMode::Shaped => 0.0,
                }
            };
            transitions.push(Transition {
                state: ep.states[t].clone(),
                action: ep.actions[t],
                reward: r,
                next_state: if terminal {
                    None
                } else {
                    Some(ep.states[t + 1].clone())
                },
                terminal,
                episode,
                step_index: t,
            });
        }
        spans.push(EpisodeSpan {
            id: ep.patient_id.clone(),
            start,
            len: l,
        });
    }
    ReplayDataset::new(transitions, spans, mode)
}
