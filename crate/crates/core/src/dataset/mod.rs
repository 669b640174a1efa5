//! Episodic data model, episode file I/O, the replay-dataset archive format
//! and synthetic ICU cohorts.

mod archive;
mod episodes;
mod synthetic;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::mdp::{Action, StateVector};
use crate::{Error, Result};

pub use archive::{load_dataset, save_dataset, DATASET_MAGIC};
pub use episodes::{load_episodes, save_episodes, EpisodeFormat, EPISODE_FORMAT_VERSION};
pub use synthetic::{generate_synthetic_cohort, BehaviorProfile};

/// 72 hours of ventilation in 4-hour windows.
pub const MAX_EPISODE_LEN: usize = 18;

/// One entry of the clinical feature catalogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub unit: String,
    /// Physiologically plausible interval, used to flag suspicious input.
    pub plausible: (f64, f64),
}

macro_rules! features {
    ($(($name:literal, $unit:literal, $lo:expr, $hi:expr)),* $(,)?) => {
        /// Registry column names in canonical order.
        pub const FEATURE_NAMES: &[&str] = &[$($name),*];
        const FEATURE_TABLE: &[(&str, &str, f64, f64)] = &[$(($name, $unit, $lo, $hi)),*];
    };
}

features![
    // demographics
    ("age", "years", 15.0, 110.0),
    ("gender", "0/1", 0.0, 1.0),
    ("weight", "kg", 25.0, 300.0),
    ("readmission", "0/1", 0.0, 1.0),
    ("elixhauser", "score", -30.0, 60.0),
    // vital signs
    ("sofa", "score", 0.0, 24.0),
    ("sirs", "score", 0.0, 4.0),
    ("gcs", "score", 3.0, 15.0),
    ("heart_rate", "bpm", 0.0, 300.0),
    ("sys_bp", "mmHg", 0.0, 300.0),
    ("dia_bp", "mmHg", 0.0, 250.0),
    ("mean_bp", "mmHg", 0.0, 250.0),
    ("shock_index", "ratio", 0.0, 10.0),
    ("temperature", "degC", 20.0, 45.0),
    ("spo2", "%", 0.0, 100.0),
    // labs
    ("potassium", "mEq/L", 1.0, 12.0),
    ("sodium", "mEq/L", 90.0, 200.0),
    ("chloride", "mEq/L", 60.0, 160.0),
    ("glucose", "mg/dL", 5.0, 2000.0),
    ("bun", "mg/dL", 0.5, 300.0),
    ("creatinine", "mg/dL", 0.05, 25.0),
    ("magnesium", "mg/dL", 0.2, 12.0),
    ("co2", "mEq/L", 2.0, 70.0),
    ("hb", "g/dL", 1.0, 25.0),
    ("wbc", "10^3/mm^3", 0.0, 250.0),
    ("platelets", "10^3/mm^3", 0.0, 2000.0),
    ("ptt", "s", 5.0, 200.0),
    ("pt", "s", 5.0, 200.0),
    ("inr", "ratio", 0.3, 25.0),
    ("ph", "pH", 6.5, 8.0),
    ("paco2", "mmHg", 5.0, 200.0),
    ("base_excess", "mEq/L", -50.0, 50.0),
    ("bicarbonate", "mEq/L", 1.0, 70.0),
    // fluids
    ("urine_output", "mL/4h", 0.0, 10000.0),
    ("vasopressors", "mcg/kg/min", 0.0, 10.0),
    ("iv_fluids", "mL/4h", 0.0, 20000.0),
    ("cumulative_fluid_balance", "mL", -50000.0, 100000.0),
];

/// The full itemized feature catalogue (37 entries).
pub fn default_features() -> Vec<FeatureDef> {
    FEATURE_TABLE
        .iter()
        .map(|&(name, unit, lo, hi)| FeatureDef {
            name: name.to_string(),
            unit: unit.to_string(),
            plausible: (lo, hi),
        })
        .collect()
}

pub fn default_feature_names() -> Vec<String> {
    FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Measured ventilator settings for one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawAction {
    /// ml/kg ideal body weight
    pub vt: f64,
    /// percent
    pub fio2: f64,
    /// cmH2O
    pub peep: f64,
}

/// One 4-hour window. `features` is aligned with the registry the episode
/// was read or generated with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawStep {
    pub features: Vec<Option<f64>>,
    pub action: Option<RawAction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEpisode {
    pub patient_id: String,
    pub steps: Vec<RawStep>,
    /// 90-day outcome flag: `true` when the patient survived.
    pub survived: bool,
    pub metadata: BTreeMap<String, String>,
}

impl RawEpisode {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Only the terminal ±1 outcome; used for policy evaluation.
    TerminalOnly,
    /// Terminal outcome plus score-change shaping; used for training.
    Shaped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: StateVector,
    pub action: Action,
    pub reward: f64,
    /// `None` is the absorbing state after a terminal transition.
    pub next_state: Option<StateVector>,
    pub terminal: bool,
    /// Index into [`ReplayDataset::episodes`].
    pub episode: usize,
    pub step_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeSpan {
    pub id: String,
    pub start: usize,
    pub len: usize,
}

/// A fixed, immutable set of transitions grouped by episode.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayDataset {
    pub transitions: Vec<Transition>,
    pub episodes: Vec<EpisodeSpan>,
    pub initial_state_index: Vec<usize>,
    pub reward_mode: RewardMode,
}

impl ReplayDataset {
    /// Assemble and validate a dataset. Spans must tile the transition list
    /// in order, and each span must end in its single terminal transition.
    pub fn new(
        transitions: Vec<Transition>,
        episodes: Vec<EpisodeSpan>,
        reward_mode: RewardMode,
    ) -> Result<Self> {
        let mut cursor = 0;
        let dim = transitions.first().map(|t| t.state.len());
        for (e, span) in episodes.iter().enumerate() {
            if span.start != cursor || span.len == 0 {
                return Err(Error::Data(format!(
                    "episode {} span does not tile the transition list",
                    span.id
                )));
            }
            if span.len > MAX_EPISODE_LEN {
                return Err(Error::Data(format!(
                    "episode {} has {} steps (max {MAX_EPISODE_LEN})",
                    span.id, span.len
                )));
            }
            for (k, t) in transitions[span.start..span.start + span.len]
                .iter()
                .enumerate()
            {
                let last = k + 1 == span.len;
                if t.episode != e || t.step_index != k {
                    return Err(Error::Data(format!(
                        "transition {} mislabelled for episode {}",
                        span.start + k,
                        span.id
                    )));
                }
                if t.terminal != last || t.next_state.is_none() != last {
                    return Err(Error::Data(format!(
                        "episode {}: terminal flag must be set exactly on the last step",
                        span.id
                    )));
                }
                if !(-1.0..=1.0).contains(&t.reward) {
                    return Err(Error::Data(format!(
                        "reward {} outside [-1, 1] in episode {}",
                        t.reward, span.id
                    )));
                }
                let dims_ok = Some(t.state.len()) == dim
                    && t.next_state.as_ref().is_none_or(|s| Some(s.len()) == dim);
                if !dims_ok {
                    return Err(Error::Shape(format!(
                        "state dimension differs in episode {}",
                        span.id
                    )));
                }
            }
            cursor += span.len;
        }
        if cursor != transitions.len() {
            return Err(Error::Data(
                "transitions exist outside every episode span".into(),
            ));
        }
        let initial_state_index = episodes.iter().map(|s| s.start).collect();
        Ok(ReplayDataset {
            transitions,
            episodes,
            initial_state_index,
            reward_mode,
        })
    }

    pub fn empty(reward_mode: RewardMode) -> Self {
        ReplayDataset {
            transitions: Vec::new(),
            episodes: Vec::new(),
            initial_state_index: Vec::new(),
            reward_mode,
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn state_dim(&self) -> Option<usize> {
        self.transitions.first().map(|t| t.state.len())
    }

    pub fn episode_transitions(&self, episode: usize) -> &[Transition] {
        let s = &self.episodes[episode];
        &self.transitions[s.start..s.start + s.len]
    }

    /// Initial states in episode order.
    pub fn initial_states(&self) -> impl Iterator<Item = &StateVector> + '_ {
        self.initial_state_index
            .iter()
            .map(move |&i| &self.transitions[i].state)
    }

    /// A copy restricted to the given episodes (in the given order).
    pub fn subset(&self, episodes: &[usize]) -> Result<Self> {
        let mut transitions = Vec::new();
        let mut spans = Vec::new();
        for (new_idx, &e) in episodes.iter().enumerate() {
            let span = self
                .episodes
                .get(e)
                .ok_or_else(|| Error::Param(format!("episode index {e} out of range")))?;
            let start = transitions.len();
            for t in self.episode_transitions(e) {
                let mut t = t.clone();
                t.episode = new_idx;
                transitions.push(t);
            }
            spans.push(EpisodeSpan {
                id: span.id.clone(),
                start,
                len: span.len,
            });
        }
        ReplayDataset::new(transitions, spans, self.reward_mode)
    }
}
