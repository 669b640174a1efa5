//! Synthetic ventilated-ICU cohorts.
//!
//! Each patient carries a latent severity process, a fixed lung-stiffness
//! index and an oxygenation deficit. Together they determine the ideal
//! ventilator bins at every window; deviation from the ideal raises severity.
//! Observable features are noisy functions of the latent state, and the
//! 90-day outcome is drawn from a logistic model of final severity and
//! cumulative inappropriate ventilation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{RawAction, RawEpisode, RawStep, FEATURE_NAMES, MAX_EPISODE_LEN};
use crate::mdp::{Action, ActionBinning, BINS_PER_SETTING};
use crate::{Error, Result};

/// Parameters of the synthetic clinician and the patient dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorProfile {
    pub name: String,
    /// Cohort-level 90-day survival the mortality intercept is calibrated to.
    pub target_survival: f64,
    pub min_length: usize,
    pub max_length: usize,
    /// Probability the clinician tailors Vt and PEEP to the patient; otherwise
    /// the protocol default (Vt bin 2, PEEP bin 0) is used.
    pub adherence: f64,
    /// Per-setting probability of a ±1 bin deviation.
    pub local_noise: f64,
    /// Probability of a uniformly random action.
    pub random_action_rate: f64,
    /// Severity added per unit of bin distance from the ideal action.
    pub harm_per_step: f64,
    pub recovery_rate: f64,
    pub severity_noise: f64,
    pub initial_severity_mean: f64,
    /// Logistic weight of final severity on death.
    pub mortality_severity_weight: f64,
    /// Logistic weight of cumulative bin distance on death.
    pub mortality_harm_weight: f64,
    /// Default per-feature missingness rate.
    pub missing_rate: f64,
    pub missing_overrides: BTreeMap<String, f64>,
}

impl Default for BehaviorProfile {
    fn default() -> Self {
        BehaviorProfile::physician_like()
    }
}

impl BehaviorProfile {
    /// Mostly protocol-driven clinician with modest exploration.
    pub fn physician_like() -> Self {
        BehaviorProfile {
            name: "physician_like".into(),
            target_survival: 0.7,
            min_length: 4,
            max_length: MAX_EPISODE_LEN,
            adherence: 0.6,
            local_noise: 0.1,
            random_action_rate: 0.03,
            harm_per_step: 0.25,
            recovery_rate: 0.15,
            severity_noise: 0.25,
            initial_severity_mean: 2.5,
            mortality_severity_weight: 0.8,
            mortality_harm_weight: 0.15,
            missing_rate: 0.05,
            missing_overrides: BTreeMap::from([
                ("ptt".to_string(), 0.5),
                ("magnesium".to_string(), 0.97),
            ]),
        }
    }

    /// A clinician that often ignores patient-specific needs and explores.
    pub fn noisy_suboptimal() -> Self {
        BehaviorProfile {
            name: "noisy_suboptimal".into(),
            adherence: 0.3,
            local_noise: 0.15,
            random_action_rate: 0.15,
            ..BehaviorProfile::physician_like()
        }
    }

    pub fn without_missingness(mut self) -> Self {
        self.missing_rate = 0.0;
        self.missing_overrides.clear();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("target_survival", self.target_survival),
            ("adherence", self.adherence),
            ("local_noise", self.local_noise),
            ("random_action_rate", self.random_action_rate),
            ("missing_rate", self.missing_rate),
        ];
        for (name, p) in probs
            .into_iter()
            .chain(self.missing_overrides.iter().map(|(k, v)| (k.as_str(), *v)))
        {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Param(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if !(0.0 < self.target_survival && self.target_survival < 1.0) {
            return Err(Error::Param("target_survival must lie in (0, 1)".into()));
        }
        if self.min_length == 0
            || self.min_length > self.max_length
            || self.max_length > MAX_EPISODE_LEN
        {
            return Err(Error::Param(format!(
                "episode lengths must satisfy 1 <= min <= max <= {MAX_EPISODE_LEN}"
            )));
        }
        for (name, v) in [
            ("harm_per_step", self.harm_per_step),
            ("recovery_rate", self.recovery_rate),
            ("severity_noise", self.severity_noise),
            ("initial_severity_mean", self.initial_severity_mean),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Param(format!("{name} must be finite and >= 0")));
            }
        }
        if let Some(unknown) = self
            .missing_overrides
            .keys()
            .find(|k| !FEATURE_NAMES.contains(&k.as_str()))
        {
            return Err(Error::Param(format!("unknown feature {unknown:?} in missingness")));
        }
        Ok(())
    }

    fn missing_rate_for(&self, feature: &str) -> f64 {
        self.missing_overrides
            .get(feature)
            .copied()
            .unwrap_or(self.missing_rate)
    }

    /// Mortality-model intercept giving `target_survival` under this profile,
    /// found by bisection over a fixed pilot simulation.
    pub fn calibrated_intercept(&self) -> f64 {
        const PILOT_SEED: u64 = 0x5eed_ca1b;
        const PILOT_PATIENTS: usize = 4000;
        let mut rng = ChaCha8Rng::seed_from_u64(PILOT_SEED);
        let risks: Vec<f64> = (0..PILOT_PATIENTS)
            .map(|_| simulate_latent(self, &mut rng).risk(self))
            .collect();
        let survival = |b: f64| risks.iter().map(|r| sigmoid(b - r)).sum::<f64>() / risks.len() as f64;
        let (mut lo, mut hi) = (-50.0, 50.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if survival(mid) < self.target_survival {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Ideal bins given stiffness and oxygenation deficit.
pub(crate) fn ideal_action(stiffness: f64, oxygen_deficit: f64) -> Action {
    let vt = if stiffness > 0.6 { 1 } else { 2 };
    let peep = if oxygen_deficit > 0.5 { 1 } else { 0 };
    let fio2 = (2.0 + (oxygen_deficit * 1.2).round()).clamp(0.0, 6.0) as u8;
    Action { vt, fio2, peep }
}

fn bin_distance(a: Action, ideal: Action) -> f64 {
    let d = |x: u8, y: u8| (x as f64 - y as f64).abs();
    d(a.vt, ideal.vt) + d(a.peep, ideal.peep) + 0.5 * d(a.fio2, ideal.fio2)
}

struct LatentStep {
    severity: f64,
    oxygen_deficit: f64,
    action: Action,
}

struct LatentPatient {
    stiffness: f64,
    steps: Vec<LatentStep>,
    final_severity: f64,
    cumulative_distance: f64,
}

impl LatentPatient {
    fn risk(&self, p: &BehaviorProfile) -> f64 {
        p.mortality_severity_weight * self.final_severity
            + p.mortality_harm_weight * self.cumulative_distance
    }
}

fn jitter(bin: u8, rng: &mut ChaCha8Rng, p: f64) -> u8 {
    if rng.random::<f64>() < p {
        let up = rng.random::<bool>();
        let b = bin as i32 + if up { 1 } else { -1 };
        b.clamp(0, BINS_PER_SETTING as i32 - 1) as u8
    } else {
        bin
    }
}

fn clinician_action(p: &BehaviorProfile, ideal: Action, rng: &mut ChaCha8Rng) -> Action {
    if rng.random::<f64>() < p.random_action_rate {
        let b = |rng: &mut ChaCha8Rng| rng.random_range(0..BINS_PER_SETTING as u8);
        return Action {
            vt: b(rng),
            fio2: b(rng),
            peep: b(rng),
        };
    }
    let tailored = rng.random::<f64>() < p.adherence;
    let base = if tailored {
        ideal
    } else {
        Action {
            vt: 2,
            fio2: ideal.fio2,
            peep: 0,
        }
    };
    Action {
        vt: jitter(base.vt, rng, p.local_noise),
        fio2: jitter(base.fio2, rng, p.local_noise),
        peep: jitter(base.peep, rng, p.local_noise),
    }
}

fn simulate_latent(p: &BehaviorProfile, rng: &mut ChaCha8Rng) -> LatentPatient {
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let len = rng.random_range(p.min_length..=p.max_length);
    let stiffness = std.sample(rng);
    let oxygen_base = std.sample(rng);
    let mut severity = (p.initial_severity_mean + std.sample(rng)).max(0.0);
    let mut oxygen_deficit = oxygen_base;
    let mut cumulative_distance = 0.0;
    let mut steps = Vec::with_capacity(len);
    for _ in 0..len {
        let ideal = ideal_action(stiffness, oxygen_deficit);
        let action = clinician_action(p, ideal, rng);
        let distance = bin_distance(action, ideal);
        cumulative_distance += distance;
        steps.push(LatentStep {
            severity,
            oxygen_deficit,
            action,
        });
        severity = (severity + p.harm_per_step * distance - p.recovery_rate
            + p.severity_noise * std.sample(rng))
        .max(0.0);
        oxygen_deficit = 0.8 * oxygen_deficit + 0.2 * oxygen_base + 0.2 * std.sample(rng);
    }
    LatentPatient {
        stiffness,
        steps,
        final_severity: severity,
        cumulative_distance,
    }
}

/// Per-patient constants that shape the observable features.
struct PatientTraits {
    age: f64,
    gender: f64,
    weight: f64,
    readmission: f64,
    elixhauser: f64,
    dir_hr: f64,
    dir_temp: f64,
    dir_na: f64,
    dir_k: f64,
    dir_wbc: f64,
}

fn observe(
    traits: &PatientTraits,
    stiffness: f64,
    step: &LatentStep,
    fluid_balance: &mut f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    let mut e = |sd: f64| sd * n.sample(rng);
    let s = step.severity;
    let o = step.oxygen_deficit;
    let heart_rate = (82.0 + traits.dir_hr * 11.0 * s + e(6.0)).max(20.0);
    let mean_bp = (82.0 - 7.0 * s + e(6.0)).max(20.0);
    let sys_bp = mean_bp + 35.0 + e(5.0);
    let dia_bp = (mean_bp - 18.0 + e(4.0)).max(10.0);
    let pt = (14.0 + s + e(1.5)).max(8.0);
    let iv = (600.0 + 80.0 * s + e(150.0)).max(0.0);
    let urine = (500.0 - 60.0 * s + e(120.0)).max(0.0);
    *fluid_balance += iv - urine;
    let row = [
        traits.age,
        traits.gender,
        traits.weight,
        traits.readmission,
        traits.elixhauser,
        (1.5 * s + 2.0 + e(1.5)).round().clamp(0.0, 24.0),
        (0.5 * s + 1.5 + e(0.8)).round().clamp(0.0, 4.0),
        (15.0 - 1.6 * s + e(1.0)).round().clamp(3.0, 15.0),
        heart_rate,
        sys_bp,
        dia_bp,
        mean_bp,
        heart_rate / sys_bp.max(40.0),
        37.0 + traits.dir_temp * 0.55 * s + e(0.3),
        (97.0 - 2.5 * o - 0.4 * s + e(1.0)).clamp(50.0, 100.0),
        (4.2 + traits.dir_k * 0.35 * s + e(0.3)).max(1.5),
        140.0 + traits.dir_na * 2.2 * s + e(2.0),
        104.0 + e(3.0),
        (130.0 + 10.0 * s + e(25.0)).max(30.0),
        (20.0 + 6.0 * s + e(5.0)).max(2.0),
        (0.9 + 0.35 * s + e(0.15)).max(0.2),
        (2.0 + e(0.2)).max(0.5),
        (24.0 - 0.8 * s + e(2.0)).max(5.0),
        (10.5 + e(1.5)).max(4.0),
        (9.0 + traits.dir_wbc * 2.6 * s + e(2.0)).max(0.2),
        (220.0 - 15.0 * s + e(50.0)).max(5.0),
        (32.0 + 2.0 * s + e(5.0)).max(15.0),
        pt,
        pt / 12.0,
        7.40 - 0.035 * s - 0.02 * stiffness + e(0.02),
        (40.0 + 5.0 * stiffness + e(3.0)).max(15.0),
        -0.8 * s + e(2.0),
        (24.0 - s + e(2.0)).max(5.0),
        urine,
        (0.08 * (s - 2.0) + e(0.03)).max(0.0),
        iv,
        *fluid_balance,
    ];
    debug_assert_eq!(row.len(), FEATURE_NAMES.len());
    row.to_vec()
}

fn raw_setting(bins: &crate::mdp::SettingBins, bin: u8, rng: &mut ChaCha8Rng) -> f64 {
    let b = bin as usize;
    let lo = if b == 0 { 0.0 } else { bins.cuts[b - 1] };
    let hi = if b < bins.cuts.len() {
        bins.cuts[b]
    } else {
        2.0 * bins.representative(b) - lo
    };
    let v = lo + (hi - lo) * rng.random::<f64>();
    // Keep strictly inside the bin so re-discretization is exact.
    v.clamp(lo, hi - 1e-9 * (hi - lo).max(1.0))
}

/// Generate `n_patients` episodes. A pure function of its arguments.
pub fn generate_synthetic_cohort(
    n_patients: usize,
    seed: u64,
    behavior: &BehaviorProfile,
) -> Result<Vec<RawEpisode>> {
    if n_patients == 0 {
        return Err(Error::Param("n_patients must be >= 1".into()));
    }
    behavior.validate()?;
    let intercept = behavior.calibrated_intercept();
    let binning = ActionBinning::default();
    let missing: Vec<f64> = FEATURE_NAMES
        .iter()
        .map(|f| behavior.missing_rate_for(f))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::<f64>::new(0.0, 1.0).expect("unit normal");
    let sign = |rng: &mut ChaCha8Rng, p: f64| if rng.random::<f64>() < p { 1.0 } else { -1.0 };

    let mut episodes = Vec::with_capacity(n_patients);
    for i in 0..n_patients {
        let latent = simulate_latent(behavior, &mut rng);
        let survive_p = sigmoid(intercept - latent.risk(behavior));
        let survived = rng.random::<f64>() < survive_p;
        let traits = PatientTraits {
            age: (64.0 + 15.0 * n.sample(&mut rng)).clamp(18.0, 95.0),
            gender: if rng.random::<f64>() < 0.55 { 1.0 } else { 0.0 },
            weight: (80.0 + 18.0 * n.sample(&mut rng)).clamp(35.0, 200.0),
            readmission: if rng.random::<f64>() < 0.1 { 1.0 } else { 0.0 },
            elixhauser: (5.0 + 7.0 * n.sample(&mut rng)).round(),
            dir_hr: sign(&mut rng, 0.85),
            dir_temp: sign(&mut rng, 0.6),
            dir_na: sign(&mut rng, 0.5),
            dir_k: sign(&mut rng, 0.5),
            dir_wbc: sign(&mut rng, 0.7),
        };
        let mut balance = 0.0;
        let mut steps = Vec::with_capacity(latent.steps.len());
        for step in &latent.steps {
            let values = observe(&traits, latent.stiffness, step, &mut balance, &mut rng);
            let features = values
                .into_iter()
                .zip(&missing)
                .map(|(v, &rate)| (rng.random::<f64>() >= rate).then_some(v))
                .collect();
            let a = step.action;
            let action = RawAction {
                vt: raw_setting(&binning.vt, a.vt, &mut rng),
                fio2: raw_setting(&binning.fio2, a.fio2, &mut rng),
                peep: raw_setting(&binning.peep, a.peep, &mut rng),
            };
            steps.push(RawStep {
                features,
                action: Some(action),
            });
        }
        let metadata = BTreeMap::from([
            ("profile".to_string(), behavior.name.clone()),
            (
                "initial_severity".to_string(),
                format!("{:.4}", latent.steps[0].severity),
            ),
            ("stiffness".to_string(), format!("{:.4}", latent.stiffness)),
        ]);
        episodes.push(RawEpisode {
            patient_id: format!("syn-{seed}-{i:05}"),
            steps,
            survived,
            metadata,
        });
    }
    Ok(episodes)
}
