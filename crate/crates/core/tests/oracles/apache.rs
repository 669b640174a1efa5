//! Modified APACHE II against the published inclusive ranges.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ventrl::mdp::{apache_score, ApacheInput};

/// `(low, high, points)` with both ends inclusive at the printed resolution.
struct Table {
    resolution: f64,
    bands: &'static [(f64, f64, i32)],
    zero: f64,
}

const TEMPERATURE: Table = Table {
    resolution: 0.1,
    bands: &[
        (41.0, 45.0, 4),
        (39.0, 40.9, 3),
        (38.5, 38.9, 1),
        (36.0, 38.4, 0),
        (34.0, 35.9, 1),
        (32.0, 33.9, 2),
        (30.0, 31.9, 3),
        (25.0, 29.9, 4),
    ],
    zero: 37.0,
};
const MAP: Table = Table {
    resolution: 1.0,
    bands: &[
        (160.0, 220.0, 4),
        (130.0, 159.0, 3),
        (110.0, 129.0, 2),
        (70.0, 109.0, 0),
        (50.0, 69.0, 2),
        (20.0, 49.0, 4),
    ],
    zero: 80.0,
};
const HEART_RATE: Table = Table {
    resolution: 1.0,
    bands: &[
        (180.0, 250.0, 4),
        (140.0, 179.0, 3),
        (110.0, 139.0, 2),
        (70.0, 109.0, 0),
        (55.0, 69.0, 2),
        (40.0, 54.0, 3),
        (20.0, 39.0, 4),
    ],
    zero: 80.0,
};
const PH: Table = Table {
    resolution: 0.01,
    bands: &[
        (7.70, 7.90, 4),
        (7.60, 7.69, 3),
        (7.50, 7.59, 1),
        (7.33, 7.49, 0),
        (7.25, 7.32, 2),
        (7.15, 7.24, 3),
        (6.80, 7.14, 4),
    ],
    zero: 7.40,
};
const SODIUM: Table = Table {
    resolution: 1.0,
    bands: &[
        (180.0, 200.0, 4),
        (160.0, 179.0, 3),
        (155.0, 159.0, 2),
        (150.0, 154.0, 1),
        (130.0, 149.0, 0),
        (120.0, 129.0, 2),
        (111.0, 119.0, 3),
        (95.0, 110.0, 4),
    ],
    zero: 140.0,
};
const POTASSIUM: Table = Table {
    resolution: 0.1,
    bands: &[
        (7.0, 9.0, 4),
        (6.0, 6.9, 3),
        (5.5, 5.9, 1),
        (3.5, 5.4, 0),
        (3.0, 3.4, 1),
        (2.5, 2.9, 2),
        (1.5, 2.4, 4),
    ],
    zero: 4.0,
};
const CREATININE: Table = Table {
    resolution: 0.1,
    bands: &[
        (3.5, 8.0, 4),
        (2.0, 3.4, 3),
        (1.5, 1.9, 2),
        (0.6, 1.4, 0),
        (0.1, 0.5, 2),
    ],
    zero: 1.0,
};
const WBC: Table = Table {
    resolution: 0.1,
    bands: &[
        (40.0, 60.0, 4),
        (20.0, 39.9, 2),
        (15.0, 19.9, 1),
        (3.0, 14.9, 0),
        (1.0, 2.9, 2),
        (0.1, 0.9, 4),
    ],
    zero: 10.0,
};

const TABLES: [&Table; 8] = [&TEMPERATURE, &MAP, &HEART_RATE, &PH, &SODIUM, &POTASSIUM, &CREATININE, &WBC];

impl Table {
    fn points(&self, v: f64) -> i32 {
        let eps = self.resolution / 2.0;
        let hits: Vec<i32> = self
            .bands
            .iter()
            .filter(|(lo, hi, _)| v >= lo - eps && v <= hi + eps)
            .map(|b| b.2)
            .collect();
        assert_eq!(hits.len(), 1, "value {v} falls in {} bands", hits.len());
        hits[0]
    }

    /// Every value on the printed grid across the table's range.
    fn grid(&self) -> Vec<f64> {
        let lo = self.bands.iter().map(|b| b.0).fold(f64::INFINITY, f64::min);
        let hi = self.bands.iter().map(|b| b.1).fold(f64::NEG_INFINITY, f64::max);
        let n = ((hi - lo) / self.resolution).round() as i64;
        (0..=n).map(|k| round_to(lo + k as f64 * self.resolution, self.resolution)).collect()
    }

    /// Band edges only.
    fn boundaries(&self) -> Vec<f64> {
        self.bands.iter().flat_map(|b| [b.0, b.1]).collect()
    }
}

fn round_to(v: f64, res: f64) -> f64 {
    (v / res).round() * res
}

fn input(v: &[f64; 8], gcs: u8) -> ApacheInput {
    ApacheInput {
        temperature: v[0],
        mean_bp: v[1],
        heart_rate: v[2],
        arterial_ph: v[3],
        sodium: v[4],
        potassium: v[5],
        creatinine: v[6],
        wbc: v[7],
        gcs,
    }
}

fn oracle(v: &[f64; 8], gcs: u8) -> i32 {
    TABLES.iter().zip(v).map(|(t, &x)| t.points(x)).sum::<i32>() + (15 - gcs as i32)
}

/// Sweep each variable over its full printed grid (others in the zero band,
/// every GCS), then score random combinations of band edges. Returns the
/// number of cases compared; panics on the first mismatch.
pub fn compare_with_table_oracle() -> usize {
    let zero: [f64; 8] = std::array::from_fn(|i| TABLES[i].zero);
    let mut cases = 0;
    for (i, t) in TABLES.iter().enumerate() {
        for x in t.grid() {
            for gcs in [3, 9, 15] {
                let mut v = zero;
                v[i] = x;
                assert_eq!(apache_score(&input(&v, gcs)).unwrap(), oracle(&v, gcs), "{v:?} gcs {gcs}");
                cases += 1;
            }
        }
    }
    let edges: Vec<Vec<f64>> = TABLES.iter().map(|t| t.boundaries()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0007);
    for _ in 0..20_000 {
        let v: [f64; 8] = std::array::from_fn(|i| edges[i][rng.random_range(0..edges[i].len())]);
        let gcs = rng.random_range(3..=15);
        assert_eq!(apache_score(&input(&v, gcs)).unwrap(), oracle(&v, gcs), "{v:?} gcs {gcs}");
        cases += 1;
    }
    cases
}

pub fn extremes() -> Result<(), String> {
    let zero: [f64; 8] = std::array::from_fn(|i| TABLES[i].zero);
    let score = apache_score(&input(&zero, 15)).unwrap();
    if score != 0 {
        return Err(format!("zero-band input scores {score}"));
    }
    let worst: [f64; 8] = std::array::from_fn(|i| TABLES[i].bands[0].0);
    let max = apache_score(&input(&worst, 3)).unwrap();
    if max != 44 {
        return Err(format!("maximum-point input scores {max}"));
    }
    let mut bad = input(&zero, 15);
    bad.gcs = 2;
    if apache_score(&bad).is_ok() {
        return Err("GCS 2 accepted".into());
    }
    Ok(())
}
