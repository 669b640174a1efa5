//! Imputation routing, a brute-force nearest-neighbour oracle and
//! hand-enumerated hold traces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ventrl::preprocess::{knn_impute, sample_and_hold, select_imputation_method, ImputationMethod};

pub fn routing_boundaries() -> Result<(), String> {
    let cases = [
        (0.0, ImputationMethod::Knn),
        (0.2999999, ImputationMethod::Knn),
        (0.30, ImputationMethod::SampleAndHold),
        (0.3000001, ImputationMethod::SampleAndHold),
        (0.95, ImputationMethod::SampleAndHold),
        (0.9500001, ImputationMethod::Dropped),
        (1.0, ImputationMethod::Dropped),
    ];
    for (f, want) in cases {
        let got = select_imputation_method(f);
        if got != want {
            return Err(format!("missing fraction {f} routed to {got:?}, expected {want:?}"));
        }
    }
    Ok(())
}

/// Straightforward O(n²) nearest-neighbour imputation with the same
/// definitions: z-scores from the population std of observed values, only
/// shared observed features count, ties go to the lower row index, and the
/// column mean is used when fewer than `k` donors exist.
fn brute_force(table: &[Vec<Option<f64>>], k: usize, target: usize) -> Vec<f64> {
    let width = table[0].len();
    let stats: Vec<(f64, f64)> = (0..width)
        .map(|j| {
            let v: Vec<f64> = table.iter().filter_map(|r| r[j]).collect();
            if v.is_empty() {
                return (0.0, 0.0);
            }
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
            (m, var.sqrt())
        })
        .collect();
    table
        .iter()
        .map(|row| {
            if let Some(v) = row[target] {
                return v;
            }
            let mut donors: Vec<(f64, usize, f64)> = Vec::new();
            for (i, other) in table.iter().enumerate() {
                let Some(value) = other[target] else { continue };
                let mut shared = false;
                let mut sq = 0.0;
                for j in 0..width {
                    if let (Some(a), Some(b)) = (row[j], other[j]) {
                        shared = true;
                        if stats[j].1 > 0.0 {
                            sq += ((a - b) / stats[j].1).powi(2);
                        }
                    }
                }
                let d = if shared { sq.sqrt() } else { f64::INFINITY };
                donors.push((d, i, value));
            }
            // Insertion sort keeps the comparison rule explicit.
            for a in 1..donors.len() {
                let mut b = a;
                while b > 0 && (donors[b].0, donors[b].1) < (donors[b - 1].0, donors[b - 1].1) {
                    donors.swap(b, b - 1);
                    b -= 1;
                }
            }
            if donors.len() < k {
                stats[target].0
            } else {
                donors[..k].iter().map(|d| d.2).sum::<f64>() / k as f64
            }
        })
        .collect()
}

/// Compare against the brute-force oracle on `n` random tables; returns `n`.
pub fn knn_against_brute_force(n: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in 0..n {
        let rows = rng.random_range(2..=50);
        let width = rng.random_range(1..=6);
        let p_missing = rng.random_range(0.0..0.5);
        // Coarse values make exact distance ties common.
        let coarse = t % 3 == 0;
        let table: Vec<Vec<Option<f64>>> = (0..rows)
            .map(|_| {
                (0..width)
                    .map(|_| {
                        (!rng.random_bool(p_missing)).then(|| {
                            if coarse {
                                rng.random_range(0..4) as f64
                            } else {
                                rng.random_range(-10.0..10.0)
                            }
                        })
                    })
                    .collect()
            })
            .collect();
        let target = rng.random_range(0..width);
        let k = rng.random_range(1..=5);
        let got = knn_impute(&table, k, target).map_err(|e| e.to_string())?.values;
        let want = brute_force(&table, k, target);
        for (i, (g, w)) in got.iter().zip(&want).enumerate() {
            if (g - w).abs() > 1e-12 * w.abs().max(1.0) {
                return Err(format!("table {t} row {i}: {g} vs oracle {w}"));
            }
        }
    }
    Ok(n)
}

pub fn hold_traces() -> Result<(), String> {
    const M: f64 = -1.0;
    let cases: [(&[Option<f64>], usize, &[f64]); 6] = [
        (&[Some(1.0), None, None, None], 2, &[1.0, 1.0, 1.0, M]),
        (&[None, Some(2.0), None], 5, &[M, 2.0, 2.0]),
        (&[Some(1.0), None, Some(3.0), None, None], 1, &[1.0, 1.0, 3.0, 3.0, M]),
        (&[Some(4.0), None, None], 0, &[4.0, M, M]),
        (&[None, None], 3, &[M, M]),
        (&[Some(5.0), Some(6.0), None, None, None, None], 3, &[5.0, 6.0, 6.0, 6.0, 6.0, M]),
    ];
    for (column, limit, want) in cases {
        let got = sample_and_hold(column, limit, M);
        if got != want {
            return Err(format!("{column:?} limit {limit}: {got:?}, expected {want:?}"));
        }
    }
    Ok(())
}
