//! Flat/tuple action bijection and bin saturation.

use ventrl::mdp::{action_from_flat, discretize_action, flat_from_action, Action, N_ACTIONS};

pub fn round_trip_and_saturation() -> Result<(), String> {
    let mut seen = vec![false; N_ACTIONS];
    for i in 0..N_ACTIONS {
        let a = action_from_flat(i).map_err(|e| e.to_string())?;
        let expected = (i / 49, (i / 7) % 7, i % 7);
        if (a.vt as usize, a.fio2 as usize, a.peep as usize) != expected {
            return Err(format!("index {i} decodes to {a}"));
        }
        if flat_from_action(a) != i {
            return Err(format!("index {i} does not round-trip"));
        }
        seen[i] = true;
    }
    for vt in 0..7 {
        for fio2 in 0..7 {
            for peep in 0..7 {
                let a = Action::new(vt, fio2, peep).map_err(|e| e.to_string())?;
                if action_from_flat(flat_from_action(a)).ok() != Some(a) {
                    return Err(format!("{a} does not round-trip"));
                }
            }
        }
    }
    if action_from_flat(N_ACTIONS).is_ok() || Action::new(7, 0, 0).is_ok() {
        return Err("out-of-range action accepted".into());
    }
    let low = discretize_action(0.0, 0.0, 0.0).map_err(|e| e.to_string())?;
    let high = discretize_action(1e6, 100.0, 1e6).map_err(|e| e.to_string())?;
    if low != Action::new(0, 0, 0).unwrap() || high != Action::new(6, 6, 6).unwrap() {
        return Err(format!("extremes map to {low} and {high}"));
    }
    // Bin edges are inclusive on the lower side.
    let edge = discretize_action(15.0, 55.0, 15.0).map_err(|e| e.to_string())?;
    let below = discretize_action(14.999, 54.999, 14.999).map_err(|e| e.to_string())?;
    if edge != Action::new(6, 6, 6).unwrap() || below != Action::new(5, 5, 5).unwrap() {
        return Err(format!("top edges map to {edge} and {below}"));
    }
    if discretize_action(-1.0, 40.0, 5.0).is_ok() || discretize_action(f64::NAN, 40.0, 5.0).is_ok() {
        return Err("invalid raw setting accepted".into());
    }
    Ok(())
}
