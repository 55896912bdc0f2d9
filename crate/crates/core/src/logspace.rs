//! Log-domain helpers shared by every engine.
//!
//! Messages are stored as normalized natural-log distributions. Entries are
//! floored at [`LOG_FLOOR`] so that hard constraints never produce `NaN`
//! through `-inf - -inf`.

use crate::error::{Error, Result};

/// Linear probability floor for messages.
pub const PROB_FLOOR: f64 = 1e-300;

/// `ln(PROB_FLOOR)`, roughly -690.78.
pub const LOG_FLOOR: f64 = -690.775_527_898_213_7;

/// Overflow-safe `ln Σ exp(v)`. Returns `-inf` for an empty slice or when all
/// entries are `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Normalizes a log-distribution in place so that `log_sum_exp == 0`, then
/// applies the floor. `what` names the message in the degeneracy error.
pub fn normalize_log(values: &mut [f64], what: impl FnOnce() -> String) -> Result<()> {
    let z = log_sum_exp(values);
    if !z.is_finite() {
        return Err(Error::Degenerate(format!("{} has no support", what())));
    }
    for v in values.iter_mut() {
        *v = (*v - z).max(LOG_FLOOR);
    }
    Ok(())
}

/// Uniform log-distribution over `card` states.
pub fn uniform_log(card: usize) -> Vec<f64> {
    vec![-(card as f64).ln(); card]
}

/// Exponentiates and renormalizes a log-distribution. Entries that are
/// exactly `-inf` stay exact zeros.
pub fn to_probabilities(logs: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(logs);
    let mut p: Vec<f64> = logs.iter().map(|v| (v - z).exp()).collect();
    let s: f64 = p.iter().sum();
    if s > 0.0 {
        p.iter_mut().for_each(|x| *x /= s);
    }
    p
}

/// Linear probabilities to logs with the message floor applied.
pub fn to_floored_logs(probs: &[f64]) -> Vec<f64> {
    probs.iter().map(|&p| p.max(PROB_FLOOR).ln()).collect()
}

/// Log-space damping: `damping * old + (1 - damping) * proposed`, renormalized.
pub fn damp(old: &[f64], proposed: &[f64], damping: f64, what: impl FnOnce() -> String) -> Result<Vec<f64>> {
    let mut out: Vec<f64> = if damping == 0.0 {
        proposed.to_vec()
    } else {
        old.iter()
            .zip(proposed)
            .map(|(o, p)| damping * o + (1.0 - damping) * p)
            .collect()
    };
    normalize_log(&mut out, what)?;
    Ok(out)
}

/// `max_i |a_i - b_i|`.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Total-variation distance `½ Σ |p - q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// `Σ p E` with `0 · inf = 0`.
pub fn expected_energy(p: &[f64], energies: &[f64]) -> f64 {
    p.iter()
        .zip(energies)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(pi, e)| pi * e)
        .sum()
}
