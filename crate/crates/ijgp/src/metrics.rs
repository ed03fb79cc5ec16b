//! Accuracy metrics comparing approximate posterior marginals against exact
//! ones, plus the bit error rate for decoding experiments.

use crate::factor::Factor;
use crate::{Error, Result};

/// Per-instance accuracy summary: entry-level quantities averaged within
/// each variable, then averaged across variables. Instance-level averaging
/// is the harness's job.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorReport {
    /// Mean |approx − exact| over table entries, averaged over variables.
    pub absolute_error: f64,
    /// Mean |approx − exact| / exact over entries where exact > 0, averaged
    /// over variables with at least one such entry.
    pub relative_error: f64,
    /// Mean over variables of Σ exact · ln(exact / approx). A zero exact
    /// entry contributes nothing; a zero approx entry against a positive
    /// exact one makes the distance infinite.
    pub kl_distance: f64,
    /// Entries skipped by the relative error because exact was zero.
    pub skipped_entries: usize,
}

fn paired<'a>(
    exact: &'a [Option<Factor>],
    approx: &'a [Option<Factor>],
) -> Result<Vec<(&'a Factor, &'a Factor)>> {
    if exact.len() != approx.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} exact vs {} approximate marginals",
            exact.len(),
            approx.len()
        )));
    }
    let mut out = Vec::new();
    for (v, (e, a)) in exact.iter().zip(approx).enumerate() {
        match (e, a) {
            (Some(e), Some(a)) => {
                if e.scope() != a.scope() {
                    return Err(Error::ShapeMismatch(format!(
                        "marginal scopes disagree at variable {v}"
                    )));
                }
                out.push((e, a));
            }
            (None, None) => {}
            _ => {
                return Err(Error::ShapeMismatch(format!(
                    "evidence masks disagree at variable {v}"
                )))
            }
        }
    }
    if out.is_empty() {
        return Err(Error::ShapeMismatch("no unevidenced marginals".into()));
    }
    Ok(out)
}

/// Compare approximate marginals against exact ones. Both lists are indexed
/// by variable with `None` at evidenced positions; the masks must agree.
pub fn compare_beliefs(
    exact: &[Option<Factor>],
    approx: &[Option<Factor>],
) -> Result<ErrorReport> {
    let pairs = paired(exact, approx)?;
    let mut abs_sum = 0.0;
    let mut rel_sum = 0.0;
    let mut rel_vars = 0usize;
    let mut kl_sum = 0.0;
    let mut skipped = 0usize;
    for (e, a) in &pairs {
        let et = e.table();
        let at = a.table();
        let mut abs = 0.0;
        let mut rel = 0.0;
        let mut rel_n = 0usize;
        let mut kl = 0.0;
        for (&ev, &av) in et.iter().zip(at) {
            abs += (av - ev).abs();
            if ev > 0.0 {
                rel += (av - ev).abs() / ev;
                rel_n += 1;
                kl += if av > 0.0 { ev * (ev / av).ln() } else { f64::INFINITY };
            } else {
                skipped += 1;
            }
        }
        abs_sum += abs / et.len() as f64;
        if rel_n > 0 {
            rel_sum += rel / rel_n as f64;
            rel_vars += 1;
        }
        kl_sum += kl;
    }
    let nv = pairs.len() as f64;
    Ok(ErrorReport {
        absolute_error: abs_sum / nv,
        relative_error: if rel_vars > 0 { rel_sum / rel_vars as f64 } else { 0.0 },
        kl_distance: kl_sum / nv,
        skipped_entries: skipped,
    })
}

/// Mean |approx − exact| over entries, averaged per variable.
pub fn absolute_error(exact: &[Option<Factor>], approx: &[Option<Factor>]) -> Result<f64> {
    Ok(compare_beliefs(exact, approx)?.absolute_error)
}

/// Mean |approx − exact| / exact over entries with positive exact mass.
pub fn relative_error(exact: &[Option<Factor>], approx: &[Option<Factor>]) -> Result<f64> {
    Ok(compare_beliefs(exact, approx)?.relative_error)
}

/// Mean over variables of Σ exact · ln(exact / approx).
pub fn kl_distance(exact: &[Option<Factor>], approx: &[Option<Factor>]) -> Result<f64> {
    Ok(compare_beliefs(exact, approx)?.kl_distance)
}

/// Fraction of variables whose most-likely belief value (ties to the lowest
/// value index) disagrees with the ground-truth assignment. Evidenced
/// positions (`None` beliefs) are skipped.
pub fn bit_error_rate(truth: &[usize], beliefs: &[Option<Factor>]) -> Result<f64> {
    if truth.len() != beliefs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} truth values vs {} marginals",
            truth.len(),
            beliefs.len()
        )));
    }
    let mut total = 0usize;
    let mut wrong = 0usize;
    for (v, (t, b)) in truth.iter().zip(beliefs).enumerate() {
        if let Some(b) = b {
            if b.table().len() != 2 {
                return Err(Error::ShapeMismatch(format!("variable {v} is not binary")));
            }
            total += 1;
            if b.argmax_value() != *t {
                wrong += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::ShapeMismatch("no unevidenced marginals".into()));
    }
    Ok(wrong as f64 / total as f64)
}
