//! Central finite-difference verification of analytic gradients.

/// Denominator floor for relative errors; below this magnitude the
/// comparison degrades gracefully into an absolute one.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares `analytic[i]` against `(f(θ + eps·e_i) - f(θ - eps·e_i)) / 2eps`
/// for every `i` in `indices`.
pub fn finite_diff_check<F>(mut f: F, params: &[f64], analytic: &[f64], indices: &[usize], eps: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "one analytic gradient per parameter");
    let mut theta = params.to_vec();
    let entries = indices
        .iter()
        .map(|&i| {
            let orig = theta[i];
            theta[i] = orig + eps;
            let up = f(&theta);
            theta[i] = orig - eps;
            let down = f(&theta);
            theta[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            GradCheckEntry { index: i, analytic: analytic[i], numeric, rel_err: relative_error(analytic[i], numeric) }
        })
        .collect();
    GradCheckReport { entries }
}
