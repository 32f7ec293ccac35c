use super::{Matrix, NodeId, NumError, Rng, Tape};

/// Outcome of a central-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    /// (parameter index, flat coordinate) where the maximum occurred.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Largest |analytic − numeric| over all probed coordinates.
    pub max_abs_error: f64,
    /// Largest |analytic| over all probed coordinates.
    pub max_abs_gradient: f64,
}

/// Checks every coordinate of every parameter.
///
/// `f` builds a scalar on a fresh tape from parameter leaves bound to
/// `point`. The analytic gradient comes from [`Tape::backward`]; the numeric
/// one from `(f(x+εe) − f(x−εe)) / 2ε`. Relative error uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn fd_check<F>(f: F, point: &[Matrix], eps: f64) -> Result<FdReport, NumError>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId, NumError>,
{
    fd_check_with(f, point, eps, None)
}

/// Like [`fd_check`], but probes at most `sample` random coordinates per
/// parameter (seeded) when given. Large layers use this.
pub fn fd_check_with<F>(f: F, point: &[Matrix], eps: f64, sample: Option<(usize, u64)>) -> Result<FdReport, NumError>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId, NumError>,
{
    let eval = |params: &[Matrix]| -> Result<f64, NumError> {
        let mut t = Tape::new();
        let ids: Vec<NodeId> = params.iter().map(|p| t.param(p.clone())).collect();
        let out = f(&mut t, &ids)?;
        let v = t.value(out);
        if v.shape() != (1, 1) {
            return Err(NumError::NonScalarOutput {
                rows: v.rows(),
                cols: v.cols(),
            });
        }
        Ok(v.get(0, 0))
    };

    let mut t = Tape::new();
    let ids: Vec<NodeId> = point.iter().map(|p| t.param(p.clone())).collect();
    let out = f(&mut t, &ids)?;
    let grads = t.backward(out)?;

    let mut report = FdReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        max_abs_error: 0.0,
        max_abs_gradient: 0.0,
    };
    let mut rng = sample.map(|(_, seed)| Rng::new(seed));
    let mut work: Vec<Matrix> = point.to_vec();
    for (pi, id) in ids.iter().enumerate() {
        let analytic = grads.wrt(*id);
        let n = point[pi].len();
        let coords: Vec<usize> = match (&mut rng, sample) {
            (Some(r), Some((k, _))) if k < n => (0..k).map(|_| r.below(n)).collect(),
            _ => (0..n).collect(),
        };
        for c in coords {
            let orig = point[pi].data()[c];
            work[pi].data_mut()[c] = orig + eps;
            let fp = eval(&work)?;
            work[pi].data_mut()[c] = orig - eps;
            let fm = eval(&work)?;
            work[pi].data_mut()[c] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic.data()[c];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            report.max_abs_gradient = report.max_abs_gradient.max(a.abs());
            if rel > report.max_rel_error || report.checked == 1 {
                report.max_rel_error = rel;
                report.worst = (pi, c);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
