/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest error.
    pub worst_index: Option<usize>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
    /// Coordinates left out because the perturbation changed the function's
    /// smooth regime (see [`FdOptions::regime`]).
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }

    /// Folds another report into this one.
    pub fn merge(&mut self, other: &GradCheckReport) {
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst_index = other.worst_index;
            self.worst_analytic = other.worst_analytic;
            self.worst_numeric = other.worst_numeric;
        }
        self.checked += other.checked;
        self.skipped += other.skipped;
    }
}

impl Default for GradCheckReport {
    fn default() -> Self {
        Self {
            max_rel_error: 0.0,
            worst_index: None,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
            checked: 0,
            skipped: 0,
        }
    }
}

pub struct FdOptions<'a> {
    /// Step in raw-parameter space.
    pub eps: f64,
    /// Coordinates to check; all when `None`.
    pub indices: Option<&'a [usize]>,
    /// Identifies the piecewise-smooth piece the function is on (activation
    /// pattern, contributor set). A coordinate whose ±eps evaluations land on
    /// a different piece than the base point has no meaningful central
    /// difference and is skipped.
    pub regime: Option<&'a dyn Fn(&[f64]) -> u64>,
    /// How many times a step that leaves the regime is divided by ten and
    /// retried before the coordinate is skipped.
    pub shrink: u32,
}

impl Default for FdOptions<'_> {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            indices: None,
            regime: None,
            shrink: 0,
        }
    }
}

/// Compares `analytic` against central differences of `f` at `params`.
pub fn finite_diff_check<F: FnMut(&[f64]) -> f64>(
    f: F,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
) -> GradCheckReport {
    finite_diff_check_with(
        f,
        params,
        analytic,
        &FdOptions {
            eps,
            ..FdOptions::default()
        },
    )
}

pub fn finite_diff_check_with<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    params: &[f64],
    analytic: &[f64],
    options: &FdOptions<'_>,
) -> GradCheckReport {
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    assert!(options.eps > 0.0);
    let all: Vec<usize>;
    let indices = match options.indices {
        Some(ix) => ix,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let base_regime = options.regime.map(|r| r(params));
    let mut x = params.to_vec();
    let mut report = GradCheckReport::default();
    for &i in indices {
        let x0 = x[i];
        let mut eps = options.eps;
        let mut numeric = None;
        for _ in 0..=options.shrink {
            x[i] = x0 + eps;
            let plus_regime = options.regime.map(|r| r(&x));
            let fp = f(&x);
            x[i] = x0 - eps;
            let minus_regime = options.regime.map(|r| r(&x));
            let fm = f(&x);
            x[i] = x0;
            if plus_regime == base_regime && minus_regime == base_regime {
                numeric = Some((fp - fm) / (2.0 * eps));
                break;
            }
            eps /= 10.0;
        }
        let Some(numeric) = numeric else {
            report.skipped += 1;
            continue;
        };
        let err = relative_error(analytic[i], numeric);
        report.checked += 1;
        if report.worst_index.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = Some(i);
            report.worst_analytic = analytic[i];
            report.worst_numeric = numeric;
        }
    }
    report
}
