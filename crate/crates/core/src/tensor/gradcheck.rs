//! Central-difference verification of reverse-mode gradients.

use super::{Graph, ParamStore, Var};
use crate::error::{Error, Result};

/// Denominator floor for the relative error. Exactly-zero gradients (an
/// attention key bias, say) come back from central differences as roundoff
/// of order 1e-10, which must not count as a relative error of 1.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<GradCheckEntry>,
    pub checked: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Only check parameters whose names start with one of these prefixes.
    pub prefixes: Option<Vec<String>>,
    /// Check at most this many evenly spaced entries per parameter.
    pub max_entries_per_param: Option<usize>,
}

impl GradCheckOptions {
    pub fn new(eps: f64) -> Self {
        Self {
            eps,
            prefixes: None,
            max_entries_per_param: None,
        }
    }
}

/// Compares gradients of the scalar built by `f` against central
/// differences for every parameter entry.
pub fn grad_check<F>(params: &ParamStore, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    grad_check_with(params, &GradCheckOptions::new(eps), f)
}

pub fn grad_check_with<F>(params: &ParamStore, opts: &GradCheckOptions, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    if opts.eps.is_nan() || opts.eps <= 0.0 {
        return Err(Error::Config(format!("finite-difference step must be positive, got {}", opts.eps)));
    }
    let mut g = Graph::new();
    let loss = f(&mut g, params)?;
    let analytic = g.backward(loss)?;

    let eval = |p: &ParamStore| -> Result<f64> {
        let mut g = Graph::inference();
        let l = f(&mut g, p)?;
        let v = g.value(l).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("loss during finite differences".into()))
        }
    };

    let mut report = GradCheckReport::default();
    let mut work = params.clone();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        if let Some(prefixes) = &opts.prefixes {
            if !prefixes.iter().any(|p| name.starts_with(p.as_str())) {
                continue;
            }
        }
        let n = params.require(&name)?.len();
        let stride = match opts.max_entries_per_param {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        for idx in (0..n).step_by(stride) {
            let orig = params.require(&name)?.data()[idx];
            work.get_mut(&name).expect("cloned store").data_mut()[idx] = orig + opts.eps;
            let plus = eval(&work)?;
            work.get_mut(&name).expect("cloned store").data_mut()[idx] = orig - opts.eps;
            let minus = eval(&work)?;
            work.get_mut(&name).expect("cloned store").data_mut()[idx] = orig;

            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic.get(&name).map_or(0.0, |g| g[idx]);
            let rel = relative_error(a, numeric);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some(GradCheckEntry {
                    name: name.clone(),
                    index: idx,
                    analytic: a,
                    numeric,
                    rel_error: rel,
                });
            }
        }
    }
    Ok(report)
}
