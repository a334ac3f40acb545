//! Weighted logistic regression with offset by iteratively reweighted least
//! squares. Responses may be fractional (quasi-binomial).

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Coefficient magnitude treated as evidence of separation.
pub const SEPARATION_BOUND: f64 = 30.0;
/// Ridge penalty used after separation or a singular information matrix.
pub const FALLBACK_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct IrlsOptions {
    pub intercept: bool,
    /// Convergence threshold on the largest component of the mean score.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        IrlsOptions { intercept: true, tol: 1e-10, max_iter: 100 }
    }
}

#[derive(Debug, Clone)]
pub struct IrlsFit {
    /// Intercept first when requested, then one coefficient per column.
    pub coef: Vec<f64>,
    pub iterations: usize,
    /// Largest absolute component of the final mean score.
    pub score_norm: f64,
    /// Penalized mean log-likelihood after each line-searched iterate,
    /// starting at zero coefficients.
    pub loglik: Vec<f64>,
    pub ridge: f64,
}

impl IrlsFit {
    /// Linear predictor for one row (without offset).
    pub fn linear(&self, intercept: bool, x: &[f64]) -> f64 {
        let (b0, rest) = if intercept { (self.coef[0], &self.coef[1..]) } else { (0.0, &self.coef[..]) };
        b0 + rest.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `log(1 + exp(x))` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

struct Problem<'a> {
    x: DMatrix<f64>,
    y: &'a [f64],
    w: Vec<f64>,
    offset: Vec<f64>,
    wsum: f64,
}

impl Problem<'_> {
    fn eta(&self, beta: &DVector<f64>) -> DVector<f64> {
        let mut eta = &self.x * beta;
        for (e, o) in eta.iter_mut().zip(&self.offset) {
            *e += o;
        }
        eta
    }

    fn objective(&self, beta: &DVector<f64>, ridge: f64) -> f64 {
        let eta = self.eta(beta);
        let ll: f64 = eta
            .iter()
            .zip(self.y)
            .zip(&self.w)
            .map(|((&e, &y), &w)| w * (y * e - softplus(e)))
            .sum();
        ll / self.wsum - 0.5 * ridge * beta.norm_squared()
    }

    fn score_and_info(&self, beta: &DVector<f64>, ridge: f64) -> (DVector<f64>, DMatrix<f64>) {
        let eta = self.eta(beta);
        let p = self.x.ncols();
        let n = self.x.nrows();
        let mut resid = DVector::zeros(n);
        let mut xw = self.x.clone();
        for i in 0..n {
            let mu = expit(eta[i]);
            resid[i] = self.w[i] * (self.y[i] - mu) / self.wsum;
            let s = (self.w[i] * mu * (1.0 - mu) / self.wsum).sqrt();
            for k in 0..p {
                xw[(i, k)] *= s;
            }
        }
        let mut score = self.x.tr_mul(&resid);
        score -= beta * ridge;
        let mut info = xw.tr_mul(&xw);
        for k in 0..p {
            info[(k, k)] += ridge;
        }
        (score, info)
    }
}

/// Maximizes the weighted Bernoulli quasi-log-likelihood with a fixed offset.
///
/// `columns` are design columns of length `n`; an intercept column is added
/// in front when `opts.intercept` is set. With no columns at all the fit is
/// empty and fitted probabilities are `expit(offset)`.
pub fn fit_logistic_irls(
    columns: &[&[f64]],
    y: &[f64],
    weights: Option<&[f64]>,
    offset: Option<&[f64]>,
    opts: &IrlsOptions,
) -> Result<IrlsFit> {
    let n = y.len();
    if columns.iter().any(|c| c.len() != n)
        || weights.is_some_and(|w| w.len() != n)
        || offset.is_some_and(|o| o.len() != n)
    {
        return Err(Error::Input("IRLS inputs have mismatched lengths".into()));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::Input("IRLS tolerance must be positive".into()));
    }
    if let Some(v) = y.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Input(format!("IRLS response {v} outside [0, 1]")));
    }
    let w: Vec<f64> = weights.map_or_else(|| vec![1.0; n], <[f64]>::to_vec);
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Input("IRLS weights must be finite and nonnegative".into()));
    }
    let wsum: f64 = w.iter().sum();
    if !(wsum > 0.0) {
        return Err(Error::Input("IRLS needs positive total weight".into()));
    }
    let p = columns.len() + usize::from(opts.intercept);
    let x = DMatrix::from_fn(n, p, |i, k| match (opts.intercept, k) {
        (true, 0) => 1.0,
        (true, k) => columns[k - 1][i],
        (false, k) => columns[k][i],
    });
    let problem = Problem {
        x,
        y,
        w,
        offset: offset.map_or_else(|| vec![0.0; n], <[f64]>::to_vec),
        wsum,
    };
    if p == 0 {
        return Ok(IrlsFit { coef: vec![], iterations: 0, score_norm: 0.0, loglik: vec![problem.objective(&DVector::zeros(0), 0.0)], ridge: 0.0 });
    }
    match newton(&problem, 0.0, opts) {
        Ok(fit) if fit.coef.iter().all(|b| b.abs() <= SEPARATION_BOUND) => Ok(fit),
        Ok(_) | Err(Error::Numerical(_)) => {
            warn!("logistic fit separated or singular; refitting with ridge {FALLBACK_RIDGE}");
            newton(&problem, FALLBACK_RIDGE, opts)
        }
        Err(e) => Err(e),
    }
}

fn newton(problem: &Problem<'_>, ridge: f64, opts: &IrlsOptions) -> Result<IrlsFit> {
    let p = problem.x.ncols();
    let mut beta = DVector::zeros(p);
    let mut obj = problem.objective(&beta, ridge);
    let mut trace = vec![obj];
    let mut score_norm = f64::INFINITY;
    for iter in 0..=opts.max_iter {
        let (score, info) = problem.score_and_info(&beta, ridge);
        score_norm = score.amax();
        if score_norm <= opts.tol {
            return Ok(IrlsFit { coef: beta.iter().copied().collect(), iterations: iter, score_norm, loglik: trace, ridge });
        }
        if iter == opts.max_iter {
            break;
        }
        let step = match info.clone().cholesky() {
            Some(ch) => ch.solve(&score),
            None => info
                .lu()
                .solve(&score)
                .ok_or_else(|| Error::Numerical("singular information matrix".into()))?,
        };
        if step.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite Newton step".into()));
        }
        if score.dot(&step) < 1e-14 {
            // objective changes are below rounding here; take the plain Newton step
            beta += step;
            obj = problem.objective(&beta, ridge);
            continue;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &beta + &step * t;
            let cand_obj = problem.objective(&cand, ridge);
            if cand_obj >= obj {
                beta = cand;
                obj = cand_obj;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // no ascent direction left at machine precision
            return Ok(IrlsFit { coef: beta.iter().copied().collect(), iterations: iter, score_norm, loglik: trace, ridge });
        }
        trace.push(obj);
        if ridge == 0.0 && beta.amax() > SEPARATION_BOUND {
            return Err(Error::Numerical("coefficient diverging".into()));
        }
    }
    Err(Error::NonConvergence { iterations: opts.max_iter, score_norm, last: beta.iter().copied().collect() })
}
