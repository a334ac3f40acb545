use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::irls::{expit, fit_logistic_irls, IrlsOptions};
use crate::error::{Error, Result};

/// Default add-alpha smoothing for the saturated learner.
pub const DEFAULT_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LearnerKind {
    InterceptOnly,
    /// Logistic regression on the conditioning variables' numeric values
    /// (one-vs-rest for more than two classes).
    MainTerms,
    /// Empirical conditional frequencies within each conditioning stratum,
    /// smoothed by adding `alpha` to every class count.
    Saturated { alpha: f64 },
}

impl Default for LearnerKind {
    fn default() -> Self {
        LearnerKind::Saturated { alpha: DEFAULT_ALPHA }
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LearnerKind::InterceptOnly => write!(f, "intercept_only"),
            LearnerKind::MainTerms => write!(f, "main_terms"),
            LearnerKind::Saturated { alpha } if *alpha == DEFAULT_ALPHA => write!(f, "saturated"),
            LearnerKind::Saturated { alpha } => write!(f, "saturated:{alpha}"),
        }
    }
}

impl FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s.trim() {
            "intercept_only" | "intercept" => LearnerKind::InterceptOnly,
            "main_terms" | "logistic_main_terms" => LearnerKind::MainTerms,
            "saturated" => LearnerKind::Saturated { alpha: DEFAULT_ALPHA },
            other => {
                let alpha = other
                    .strip_prefix("saturated:")
                    .and_then(|a| a.parse::<f64>().ok())
                    .filter(|a| a.is_finite() && *a >= 0.0)
                    .ok_or_else(|| {
                        Error::Input(format!(
                            "unknown learner `{other}` (expected intercept_only, main_terms, saturated or saturated:<alpha>)"
                        ))
                    })?;
                LearnerKind::Saturated { alpha }
            }
        };
        Ok(kind)
    }
}

impl TryFrom<String> for LearnerKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LearnerKind> for String {
    fn from(k: LearnerKind) -> String {
        k.to_string()
    }
}

/// One training example: stratum key, numeric features and class weights
/// (a one-hot vector, or `[1 - y, y]` for a fractional binary response).
#[derive(Debug, Clone)]
pub struct Example {
    pub key: Vec<usize>,
    pub x: Vec<f64>,
    pub resp: Vec<f64>,
}

/// A fitted conditional distribution over `k` classes.
#[derive(Debug, Clone)]
pub enum Categorical {
    Constant(Vec<f64>),
    Table { alpha: f64, k: usize, counts: HashMap<Vec<usize>, Vec<f64>> },
    Logistic { intercept_first: Vec<Vec<f64>> },
}

impl Categorical {
    pub fn fit(kind: LearnerKind, k: usize, data: &[Example]) -> Result<Categorical> {
        match kind {
            LearnerKind::InterceptOnly => {
                if data.is_empty() {
                    return Err(Error::Input("no training rows for an intercept-only fit".into()));
                }
                let mut tot = vec![0.0; k];
                for ex in data {
                    for (t, r) in tot.iter_mut().zip(&ex.resp) {
                        *t += r;
                    }
                }
                let s: f64 = tot.iter().sum();
                Ok(Categorical::Constant(tot.into_iter().map(|t| t / s).collect()))
            }
            LearnerKind::Saturated { alpha } => {
                let mut counts: HashMap<Vec<usize>, Vec<f64>> = HashMap::new();
                for ex in data {
                    let c = counts.entry(ex.key.clone()).or_insert_with(|| vec![0.0; k]);
                    for (t, r) in c.iter_mut().zip(&ex.resp) {
                        *t += r;
                    }
                }
                Ok(Categorical::Table { alpha, k, counts })
            }
            LearnerKind::MainTerms => {
                if data.is_empty() {
                    return Err(Error::Input("no training rows for a logistic fit".into()));
                }
                let p = data[0].x.len();
                let cols: Vec<Vec<f64>> = (0..p).map(|c| data.iter().map(|ex| ex.x[c]).collect()).collect();
                let col_refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
                let classes: Vec<usize> = if k == 2 { vec![1] } else { (0..k).collect() };
                let mut fits = Vec::with_capacity(classes.len());
                for c in classes {
                    let y: Vec<f64> = data.iter().map(|ex| ex.resp[c]).collect();
                    fits.push(fit_logistic_irls(&col_refs, &y, None, None, &IrlsOptions::default())?.coef);
                }
                Ok(Categorical::Logistic { intercept_first: fits })
            }
        }
    }

    /// Unclamped class probabilities at a stratum key / feature vector.
    pub fn predict(&self, key: &[usize], x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Categorical::Constant(p) => Ok(p.clone()),
            Categorical::Table { alpha, k, counts } => {
                let zero = vec![0.0; *k];
                let c = counts.get(key).unwrap_or(&zero);
                let n: f64 = c.iter().sum();
                let den = n + *k as f64 * alpha;
                if !(den > 0.0) {
                    return Err(Error::EmptyStratum { stratum: format!("{key:?}") });
                }
                Ok(c.iter().map(|v| (v + alpha) / den).collect())
            }
            Categorical::Logistic { intercept_first } => {
                let lin = |b: &[f64]| expit(b[0] + b[1..].iter().zip(x).map(|(c, v)| c * v).sum::<f64>());
                if intercept_first.len() == 1 {
                    let p = lin(&intercept_first[0]);
                    return Ok(vec![1.0 - p, p]);
                }
                let raw: Vec<f64> = intercept_first.iter().map(|b| lin(b)).collect();
                let s: f64 = raw.iter().sum();
                Ok(raw.into_iter().map(|v| v / s).collect())
            }
        }
    }
}

/// A fitted conditional mean of a nonnegative response.
#[derive(Debug, Clone)]
pub enum Mean {
    Constant(f64),
    Table { alpha: f64, global: f64, sums: HashMap<Vec<usize>, (f64, f64)> },
    /// Quasi-binomial logistic on the response divided by `scale`.
    Logistic { coef: Vec<f64>, scale: f64 },
}

impl Mean {
    pub fn fit(kind: LearnerKind, keys: &[Vec<usize>], x: &[Vec<f64>], y: &[f64]) -> Result<Mean> {
        if y.is_empty() {
            return Err(Error::Input("no training rows for a regression".into()));
        }
        let global = y.iter().sum::<f64>() / y.len() as f64;
        match kind {
            LearnerKind::InterceptOnly => Ok(Mean::Constant(global)),
            LearnerKind::Saturated { alpha } => {
                let mut sums: HashMap<Vec<usize>, (f64, f64)> = HashMap::new();
                for (k, v) in keys.iter().zip(y) {
                    let e = sums.entry(k.clone()).or_insert((0.0, 0.0));
                    e.0 += v;
                    e.1 += 1.0;
                }
                Ok(Mean::Table { alpha, global, sums })
            }
            LearnerKind::MainTerms => {
                let scale = y.iter().copied().fold(0.0, f64::max);
                if scale <= 0.0 {
                    return Ok(Mean::Constant(0.0));
                }
                let yy: Vec<f64> = y.iter().map(|v| v / scale).collect();
                let p = x[0].len();
                let cols: Vec<Vec<f64>> = (0..p).map(|c| x.iter().map(|r| r[c]).collect()).collect();
                let col_refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
                let coef = fit_logistic_irls(&col_refs, &yy, None, None, &IrlsOptions::default())?.coef;
                Ok(Mean::Logistic { coef, scale })
            }
        }
    }

    pub fn predict(&self, key: &[usize], x: &[f64]) -> Result<f64> {
        match self {
            Mean::Constant(c) => Ok(*c),
            Mean::Table { alpha, global, sums } => {
                let (s, n) = sums.get(key).copied().unwrap_or((0.0, 0.0));
                let den = n + alpha;
                if !(den > 0.0) {
                    return Err(Error::EmptyStratum { stratum: format!("{key:?}") });
                }
                Ok((s + alpha * global) / den)
            }
            Mean::Logistic { coef, scale } => {
                Ok(scale * expit(coef[0] + coef[1..].iter().zip(x).map(|(c, v)| c * v).sum::<f64>()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(key: usize, x: f64, class: usize) -> Example {
        let mut resp = vec![0.0, 0.0];
        resp[class] = 1.0;
        Example { key: vec![key], x: vec![x], resp }
    }

    #[test]
    fn parse_and_print() {
        assert_eq!("saturated".parse::<LearnerKind>().unwrap(), LearnerKind::Saturated { alpha: 0.5 });
        assert_eq!("saturated:0".parse::<LearnerKind>().unwrap(), LearnerKind::Saturated { alpha: 0.0 });
        assert_eq!("intercept_only".parse::<LearnerKind>().unwrap(), LearnerKind::InterceptOnly);
        assert!("forest".parse::<LearnerKind>().is_err());
        assert_eq!(LearnerKind::Saturated { alpha: 0.1 }.to_string(), "saturated:0.1");
        let k: LearnerKind = serde_json::from_str("\"main_terms\"").unwrap();
        assert_eq!(k, LearnerKind::MainTerms);
    }

    #[test]
    fn saturated_smoothing_and_empty_strata() {
        let data = vec![ex(0, 0.0, 1), ex(0, 0.0, 1), ex(0, 0.0, 0), ex(1, 1.0, 0)];
        let fit = Categorical::fit(LearnerKind::Saturated { alpha: 0.0 }, 2, &data).unwrap();
        assert_eq!(fit.predict(&[0], &[]).unwrap(), vec![1.0 / 3.0, 2.0 / 3.0]);
        assert!(matches!(fit.predict(&[7], &[]), Err(Error::EmptyStratum { .. })));
        let fit = Categorical::fit(LearnerKind::Saturated { alpha: 0.5 }, 2, &data).unwrap();
        assert_eq!(fit.predict(&[7], &[]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(fit.predict(&[1], &[]).unwrap(), vec![0.75, 0.25]);
    }

    #[test]
    fn intercept_only_is_marginal() {
        let data = vec![ex(0, 0.0, 1), ex(1, 1.0, 0), ex(1, 1.0, 0), ex(2, 0.0, 0)];
        let fit = Categorical::fit(LearnerKind::InterceptOnly, 2, &data).unwrap();
        assert_eq!(fit.predict(&[9], &[3.0]).unwrap(), vec![0.75, 0.25]);
    }

    #[test]
    fn main_terms_binary_feature() {
        let mut data = vec![];
        for i in 0..10 {
            data.push(ex(0, 0.0, usize::from(i < 3)));
            data.push(ex(1, 1.0, usize::from(i < 6)));
        }
        let fit = Categorical::fit(LearnerKind::MainTerms, 2, &data).unwrap();
        assert!((fit.predict(&[], &[0.0]).unwrap()[1] - 0.3).abs() < 1e-8);
        assert!((fit.predict(&[], &[1.0]).unwrap()[1] - 0.6).abs() < 1e-8);
    }

    #[test]
    fn mean_learners() {
        let keys = vec![vec![0], vec![0], vec![1]];
        let x = vec![vec![0.0], vec![0.0], vec![1.0]];
        let y = [0.2, 0.4, 1.2];
        let sat = Mean::fit(LearnerKind::Saturated { alpha: 0.0 }, &keys, &x, &y).unwrap();
        assert!((sat.predict(&[0], &[]).unwrap() - 0.3).abs() < 1e-15);
        assert!((sat.predict(&[1], &[]).unwrap() - 1.2).abs() < 1e-15);
        let lin = Mean::fit(LearnerKind::MainTerms, &keys, &x, &y).unwrap();
        assert!((lin.predict(&[], &[1.0]).unwrap() - 1.2).abs() < 1e-6);
        let c = Mean::fit(LearnerKind::InterceptOnly, &keys, &x, &y).unwrap();
        assert!((c.predict(&[5], &[]).unwrap() - 0.6).abs() < 1e-15);
    }
}
