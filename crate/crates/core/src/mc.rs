//! Monte Carlo replication harness: sample from a known law, fit, estimate,
//! and compare against the exact truth.
//!
//! Every replication draws its data from a seed hashed from the master seed,
//! the sample size and the replication index, so results do not depend on
//! the number of workers or on how many replications are requested.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{onestep, tmle, Estimator, TmleOptions, TolRule};
use crate::intervene::Intervention;
use crate::law::oracle::{oracle_effects, oracle_efficiency_bounds};
use crate::law::{build_shift_dgp, build_sim_dgp, Clamp, DiscreteLaw};
use crate::learn::{fit_nuisances, make_folds, LearnerConfig, Nuisance};

/// Where the simulation law comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawSource {
    /// The binary simulation design.
    Sim,
    /// The four-level-treatment variant used for discrete shifts.
    Shift,
    /// A law JSON document on disk.
    File(PathBuf),
}

impl LawSource {
    pub fn load(&self, clamp: Clamp) -> Result<DiscreteLaw> {
        match self {
            LawSource::Sim => Ok(build_sim_dgp(clamp)),
            LawSource::Shift => Ok(build_shift_dgp(clamp)),
            LawSource::File(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Input(format!("cannot read law file {}: {e}", path.display())))?;
                DiscreteLaw::from_json(&serde_json::from_str(&text)?)
            }
        }
    }
}

/// Which single nuisance is fitted intercept-only, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Arm {
    None,
    Misspecified(Nuisance),
}

pub const ARM_NAMES: [&str; 6] = ["none", "m", "g", "e", "b", "d"];

impl Arm {
    pub fn parse(name: &str) -> Result<Arm> {
        Ok(match name {
            "none" => Arm::None,
            "m" => Arm::Misspecified(Nuisance::M),
            "g" => Arm::Misspecified(Nuisance::G),
            "e" => Arm::Misspecified(Nuisance::E),
            "b" => Arm::Misspecified(Nuisance::B),
            "d" => Arm::Misspecified(Nuisance::D),
            other => {
                return Err(Error::Input(format!("unknown arm `{other}`; valid arms: {}", ARM_NAMES.join(", "))));
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Arm::None => "none",
            Arm::Misspecified(n) => n.name(),
        }
    }

    fn learners(&self, base: &LearnerConfig) -> Result<LearnerConfig> {
        match self {
            Arm::None => Ok(base.clone()),
            Arm::Misspecified(n) => base.misspecify(*n),
        }
    }
}

impl Serialize for Arm {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Arm {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Arm::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub law: LawSource,
    pub clamp: Clamp,
    pub interventions: Vec<Intervention>,
    pub sizes: Vec<usize>,
    pub reps: usize,
    pub estimators: Vec<Estimator>,
    pub arms: Vec<Arm>,
    pub folds: usize,
    pub seed: u64,
    pub learners: LearnerConfig,
    pub alpha: f64,
    pub stabilize: bool,
    pub tmle_max_iter: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig::desk()
    }
}

impl SimConfig {
    /// Desk-scale profile: three sample sizes, 300 replications, odds
    /// ratio 2, every arm, both estimators.
    pub fn desk() -> Self {
        SimConfig {
            law: LawSource::Sim,
            clamp: Clamp::default(),
            interventions: vec![Intervention::OddsTilt { delta: 2.0 }],
            sizes: vec![200, 800, 3200],
            reps: 300,
            estimators: vec![Estimator::OneStep, Estimator::Tmle],
            arms: ARM_NAMES.iter().map(|a| Arm::parse(a).unwrap()).collect(),
            folds: 5,
            seed: 20_240_501,
            learners: LearnerConfig::default(),
            alpha: 0.05,
            stabilize: false,
            tmle_max_iter: 100,
        }
    }

    /// The full grid of the original study design.
    pub fn full() -> Self {
        SimConfig { sizes: vec![200, 450, 800, 1800, 3200, 7200, 16200], reps: 500, ..SimConfig::desk() }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            other => Err(Error::Input(format!("unknown profile `{other}`; valid profiles: desk, full"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps < 1 {
            return Err(Error::Input("replication count must be at least 1".into()));
        }
        if self.sizes.is_empty() || self.interventions.is_empty() || self.estimators.is_empty() || self.arms.is_empty() {
            return Err(Error::Input("sizes, interventions, estimators and arms must be nonempty".into()));
        }
        if self.folds < 2 || self.sizes.iter().any(|&n| n < self.folds) {
            return Err(Error::Input(format!("need 2 <= folds <= n, got {} folds", self.folds)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Input(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.estimators.contains(&Estimator::Tmle)
            && self.interventions.iter().any(|s| matches!(s, Intervention::DiscreteShift { .. }))
        {
            return Err(Error::Unsupported("the targeted estimator does not handle discrete shifts; run onestep only".into()));
        }
        Ok(())
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for replication `rep` at sample size `n`.
pub fn replication_seed(master: u64, n: usize, rep: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ n as u64) ^ rep as u64)
}

/// One estimator's output on one replicated dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Replication {
    pub n: usize,
    pub rep: usize,
    pub arm: Arm,
    pub estimator: Estimator,
    pub spec: Intervention,
    pub psi_d: f64,
    pub psi_i: f64,
    pub se_d: f64,
    pub se_i: f64,
    pub converged: bool,
    /// Set when the replication failed; estimates are then NaN.
    pub error: Option<String>,
}

fn replicate(config: &SimConfig, law: &DiscreteLaw, n: usize, rep: usize) -> Vec<Replication> {
    let seed = replication_seed(config.seed, n, rep);
    let data = law.sample(n, seed);
    let tmle_opts = TmleOptions { tol: TolRule::Auto, max_iter: config.tmle_max_iter, alpha: config.alpha, clamp: config.learners.clamp };
    let mut out = vec![];
    for &arm in &config.arms {
        let fitted = make_folds(n, config.folds, seed)
            .and_then(|folds| arm.learners(&config.learners).and_then(|l| fit_nuisances(&data, &folds, &l)).map(|eta| (folds, eta)));
        for &spec in &config.interventions {
            for &estimator in &config.estimators {
                let result = fitted.as_ref().map_err(|e| e.to_string()).and_then(|(folds, eta)| {
                    match estimator {
                        Estimator::OneStep => onestep(&data, eta, folds, spec, config.stabilize, config.alpha),
                        Estimator::Tmle => tmle(&data, eta, folds, spec, &tmle_opts),
                    }
                    .map_err(|e| e.to_string())
                });
                out.push(match result {
                    Ok(e) => Replication {
                        n,
                        rep,
                        arm,
                        estimator,
                        spec,
                        psi_d: e.psi_d,
                        psi_i: e.psi_i,
                        se_d: e.se_d,
                        se_i: e.se_i,
                        converged: e.diagnostics.tmle.as_ref().is_none_or(|t| t.converged),
                        error: None,
                    },
                    Err(msg) => {
                        warn!("replication {rep} at n = {n}, arm {}, {estimator}: {msg}", arm.name());
                        Replication {
                            n,
                            rep,
                            arm,
                            estimator,
                            spec,
                            psi_d: f64::NAN,
                            psi_i: f64::NAN,
                            se_d: f64::NAN,
                            se_i: f64::NAN,
                            converged: false,
                            error: Some(msg),
                        }
                    }
                });
            }
        }
    }
    out
}

/// Runs every replication of the configuration, in parallel over
/// `(n, rep)` pairs, returning records in a fixed order.
pub fn simulate_raw(config: &SimConfig, law: &DiscreteLaw) -> Result<Vec<Replication>> {
    config.validate()?;
    let mut out = vec![];
    for &n in &config.sizes {
        info!("n = {n}: {} replications", config.reps);
        let batch: Vec<Vec<Replication>> = (0..config.reps).into_par_iter().map(|rep| replicate(config, law, n, rep)).collect();
        out.extend(batch.into_iter().flatten());
    }
    Ok(out)
}

/// Exact targets for one intervention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Truth {
    pub psi_d: f64,
    pub psi_i: f64,
    pub bound_d: f64,
    pub bound_i: f64,
}

pub fn truths(law: &DiscreteLaw, specs: &[Intervention]) -> Result<Vec<(Intervention, Truth)>> {
    specs
        .iter()
        .map(|&spec| {
            let e = oracle_effects(law, spec)?;
            let (bound_d, bound_i) = oracle_efficiency_bounds(law, spec)?;
            Ok((spec, Truth { psi_d: e.psi_d, psi_i: e.psi_i, bound_d, bound_i }))
        })
        .collect()
}

/// A metric with its jackknife Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metric {
    pub value: f64,
    pub mc_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellMetrics {
    pub estimator: Estimator,
    pub arm: Arm,
    pub spec: Intervention,
    pub n: usize,
    /// `"direct"` or `"indirect"`.
    pub effect: &'static str,
    pub truth: f64,
    pub bound: f64,
    pub reps: usize,
    pub failures: usize,
    pub nonconverged: usize,
    pub bias: Metric,
    pub root_n_abs_bias: Metric,
    pub sd: Metric,
    pub mse: Metric,
    pub n_mse_over_bound: Metric,
    pub coverage: Metric,
}

impl CellMetrics {
    fn metrics(&self) -> [(&'static str, Metric); 6] {
        [
            ("bias", self.bias),
            ("root_n_abs_bias", self.root_n_abs_bias),
            ("sd", self.sd),
            ("mse", self.mse),
            ("n_mse_over_bound", self.n_mse_over_bound),
            ("coverage", self.coverage),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub cells: Vec<CellMetrics>,
}

impl MetricsReport {
    pub fn cell(&self, estimator: Estimator, arm: Arm, spec: Intervention, n: usize, effect: &str) -> Option<&CellMetrics> {
        self.cells
            .iter()
            .find(|c| c.estimator == estimator && c.arm == arm && c.spec == spec && c.n == n && c.effect == effect)
    }

    /// One row per cell and metric.
    pub fn write_csv<W: Write>(&self, mut out: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record([
            "estimator", "arm", "intervention", "n", "effect", "truth", "reps", "failures", "metric", "value", "mc_se",
        ])?;
        for c in &self.cells {
            for (name, m) in c.metrics() {
                wtr.write_record(&[
                    c.estimator.to_string(),
                    c.arm.name().to_string(),
                    c.spec.to_string(),
                    c.n.to_string(),
                    c.effect.to_string(),
                    c.truth.to_string(),
                    c.reps.to_string(),
                    c.failures.to_string(),
                    name.to_string(),
                    m.value.to_string(),
                    m.mc_se.to_string(),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Jackknife standard error of `stat` over the leave-one-out subsamples.
fn jackknife<F: Fn(&[usize]) -> f64>(r: usize, stat: F) -> f64 {
    let loo: Vec<f64> = (0..r)
        .map(|i| {
            let idx: Vec<usize> = (0..r).filter(|&k| k != i).collect();
            stat(&idx)
        })
        .collect();
    let m = loo.iter().sum::<f64>() / r as f64;
    ((r - 1) as f64 / r as f64 * loo.iter().map(|v| (v - m) * (v - m)).sum::<f64>()).sqrt()
}

struct Sample<'a> {
    est: &'a [f64],
    se: &'a [f64],
    truth: f64,
}

impl Sample<'_> {
    fn mean(&self, idx: &[usize]) -> f64 {
        idx.iter().map(|&i| self.est[i]).sum::<f64>() / idx.len() as f64
    }

    fn sd(&self, idx: &[usize]) -> f64 {
        if idx.len() < 2 {
            return 0.0;
        }
        let m = self.mean(idx);
        (idx.iter().map(|&i| (self.est[i] - m).powi(2)).sum::<f64>() / (idx.len() - 1) as f64).sqrt()
    }

    fn coverage(&self, idx: &[usize], z: f64) -> f64 {
        let hit = idx.iter().filter(|&&i| (self.est[i] - self.truth).abs() <= z * self.se[i]).count();
        hit as f64 / idx.len() as f64
    }
}

/// Aggregates raw replications into per-cell metrics.
pub fn summarize(raw: &[Replication], truths: &[(Intervention, Truth)], alpha: f64) -> Result<MetricsReport> {
    use statrs::distribution::{ContinuousCDF, Normal};
    let z = Normal::standard().inverse_cdf(1.0 - alpha / 2.0);
    let mut groups: BTreeMap<(String, usize, Arm, String), Vec<&Replication>> = BTreeMap::new();
    let mut order = vec![];
    for r in raw {
        let key = (r.estimator.to_string(), r.n, r.arm, r.spec.to_string());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    let mut cells = vec![];
    for key in order {
        let reps = &groups[&key];
        let first = reps[0];
        let truth = truths
            .iter()
            .find(|(s, _)| *s == first.spec)
            .map(|(_, t)| *t)
            .ok_or_else(|| Error::Input(format!("no truth for intervention {}", first.spec)))?;
        let ok: Vec<&&Replication> = reps.iter().filter(|r| r.error.is_none()).collect();
        let failures = reps.len() - ok.len();
        let cell_name = format!("{} arm {} {} n = {}", first.estimator, first.arm.name(), first.spec, first.n);
        if ok.len() < 2 {
            return Err(Error::Numerical(format!("cell ({cell_name}) has {} successful replications; need at least 2", ok.len())));
        }
        let nonconverged = ok.iter().filter(|r| !r.converged).count();
        let n = first.n as f64;
        for (effect, t, bound) in [("direct", truth.psi_d, truth.bound_d), ("indirect", truth.psi_i, truth.bound_i)] {
            let est: Vec<f64> = ok.iter().map(|r| if effect == "direct" { r.psi_d } else { r.psi_i }).collect();
            let se: Vec<f64> = ok.iter().map(|r| if effect == "direct" { r.se_d } else { r.se_i }).collect();
            let s = Sample { est: &est, se: &se, truth: t };
            let r = est.len();
            let all: Vec<usize> = (0..r).collect();
            let bias = |idx: &[usize]| s.mean(idx) - t;
            let mse = |idx: &[usize]| bias(idx).powi(2) + s.sd(idx).powi(2);
            let scaled = |idx: &[usize]| if bound > 0.0 { n * mse(idx) / bound } else { f64::NAN };
            let metric = |f: &dyn Fn(&[usize]) -> f64| Metric { value: f(&all), mc_se: jackknife(r, f) };
            cells.push(CellMetrics {
                estimator: first.estimator,
                arm: first.arm,
                spec: first.spec,
                n: first.n,
                effect,
                truth: t,
                bound,
                reps: r,
                failures,
                nonconverged,
                bias: metric(&bias),
                root_n_abs_bias: metric(&|idx| n.sqrt() * bias(idx).abs()),
                sd: metric(&|idx| s.sd(idx)),
                mse: metric(&mse),
                n_mse_over_bound: metric(&scaled),
                coverage: metric(&|idx| s.coverage(idx, z)),
            });
        }
    }
    Ok(MetricsReport { cells })
}

/// Loads the law, runs every replication and summarizes.
pub fn run_replications(config: &SimConfig) -> Result<MetricsReport> {
    let law = config.law.load(config.clamp)?;
    let truth = truths(&law, &config.interventions)?;
    let raw = simulate_raw(config, &law)?;
    summarize(&raw, &truth, config.alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rep(r: usize, psi: f64, se: f64) -> Replication {
        Replication {
            n: 100,
            rep: r,
            arm: Arm::None,
            estimator: Estimator::OneStep,
            spec: Intervention::Identity,
            psi_d: psi,
            psi_i: -psi,
            se_d: se,
            se_i: se,
            converged: true,
            error: None,
        }
    }

    fn truth(t: f64) -> Vec<(Intervention, Truth)> {
        vec![(Intervention::Identity, Truth { psi_d: t, psi_i: -t, bound_d: 1.0, bound_i: 1.0 })]
    }

    #[test]
    fn constant_estimates_at_truth() {
        let raw: Vec<_> = (0..5).map(|r| rep(r, 0.3, 0.1)).collect();
        let m = summarize(&raw, &truth(0.3), 0.05).unwrap();
        let c = &m.cells[0];
        assert_eq!((c.bias.value, c.sd.value, c.coverage.value), (0.0, 0.0, 1.0));
    }

    #[test]
    fn two_replications_by_hand() {
        let raw = vec![rep(0, 1.5, 1.0), rep(1, -0.5, 1.0)];
        let m = summarize(&raw, &truth(0.5), 0.05).unwrap();
        let c = &m.cells[0];
        assert!(c.bias.value.abs() < 1e-15);
        assert!((c.sd.value - 2f64.sqrt()).abs() < 1e-15);
        assert!((c.mse.value - c.bias.value.powi(2) - c.sd.value.powi(2)).abs() < 1e-12);
    }

    #[test]
    fn empty_cell_is_named() {
        let mut bad = rep(0, 0.0, 1.0);
        bad.error = Some("boom".into());
        let err = summarize(&[bad, rep(1, 0.0, 1.0)], &truth(0.0), 0.05).unwrap_err();
        assert!(err.to_string().contains("onestep arm none identity n = 100"), "{err}");
    }

    #[test]
    fn jackknife_of_mean_is_standard_error() {
        let x = [1.0, 4.0, 2.0, 8.0, 5.0];
        let n = x.len();
        let se = jackknife(n, |idx| idx.iter().map(|&i| x[i]).sum::<f64>() / idx.len() as f64);
        let m = x.iter().sum::<f64>() / n as f64;
        let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((se - sd / (n as f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn arms_parse_and_reject() {
        assert_eq!(Arm::parse("g").unwrap(), Arm::Misspecified(Nuisance::G));
        let err = Arm::parse("q").unwrap_err().to_string();
        assert!(err.contains("none, m, g, e, b, d"));
        let cfg: SimConfig = serde_json::from_str(r#"{"arms": ["none", "m"], "reps": 3}"#).unwrap();
        assert_eq!(cfg.arms, vec![Arm::None, Arm::Misspecified(Nuisance::M)]);
        assert!(serde_json::from_str::<SimConfig>(r#"{"arms": ["x"]}"#).is_err());
    }

    #[test]
    fn seeds_are_isolated() {
        let small = SimConfig { sizes: vec![60], reps: 2, arms: vec![Arm::None], ..SimConfig::desk() };
        let large = SimConfig { reps: 4, ..small.clone() };
        let law = small.law.load(small.clamp).unwrap();
        let a = simulate_raw(&small, &law).unwrap();
        let b = simulate_raw(&large, &law).unwrap();
        assert_eq!(a[..], b[..a.len()]);
    }
}
