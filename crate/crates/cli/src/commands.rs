use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use medshift::estimate::{onestep, tmle, EffectEstimate, Estimator, TmleOptions, TolRule};
use medshift::law::oracle::{configurations_for, oracle_effects, oracle_efficiency_bounds, robustness_check, RobustnessCheck};
use medshift::law::Clamp;
use medshift::learn::{fit_nuisances, make_folds, Dataset, LearnerConfig, Roles};
use medshift::mc::{run_replications, Arm, LawSource, SimConfig};
use medshift::{Error, Intervention, Result};

use crate::args::{EstimateArgs, EstimatorChoice, InterventionArgs, OracleArgs, SimulateArgs};
use crate::output::{create_dir, write_json, writer, Provenance};

/// Parses `start:stop:step` or a comma-separated list.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::Input(format!("cannot parse delta grid `{text}`; use start:stop:step or a comma-separated list"));
    let grid: Vec<f64> = if text.contains(':') {
        let parts: Vec<f64> = text.split(':').map(|p| p.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?;
        let [start, stop, step] = parts[..] else { return Err(bad()) };
        if !(step > 0.0) || stop < start {
            return Err(Error::Input(format!("delta grid `{text}` needs step > 0 and stop >= start")));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize;
        (0..=count).map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12).collect()
    } else {
        text.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?
    };
    if grid.is_empty() {
        return Err(bad());
    }
    Ok(grid)
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|p| p.trim().parse().map_err(|_| Error::Input(format!("cannot parse {what} `{p}`"))))
        .collect()
}

fn specs(kind: &str, deltas: &[f64]) -> Result<Vec<Intervention>> {
    if kind == "identity" {
        return Ok(vec![Intervention::Identity]);
    }
    if deltas.is_empty() {
        return Err(Error::Input(format!("intervention `{kind}` needs --delta or --delta-grid")));
    }
    deltas.iter().map(|&d| Intervention::from_kind(kind, d)).collect()
}

fn resolve_deltas(args: &InterventionArgs) -> Result<Option<Vec<f64>>> {
    match (&args.delta, &args.delta_grid) {
        (Some(d), _) => Ok(Some(vec![*d])),
        (None, Some(g)) => parse_grid(g).map(Some),
        (None, None) => Ok(None),
    }
}

fn estimators(choice: EstimatorChoice) -> Vec<Estimator> {
    match choice {
        EstimatorChoice::Onestep => vec![Estimator::OneStep],
        EstimatorChoice::Tmle => vec![Estimator::Tmle],
        EstimatorChoice::Both => vec![Estimator::OneStep, Estimator::Tmle],
    }
}

fn parse_estimator(name: &str) -> Result<EstimatorChoice> {
    match name {
        "onestep" => Ok(EstimatorChoice::Onestep),
        "tmle" => Ok(EstimatorChoice::Tmle),
        "both" => Ok(EstimatorChoice::Both),
        other => Err(Error::Input(format!("unknown estimator `{other}`; valid: onestep, tmle, both"))),
    }
}

fn law_source(name: &str) -> LawSource {
    match name {
        "sim" => LawSource::Sim,
        "shift" => LawSource::Shift,
        path => LawSource::File(PathBuf::from(path)),
    }
}

fn clamp_of(lo: Option<f64>) -> Result<Clamp> {
    lo.map_or_else(|| Ok(Clamp::default()), Clamp::symmetric)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| Error::Input(format!("cannot open {}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

fn done(path: &Path) {
    println!("wrote {}", path.display());
}

#[derive(Debug, Clone, Serialize)]
struct DatasetConfig<'a> {
    law: &'a LawSource,
    clamp: Clamp,
    n: usize,
    seed: u64,
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    create_dir(&args.out_dir)?;
    if let Some(n) = args.n {
        let law_src = law_source(args.law.as_deref().unwrap_or("sim"));
        let clamp = clamp_of(args.clamp)?;
        let seed = args.seed.unwrap_or(1);
        let law = law_src.load(clamp)?;
        let data = law.sample(n, seed);
        let prov = Provenance::new("simulate", &DatasetConfig { law: &law_src, clamp, n, seed }, Some(seed))?;
        let (path, mut w) = writer(&args.out_dir, "data.csv")?;
        data.write_csv(&mut w, &prov.lines())?;
        w.flush()?;
        done(&path);
        return Ok(());
    }

    let mut cfg = match (&args.config, &args.profile) {
        (Some(path), _) => read_json::<SimConfig>(path)?,
        (None, Some(p)) => SimConfig::profile(p)?,
        (None, None) => SimConfig::desk(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(l) = &args.law {
        cfg.law = law_source(l);
    }
    if args.clamp.is_some() {
        cfg.clamp = clamp_of(args.clamp)?;
        cfg.learners.clamp = cfg.clamp;
    }
    if let Some(a) = &args.arms {
        cfg.arms = a.split(',').map(|x| Arm::parse(x.trim())).collect::<Result<_>>()?;
    }
    if let Some(s) = &args.sizes {
        cfg.sizes = parse_list(s, "sample size")?;
    }
    if let Some(r) = args.reps {
        cfg.reps = r;
    }
    if let Some(deltas) = resolve_deltas(&args.intervention)? {
        cfg.interventions = specs(args.intervention.intervention.as_deref().unwrap_or("odds_tilt"), &deltas)?;
    } else if let Some(kind) = &args.intervention.intervention {
        let deltas: Vec<f64> = cfg.interventions.iter().map(Intervention::delta).collect();
        cfg.interventions = specs(kind, &deltas)?;
    }
    if let Some(e) = args.estimator {
        cfg.estimators = estimators(e);
    }
    if let Some(f) = args.folds {
        cfg.folds = f;
    }
    if args.stabilize {
        cfg.stabilize = true;
    }
    cfg.validate()?;
    let prov = Provenance::new("simulate", &cfg, Some(cfg.seed))?;
    let report = run_replications(&cfg)?;
    let (path, mut w) = writer(&args.out_dir, "metrics.csv")?;
    report.write_csv(&mut w, &prov.lines())?;
    w.flush()?;
    done(&path);
    done(&write_json(&args.out_dir, "metrics.json", &prov, "report", &serde_json::json!({ "config": cfg, "cells": report.cells }))?);
    for c in &report.cells {
        if c.failures > 0 || c.nonconverged > 0 {
            eprintln!(
                "note: {} arm {} {} n = {}: {} failed, {} not converged",
                c.estimator,
                c.arm.name(),
                c.spec,
                c.n,
                c.failures,
                c.nonconverged
            );
        }
    }
    Ok(())
}

/// Estimation settings; every field may come from `--config` and be
/// overridden by a flag.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub input: Option<PathBuf>,
    pub roles: Option<Roles>,
    pub intervention: String,
    pub deltas: Vec<f64>,
    pub estimator: String,
    pub folds: usize,
    pub seed: u64,
    pub stabilize: bool,
    pub alpha: f64,
    pub learners: LearnerConfig,
    pub tmle_tol: Option<f64>,
    pub tmle_max_iter: usize,
    pub write_eif: bool,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            input: None,
            roles: None,
            intervention: "odds_tilt".into(),
            deltas: vec![],
            estimator: "both".into(),
            folds: 5,
            seed: 1,
            stabilize: false,
            alpha: 0.05,
            learners: LearnerConfig::default(),
            tmle_tol: None,
            tmle_max_iter: 100,
            write_eif: false,
        }
    }
}

/// Roles `A, L, Z, Y` by name, every other column a covariate.
fn default_roles(path: &Path) -> Result<Roles> {
    let f = File::open(path).map_err(|e| Error::Input(format!("cannot open {}: {e}", path.display())))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(f);
    let header = rdr.headers().map_err(Error::from)?.clone();
    let fixed = ["A", "L", "Z", "Y"];
    Ok(Roles {
        w: header.iter().filter(|h| !fixed.contains(h)).map(str::to_string).collect(),
        a: "A".into(),
        l: "L".into(),
        z: "Z".into(),
        y: "Y".into(),
    })
}

fn estimate_row(e: &EffectEstimate) -> Vec<String> {
    let tm = e.diagnostics.tmle.as_ref();
    vec![
        e.estimator.to_string(),
        e.spec.to_string(),
        e.spec.delta().to_string(),
        e.n.to_string(),
        e.psi_d.to_string(),
        e.se_d.to_string(),
        e.ci_d.0.to_string(),
        e.ci_d.1.to_string(),
        e.psi_i.to_string(),
        e.se_i.to_string(),
        e.ci_i.0.to_string(),
        e.ci_i.1.to_string(),
        tm.map_or_else(String::new, |t| t.converged.to_string()),
        tm.map_or_else(String::new, |t| t.iterations.to_string()),
    ]
}

pub fn estimate(args: &EstimateArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => read_json::<EstimateConfig>(p)?,
        None => EstimateConfig::default(),
    };
    if let Some(i) = &args.input {
        cfg.input = Some(i.clone());
    }
    if let Some(r) = &args.roles {
        cfg.roles = Some(read_json(r)?);
    }
    if let Some(k) = &args.intervention.intervention {
        cfg.intervention = k.clone();
    }
    if let Some(d) = resolve_deltas(&args.intervention)? {
        cfg.deltas = d;
    }
    if let Some(e) = args.estimator {
        cfg.estimator = match e {
            EstimatorChoice::Onestep => "onestep",
            EstimatorChoice::Tmle => "tmle",
            EstimatorChoice::Both => "both",
        }
        .into();
    }
    if let Some(f) = args.folds {
        cfg.folds = f;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.stabilize |= args.stabilize;
    cfg.write_eif |= args.write_eif;
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    if let Some(t) = args.tmle_tol {
        cfg.tmle_tol = Some(t);
    }
    if let Some(m) = args.tmle_max_iter {
        cfg.tmle_max_iter = m;
    }

    let input = cfg.input.clone().ok_or_else(|| Error::Input("no input CSV; pass --input".into()))?;
    let roles = match &cfg.roles {
        Some(r) => r.clone(),
        None => default_roles(&input)?,
    };
    cfg.roles = Some(roles.clone());
    let specs = specs(&cfg.intervention, &cfg.deltas)?;
    let which = estimators(parse_estimator(&cfg.estimator)?);
    if which.contains(&Estimator::Tmle) && specs.iter().any(|s| matches!(s, Intervention::DiscreteShift { .. })) {
        return Err(Error::Unsupported(
            "the targeted estimator does not handle discrete shifts; use --estimator onestep".into(),
        ));
    }
    if let Some(t) = cfg.tmle_tol {
        if !(t > 0.0) {
            return Err(Error::Input(format!("--tmle-tol must be positive, got {t}")));
        }
    }
    let f = File::open(&input).map_err(|e| Error::Input(format!("cannot open {}: {e}", input.display())))?;
    let data = Dataset::read_csv(BufReader::new(f), &roles)?;
    for s in &specs {
        s.validate(data.a_levels())?;
    }
    create_dir(&args.out_dir)?;
    let prov = Provenance::new("estimate", &cfg, Some(cfg.seed))?;

    let folds = make_folds(data.n(), cfg.folds, cfg.seed)?;
    let eta = fit_nuisances(&data, &folds, &cfg.learners)?;
    let opts = TmleOptions {
        tol: cfg.tmle_tol.map_or(TolRule::Auto, TolRule::Fixed),
        max_iter: cfg.tmle_max_iter,
        alpha: cfg.alpha,
        clamp: cfg.learners.clamp,
    };
    let mut results = vec![];
    for &spec in &specs {
        for &est in &which {
            let e = match est {
                Estimator::OneStep => onestep(&data, &eta, &folds, spec, cfg.stabilize, cfg.alpha)?,
                Estimator::Tmle => tmle(&data, &eta, &folds, spec, &opts)?,
            };
            if let Some(t) = e.diagnostics.tmle.as_ref().filter(|t| !t.converged) {
                warn!("{spec}: targeting stopped after {} iterations with score norms {:?}", t.iterations, t.score_norms);
                eprintln!("warning: tmle did not converge for {spec} (score norms {:?})", t.score_norms);
            }
            results.push(e);
        }
    }

    let (path, mut w) = writer(&args.out_dir, "estimates.csv")?;
    for line in prov.lines() {
        writeln!(w, "# {line}")?;
    }
    {
        let mut wtr = csv::Writer::from_writer(&mut w);
        wtr.write_record([
            "estimator", "intervention", "delta", "n", "psi_d", "se_d", "ci_d_lo", "ci_d_hi", "psi_i", "se_i", "ci_i_lo",
            "ci_i_hi", "converged", "iterations",
        ])?;
        for e in &results {
            wtr.write_record(estimate_row(e))?;
        }
        wtr.flush()?;
    }
    w.flush()?;
    done(&path);
    done(&write_json(&args.out_dir, "estimates.json", &prov, "estimates", &results)?);
    if cfg.write_eif {
        for (k, e) in results.iter().enumerate() {
            let (path, mut w) = writer(&args.out_dir, &format!("eif_{k}_{}.csv", e.estimator))?;
            let mut lines = prov.lines();
            lines.push(format!("{} {} (scaled outcome)", e.estimator, e.spec));
            e.eif.write_csv(&mut w, &lines)?;
            w.flush()?;
            done(&path);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct OracleConfig<'a> {
    law: &'a LawSource,
    clamp: Clamp,
    specs: &'a [Intervention],
    robustness: Option<&'a str>,
    tol: f64,
}

#[derive(Debug, Clone, Serialize)]
struct Truth {
    spec: Intervention,
    delta: f64,
    theta1_null: f64,
    theta1_delta: f64,
    theta2_delta: f64,
    psi_d: f64,
    psi_i: f64,
    var_d: f64,
    var_i: f64,
}

#[derive(Debug, Clone, Serialize)]
struct RobustnessRow {
    #[serde(flatten)]
    check: RobustnessCheck,
    pass: bool,
}

pub fn oracle(args: &OracleArgs) -> Result<()> {
    let law_src = law_source(&args.law);
    let clamp = clamp_of(args.clamp)?;
    let kind = args.intervention.intervention.as_deref().unwrap_or("odds_tilt");
    let deltas = resolve_deltas(&args.intervention)?.unwrap_or_default();
    let specs = specs(kind, &deltas)?;
    let law = law_src.load(clamp)?;
    create_dir(&args.out_dir)?;
    let prov = Provenance::new(
        "oracle",
        &OracleConfig { law: &law_src, clamp, specs: &specs, robustness: args.robustness.as_deref(), tol: args.tol },
        None,
    )?;

    let mut truths = vec![];
    for &spec in &specs {
        let e = oracle_effects(&law, spec)?;
        let (var_d, var_i) = oracle_efficiency_bounds(&law, spec)?;
        println!("{spec}: psi_d = {} psi_i = {} var_d = {var_d} var_i = {var_i}", e.psi_d, e.psi_i);
        truths.push(Truth {
            spec,
            delta: spec.delta(),
            theta1_null: e.theta1_null,
            theta1_delta: e.theta1_delta,
            theta2_delta: e.theta2_delta,
            psi_d: e.psi_d,
            psi_i: e.psi_i,
            var_d,
            var_i,
        });
    }
    done(&write_json(&args.out_dir, "oracle.json", &prov, "truth", &truths)?);

    if let Some(sel) = &args.robustness {
        let row: Option<usize> = match sel.as_str() {
            "all" => None,
            s => Some(
                s.parse()
                    .ok()
                    .filter(|r| (1..=6).contains(r))
                    .ok_or_else(|| Error::Input(format!("robustness row must be 1-6 or `all`, got `{s}`")))?,
            ),
        };
        let mut rows = vec![];
        for &spec in &specs {
            let configs = configurations_for(spec);
            if let Some(r) = row {
                if !configs.iter().any(|c| c.index == r) {
                    return Err(Error::Unsupported(format!("configuration {r} applies to discrete shifts only, not {spec}")));
                }
            }
            for c in configs.iter().filter(|c| row.is_none_or(|r| r == c.index)) {
                let check = robustness_check(&law, spec, c)?;
                let pass = check.passes(args.tol);
                println!(
                    "{spec} configuration {}: {} (bias1 {:.3e}, bias2 {:.3e})",
                    c.index,
                    if pass { "pass" } else { "FAIL" },
                    check.bias1,
                    check.bias2
                );
                rows.push(RobustnessRow { check, pass });
            }
        }
        done(&write_json(&args.out_dir, "robustness.json", &prov, "checks", &rows)?);
    }
    Ok(())
}
