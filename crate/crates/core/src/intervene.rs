//! Stochastic interventions on the treatment and their post-intervention
//! densities `g_delta(a | w)`.
//!
//! All treatments live on a finite ordered level set, so every integral
//! against the dominating measure on `A` is a finite sum.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Support threshold used to locate the lowest treatment level with mass.
pub const SUPPORT_EPS: f64 = 1e-12;

/// A user-chosen stochastic intervention.
///
/// `Identity`, `OddsTilt { delta: 1.0 }` and `ExpTilt { delta: 0.0 }` all
/// leave the treatment mechanism unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Intervention {
    Identity,
    /// Multiply the odds of `A = 1` by `delta` (binary `A` only).
    OddsTilt { delta: f64 },
    /// Exponential tilt `g_delta(a|w) ∝ exp(delta * a) g(a|w)`.
    ExpTilt { delta: f64 },
    /// Shift down by `delta` support steps, except within `delta` steps of
    /// the lowest supported level.
    DiscreteShift { delta: usize },
}

impl fmt::Display for Intervention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Intervention::Identity => write!(f, "identity"),
            Intervention::OddsTilt { delta } => write!(f, "odds_tilt({delta})"),
            Intervention::ExpTilt { delta } => write!(f, "exp_tilt({delta})"),
            Intervention::DiscreteShift { delta } => write!(f, "discrete_shift({delta})"),
        }
    }
}

impl Intervention {
    /// Parses a kind name plus parameter, as used on the command line.
    pub fn from_kind(kind: &str, delta: f64) -> Result<Self> {
        let spec = match kind {
            "identity" => Intervention::Identity,
            "odds_tilt" | "ipsi" => Intervention::OddsTilt { delta },
            "exp_tilt" => Intervention::ExpTilt { delta },
            "discrete_shift" | "shift" | "mtp" => {
                if delta < 0.0 || delta.fract() != 0.0 {
                    return Err(Error::Input(format!("discrete shift needs a whole number of steps, got {delta}")));
                }
                Intervention::DiscreteShift { delta: delta as usize }
            }
            other => {
                return Err(Error::Input(format!(
                    "unknown intervention `{other}` (expected identity, odds_tilt, exp_tilt, discrete_shift)"
                )))
            }
        };
        Ok(spec)
    }

    /// The parameter value as a real number (0 or 1 for the identity forms).
    pub fn delta(&self) -> f64 {
        match *self {
            Intervention::Identity => 0.0,
            Intervention::OddsTilt { delta } | Intervention::ExpTilt { delta } => delta,
            Intervention::DiscreteShift { delta } => delta as f64,
        }
    }

    pub fn is_identity(&self) -> bool {
        match *self {
            Intervention::Identity => true,
            Intervention::OddsTilt { delta } => delta == 1.0,
            Intervention::ExpTilt { delta } => delta == 0.0,
            Intervention::DiscreteShift { delta } => delta == 0,
        }
    }

    /// The same family at its identity value.
    pub fn null(&self) -> Intervention {
        match self {
            Intervention::Identity => Intervention::Identity,
            Intervention::OddsTilt { .. } => Intervention::OddsTilt { delta: 1.0 },
            Intervention::ExpTilt { .. } => Intervention::ExpTilt { delta: 0.0 },
            Intervention::DiscreteShift { .. } => Intervention::DiscreteShift { delta: 0 },
        }
    }

    pub fn validate(&self, a_levels: &[f64]) -> Result<()> {
        match *self {
            Intervention::Identity => Ok(()),
            Intervention::OddsTilt { delta } => {
                if !(delta.is_finite() && delta > 0.0) {
                    return Err(Error::Input(format!("odds tilt needs delta > 0, got {delta}")));
                }
                if a_levels.len() != 2 {
                    return Err(Error::Unsupported(format!(
                        "odds tilt needs a binary treatment, got {} levels",
                        a_levels.len()
                    )));
                }
                Ok(())
            }
            Intervention::ExpTilt { delta } => {
                if !delta.is_finite() {
                    return Err(Error::Input(format!("exponential tilt needs a finite delta, got {delta}")));
                }
                Ok(())
            }
            Intervention::DiscreteShift { delta } => {
                if delta >= a_levels.len() {
                    return Err(Error::Input(format!(
                        "shift of {delta} steps needs more than {delta} treatment levels, got {}",
                        a_levels.len()
                    )));
                }
                Ok(())
            }
        }
    }

    /// Post-intervention density `g_delta(. | w)` from `g(. | w)`.
    pub fn post_density(&self, g: &[f64], a_levels: &[f64]) -> Result<Vec<f64>> {
        debug_assert_eq!(g.len(), a_levels.len());
        self.validate(a_levels)?;
        match *self {
            Intervention::Identity => Ok(g.to_vec()),
            Intervention::OddsTilt { delta } => {
                let g1 = g[1];
                let den = delta * g1 + 1.0 - g1;
                if !(den > 0.0) {
                    return Err(positivity(a_levels[1], "odds-tilt normalizer is zero"));
                }
                let p1 = delta * g1 / den;
                Ok(vec![1.0 - p1, p1])
            }
            Intervention::ExpTilt { delta } => {
                let mut weights: Vec<f64> = a_levels.iter().zip(g).map(|(&a, &p)| (delta * a).exp() * p).collect();
                if weights.iter().any(|w| !w.is_finite()) {
                    // rescale by the largest supported exponent
                    let top = a_levels
                        .iter()
                        .zip(g)
                        .filter(|(_, &p)| p > 0.0)
                        .map(|(&a, _)| delta * a)
                        .fold(f64::NEG_INFINITY, f64::max);
                    weights = a_levels.iter().zip(g).map(|(&a, &p)| (delta * a - top).exp() * p).collect();
                }
                let total: f64 = weights.iter().sum();
                if !(total > 0.0) {
                    return Err(positivity(a_levels[0], "exponential-tilt normalizer is zero"));
                }
                Ok(weights.into_iter().map(|w| w / total).collect())
            }
            Intervention::DiscreteShift { delta } => {
                let lower = lower_support(g)
                    .ok_or_else(|| positivity(a_levels[0], "treatment density has no support"))?;
                let mut out = vec![0.0; g.len()];
                for (a, &p) in g.iter().enumerate() {
                    out[mtp_map(delta, a, lower)] += p;
                }
                for (a, (&pd, &p)) in out.iter().zip(g).enumerate() {
                    if pd > SUPPORT_EPS && p <= SUPPORT_EPS {
                        return Err(positivity(a_levels[a], "shifted mass lands outside the support of g"));
                    }
                }
                Ok(out)
            }
        }
    }
}

fn positivity(a: f64, detail: &str) -> Error {
    Error::Positivity { a: a.to_string(), w: "?".into(), detail: detail.into() }
}

/// Index of the lowest level with `g > SUPPORT_EPS`.
pub fn lower_support(g: &[f64]) -> Option<usize> {
    g.iter().position(|&p| p > SUPPORT_EPS)
}

/// The discrete modified treatment policy on level indices: shift down by
/// `steps` unless the level is within `steps` of the lower support bound.
#[inline]
pub fn mtp_map(steps: usize, a: usize, lower: usize) -> usize {
    if a > lower + steps {
        a - steps
    } else {
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const BIN: [f64; 2] = [0.0, 1.0];

    #[test]
    fn odds_tilt_identity_and_hand_value() {
        let g = [0.3, 0.7];
        let out = Intervention::OddsTilt { delta: 1.0 }.post_density(&g, &BIN).unwrap();
        assert!((out[1] - 0.7).abs() < 1e-15);
        // 2 * 0.5 / (2 * 0.5 + 0.5) = 2/3
        let out = Intervention::OddsTilt { delta: 2.0 }.post_density(&[0.5, 0.5], &BIN).unwrap();
        assert!((out[1] - 2.0 / 3.0).abs() < 1e-15);
        let out = Intervention::OddsTilt { delta: 5.0 }.post_density(&[1.0, 0.0], &BIN).unwrap();
        assert_eq!(out[1], 0.0);
    }

    #[test]
    fn odds_tilt_rejects_non_binary() {
        let g = [0.2, 0.3, 0.5];
        assert!(matches!(
            Intervention::OddsTilt { delta: 2.0 }.post_density(&g, &[0.0, 1.0, 2.0]),
            Err(Error::Unsupported(_))
        ));
        assert!(Intervention::OddsTilt { delta: -1.0 }.validate(&BIN).is_err());
    }

    #[test]
    fn mtp_map_boundary() {
        // levels {0,1,2,3}, one step, lower bound 0
        assert_eq!(mtp_map(1, 2, 0), 1);
        assert_eq!(mtp_map(1, 3, 0), 2);
        assert_eq!(mtp_map(1, 0, 0), 0);
        assert_eq!(mtp_map(1, 1, 0), 1);
        for a in 0..4 {
            assert_eq!(mtp_map(0, a, 0), a);
        }
    }

    #[test]
    fn shift_pushforward_and_lower_bound() {
        let levels = [0.0, 1.0, 2.0, 3.0];
        let g = [0.1, 0.2, 0.3, 0.4];
        let out = Intervention::DiscreteShift { delta: 1 }.post_density(&g, &levels).unwrap();
        assert_eq!(out, vec![0.1, 0.2 + 0.3, 0.4, 0.0]);
        // lowest supported level is 1: levels 1 and 2 stay put
        let g = [0.0, 0.5, 0.25, 0.25];
        let out = Intervention::DiscreteShift { delta: 1 }.post_density(&g, &levels).unwrap();
        assert_eq!(out, vec![0.0, 0.5, 0.25 + 0.25, 0.0]);
    }

    #[test]
    fn shift_into_hole_is_positivity_error() {
        let levels = [0.0, 1.0, 2.0, 3.0];
        let g = [0.5, 0.0, 0.0, 0.5];
        let err = Intervention::DiscreteShift { delta: 1 }.post_density(&g, &levels);
        assert!(matches!(err, Err(Error::Positivity { .. })));
    }

    #[test]
    fn shift_too_large_rejected() {
        assert!(Intervention::DiscreteShift { delta: 2 }.validate(&BIN).is_err());
    }

    #[test]
    fn json_encoding() {
        let spec: Intervention = serde_json::from_str(r#"{"kind": "odds_tilt", "delta": 2.0}"#).unwrap();
        assert_eq!(spec, Intervention::OddsTilt { delta: 2.0 });
        let spec: Intervention = serde_json::from_str(r#"{"kind": "discrete_shift", "delta": 1}"#).unwrap();
        assert_eq!(spec, Intervention::DiscreteShift { delta: 1 });
        let spec: Intervention = serde_json::from_str(r#"{"kind": "identity"}"#).unwrap();
        assert!(spec.is_identity());
        assert_eq!(serde_json::to_string(&Intervention::ExpTilt { delta: -1.0 }).unwrap(), r#"{"kind":"exp_tilt","delta":-1.0}"#);
    }

    fn pmf(k: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, k).prop_filter_map("positive mass", |v| {
            let t: f64 = v.iter().sum();
            (t > 1e-6).then(|| v.iter().map(|x| x / t).collect())
        })
    }

    proptest! {
        #[test]
        fn post_density_is_a_pmf_with_common_support(g in pmf(4), delta in -3.0f64..3.0, steps in 0usize..4) {
            let levels = [0.0, 1.0, 2.0, 3.0];
            for spec in [Intervention::ExpTilt { delta }, Intervention::DiscreteShift { delta: steps }, Intervention::Identity] {
                let out = spec.post_density(&g, &levels);
                let out = match out {
                    Ok(o) => o,
                    // holes in the support of g can make a shift infeasible
                    Err(Error::Positivity { .. }) => continue,
                    Err(e) => panic!("{e}"),
                };
                prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for (pd, p) in out.iter().zip(&g) {
                    prop_assert!(*pd >= 0.0);
                    if *pd > SUPPORT_EPS {
                        prop_assert!(*p > SUPPORT_EPS);
                    }
                }
            }
        }

        #[test]
        fn exp_tilt_matches_odds_tilt_on_binary(g1 in 0.0f64..1.0, delta in -4.0f64..4.0) {
            let g = [1.0 - g1, g1];
            let a = Intervention::ExpTilt { delta }.post_density(&g, &BIN).unwrap();
            let b = Intervention::OddsTilt { delta: delta.exp() }.post_density(&g, &BIN).unwrap();
            prop_assert!((a[1] - b[1]).abs() < 1e-14);
            prop_assert!((a[0] - b[0]).abs() < 1e-14);
        }
    }
}
