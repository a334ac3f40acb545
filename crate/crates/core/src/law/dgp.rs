//! Simulation data-generating mechanisms encoded as exact laws.

use serde::{Deserialize, Serialize};

use super::{Covariate, DiscreteLaw, StateSpace};
use crate::error::{Error, Result};

/// Which way round the logistic function is oriented.
///
/// The simulation mechanism was published with `expit(x) = 1 / (1 + exp(x))`,
/// the reverse of the usual convention. `AsPrinted` reproduces that literally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpitOrientation {
    #[default]
    AsPrinted,
    Conventional,
}

impl ExpitOrientation {
    pub fn expit(self, x: f64) -> f64 {
        match self {
            ExpitOrientation::AsPrinted => 1.0 / (1.0 + x.exp()),
            ExpitOrientation::Conventional => 1.0 / (1.0 + (-x).exp()),
        }
    }
}

/// Bounds applied to every conditional Bernoulli probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clamp {
    pub lo: f64,
    pub hi: f64,
}

impl Default for Clamp {
    fn default() -> Self {
        Clamp { lo: 1e-3, hi: 1.0 - 1e-3 }
    }
}

impl Clamp {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && lo < 0.5 && hi > 0.5 && hi < 1.0) {
            return Err(Error::Input(format!("clamp ({lo}, {hi}) must satisfy 0 < lo < 0.5 < hi < 1")));
        }
        Ok(Clamp { lo, hi })
    }

    /// Symmetric clamp `[lo, 1 - lo]`.
    pub fn symmetric(lo: f64) -> Result<Self> {
        Self::new(lo, 1.0 - lo)
    }

    #[inline]
    pub fn apply(&self, p: f64) -> f64 {
        if p.is_nan() {
            return self.lo;
        }
        p.clamp(self.lo, self.hi)
    }
}

/// Bernoulli(p) with a fixed probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bernoulli {
    pub p: f64,
}

/// Coefficient records for the seven conditional mechanisms of the binary
/// simulation design:
///
/// ```text
/// W1 ~ Bern(w1.p)             W2 ~ Bern(w2.p)
/// W3 | W1,W2 ~ Bern(w3_intercept + w3_slope (W1 + W2))
/// A  | W     ~ Bern(expit(a_intercept + a_inv_sum / (W1 + W2 + W3)))
/// L  | A,W   ~ Bern(expit(l_sum S + l_a A + l_intercept))
/// Z  | L,A,W ~ Bern(expit(z_w12 (W1 + W2) + z_a A + z_l L))
/// Y  | Z,L,A,W ~ Bern(expit(y_intercept - y_scale (y_const + y_l L + y_a A + y_z Z) / (y_denom + S)))
/// ```
/// with `S = W1 + W2 + W3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub w1: Bernoulli,
    pub w2: Bernoulli,
    pub w3_intercept: f64,
    pub w3_slope: f64,
    pub a_intercept: f64,
    pub a_inv_sum: f64,
    pub l_sum: f64,
    pub l_a: f64,
    pub l_intercept: f64,
    pub z_w12: f64,
    pub z_a: f64,
    pub z_l: f64,
    pub y_intercept: f64,
    pub y_scale: f64,
    pub y_const: f64,
    pub y_l: f64,
    pub y_a: f64,
    pub y_z: f64,
    pub y_denom: f64,
    pub orientation: ExpitOrientation,
    pub clamp: Clamp,
}

impl Default for DgpSpec {
    fn default() -> Self {
        DgpSpec {
            w1: Bernoulli { p: 0.6 },
            w2: Bernoulli { p: 0.3 },
            w3_intercept: 0.2,
            w3_slope: 1.0 / 3.0,
            a_intercept: 2.0,
            a_inv_sum: 5.0,
            l_sum: 1.0 / 3.0,
            l_a: -1.0,
            l_intercept: 0.2 - std::f64::consts::LN_2,
            z_w12: 3f64.ln(),
            z_a: 1.0,
            z_l: -1.0,
            y_intercept: 1.0,
            y_scale: 3.0,
            y_const: 3.0,
            y_l: -1.0,
            y_a: -3.0,
            y_z: 1.0,
            y_denom: 2.0,
            orientation: ExpitOrientation::AsPrinted,
            clamp: Clamp::default(),
        }
    }
}

impl DgpSpec {
    fn expit(&self, x: f64) -> f64 {
        self.orientation.expit(x)
    }

    pub fn p_w3(&self, w1: f64, w2: f64) -> f64 {
        self.clamp.apply(self.w3_intercept + self.w3_slope * (w1 + w2))
    }

    /// `P(A = 1 | W)`. At `W1 + W2 + W3 = 0` the inverse-sum term is `+inf`.
    pub fn p_a(&self, w: [f64; 3]) -> f64 {
        let s = w[0] + w[1] + w[2];
        let x = if s == 0.0 {
            f64::INFINITY * self.a_inv_sum.signum()
        } else {
            self.a_intercept + self.a_inv_sum / s
        };
        self.clamp.apply(self.expit(x))
    }

    pub fn p_l(&self, w: [f64; 3], a: f64) -> f64 {
        let s = w[0] + w[1] + w[2];
        self.clamp.apply(self.expit(self.l_sum * s + self.l_a * a + self.l_intercept))
    }

    pub fn p_z(&self, w: [f64; 3], a: f64, l: f64) -> f64 {
        self.clamp.apply(self.expit(self.z_w12 * (w[0] + w[1]) + self.z_a * a + self.z_l * l))
    }

    pub fn p_y(&self, w: [f64; 3], a: f64, l: f64, z: f64) -> f64 {
        let s = w[0] + w[1] + w[2];
        let lin = self.y_const + self.y_l * l + self.y_a * a + self.y_z * z;
        self.clamp.apply(self.expit(self.y_intercept - self.y_scale * lin / (self.y_denom + s)))
    }

    /// Exact joint law over the 2^7 binary states.
    pub fn build(&self) -> DiscreteLaw {
        let bin = || vec![0.0, 1.0];
        let space = StateSpace::new(
            ["W1", "W2", "W3"]
                .iter()
                .map(|n| Covariate { name: n.to_string(), levels: bin() })
                .collect(),
            bin(),
            bin(),
        )
        .expect("binary space is valid");
        let bern = |p: f64, x: f64| if x == 1.0 { p } else { 1.0 - p };
        let clamp = self.clamp;
        law_from_factors(
            space,
            |w| {
                bern(clamp.apply(self.w1.p), w[0])
                    * bern(clamp.apply(self.w2.p), w[1])
                    * bern(self.p_w3(w[0], w[1]), w[2])
            },
            |w, a| bern(self.p_a([w[0], w[1], w[2]]), a),
            |w, a, l| bern(self.p_l([w[0], w[1], w[2]], a), l),
            |w, a, l, z| bern(self.p_z([w[0], w[1], w[2]], a, l), z),
            |w, a, l, z, y| bern(self.p_y([w[0], w[1], w[2]], a, l, z), y),
        )
        .expect("mechanism factors are normalized")
    }
}

/// The binary simulation design with the given probability clamp.
pub fn build_sim_dgp(clamp: Clamp) -> DiscreteLaw {
    DgpSpec { clamp, ..DgpSpec::default() }.build()
}

/// A variant of the simulation design with a four-level treatment
/// `A in {0, 1, 2, 3}`, used to exercise discrete shift policies.
pub fn build_shift_dgp(clamp: Clamp) -> DiscreteLaw {
    let base = DgpSpec { clamp, ..DgpSpec::default() };
    let bin = || vec![0.0, 1.0];
    let space = StateSpace::new(
        ["W1", "W2", "W3"]
            .iter()
            .map(|n| Covariate { name: n.to_string(), levels: bin() })
            .collect(),
        vec![0.0, 1.0, 2.0, 3.0],
        bin(),
    )
    .expect("valid space");
    let expit = |x: f64| clamp.apply(1.0 / (1.0 + (-x).exp()));
    let bern = |p: f64, x: f64| if x == 1.0 { p } else { 1.0 - p };
    law_from_factors(
        space,
        |w| {
            bern(clamp.apply(base.w1.p), w[0])
                * bern(clamp.apply(base.w2.p), w[1])
                * bern(base.p_w3(w[0], w[1]), w[2])
        },
        |w, a| {
            let s = w[0] + w[1] + w[2];
            let score = |k: f64| (k * (0.4 * s - 0.5)).exp();
            score(a) / (0..4).map(|k| score(k as f64)).sum::<f64>()
        },
        |w, a, l| bern(expit(0.3 * (w[0] + w[1] + w[2]) - 0.4 * a + 0.2), l),
        |w, a, l, z| bern(expit(0.5 * (w[0] + w[1]) + 0.3 * a - l - 0.2), z),
        |w, a, l, z, y| {
            let s = w[0] + w[1] + w[2];
            bern(expit(-1.0 + 0.35 * a + 0.8 * z - 0.6 * l + 0.25 * s), y)
        },
    )
    .expect("mechanism factors are normalized")
}

/// Builds a law from sequential conditional factors evaluated at level values:
/// `p(w) g(a|w) p(l|a,w) p(z|l,a,w) p(y|z,l,a,w)`.
pub fn law_from_factors<PW, PA, PL, PZ, PY>(
    space: StateSpace,
    pw: PW,
    pa: PA,
    pl: PL,
    pz: PZ,
    py: PY,
) -> Result<DiscreteLaw>
where
    PW: Fn(&[f64]) -> f64,
    PA: Fn(&[f64], f64) -> f64,
    PL: Fn(&[f64], f64, f64) -> f64,
    PZ: Fn(&[f64], f64, f64, f64) -> f64,
    PY: Fn(&[f64], f64, f64, f64, f64) -> f64,
{
    let mut pmf = vec![0.0; space.n_states()];
    for wi in 0..space.n_w() {
        let w = space.w_values(wi);
        let p_w = pw(&w);
        for (ai, &a) in space.a_levels.iter().enumerate() {
            let p_a = pa(&w, a);
            for l in 0..2 {
                let p_l = pl(&w, a, l as f64);
                for (zi, &z) in space.z_levels.iter().enumerate() {
                    let p_z = pz(&w, a, l as f64, z);
                    for y in 0..2 {
                        let p_y = py(&w, a, l as f64, z, y as f64);
                        pmf[space.state_index(wi, ai, l, zi, y)] = p_w * p_a * p_l * p_z * p_y;
                    }
                }
            }
        }
    }
    DiscreteLaw::new(space, pmf)
}
