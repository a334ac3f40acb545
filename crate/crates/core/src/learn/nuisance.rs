use serde::Serialize;

/// All nuisance values at one covariate stratum `w`, stored as flat tables
/// over the treatment levels `a`, mediator levels `z` and `l ∈ {0, 1}`.
///
/// The primary tables (`m, g, e, b, d, r, h`) are fitted; `ubar, v, s, q` are
/// stored separately so they can come from either exact sums or regression.
/// `u`, `vbar`, `sbar`, `q1`, `q2` are always computed on the fly.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WBlock {
    pub na: usize,
    pub nz: usize,
    /// `g(a | w)`
    pub g: Vec<f64>,
    /// `e(a | z, w)` at `a * nz + z`
    pub e: Vec<f64>,
    /// `b(l | a, w)` at `a * 2 + l`
    pub b: Vec<f64>,
    /// `d(l | z, a, w)` at `(a * nz + z) * 2 + l`
    pub d: Vec<f64>,
    /// `r(z | a, w)` at `a * nz + z`
    pub r: Vec<f64>,
    /// `h(z | w)`
    pub h: Vec<f64>,
    /// `m(z, l, a, w)` at `(a * nz + z) * 2 + l`
    pub m: Vec<f64>,
    pub ubar: Vec<f64>,
    /// `v(l, a, w)` at `a * 2 + l`
    pub v: Vec<f64>,
    /// `s(l, a, w)` at `a * 2 + l`
    pub s: Vec<f64>,
    pub q: Vec<f64>,
}

impl WBlock {
    pub fn zeros(na: usize, nz: usize) -> WBlock {
        WBlock {
            na,
            nz,
            g: vec![0.0; na],
            e: vec![0.0; na * nz],
            b: vec![0.0; na * 2],
            d: vec![0.0; na * nz * 2],
            r: vec![0.0; na * nz],
            h: vec![0.0; nz],
            m: vec![0.0; na * nz * 2],
            ubar: vec![0.0; na],
            v: vec![0.0; na * 2],
            s: vec![0.0; na * 2],
            q: vec![0.0; na],
        }
    }

    #[inline]
    pub fn az(&self, a: usize, z: usize) -> usize {
        a * self.nz + z
    }

    #[inline]
    pub fn azl(&self, a: usize, z: usize, l: usize) -> usize {
        (a * self.nz + z) * 2 + l
    }

    #[inline]
    pub fn m(&self, z: usize, l: usize, a: usize) -> f64 {
        self.m[self.azl(a, z, l)]
    }

    #[inline]
    pub fn b(&self, l: usize, a: usize) -> f64 {
        self.b[a * 2 + l]
    }

    #[inline]
    pub fn d(&self, l: usize, z: usize, a: usize) -> f64 {
        self.d[self.azl(a, z, l)]
    }

    #[inline]
    pub fn e(&self, a: usize, z: usize) -> f64 {
        self.e[self.az(a, z)]
    }

    #[inline]
    pub fn r(&self, z: usize, a: usize) -> f64 {
        self.r[self.az(a, z)]
    }

    #[inline]
    pub fn v(&self, l: usize, a: usize) -> f64 {
        self.v[a * 2 + l]
    }

    #[inline]
    pub fn s(&self, l: usize, a: usize) -> f64 {
        self.s[a * 2 + l]
    }

    /// `u(z, a, w) = Σ_l m(z, l, a, w) b(l | a, w)`
    pub fn u(&self, z: usize, a: usize) -> f64 {
        self.m(z, 0, a) * self.b(0, a) + self.m(z, 1, a) * self.b(1, a)
    }

    /// `v̄(a, w) = Σ_l v(l, a, w) b(l | a, w)`
    pub fn vbar(&self, a: usize) -> f64 {
        self.v(0, a) * self.b(0, a) + self.v(1, a) * self.b(1, a)
    }

    /// `s̄(a, w) = Σ_l s(l, a, w) b(l | a, w)`
    pub fn sbar(&self, a: usize) -> f64 {
        self.s(0, a) * self.b(0, a) + self.s(1, a) * self.b(1, a)
    }

    /// `ū(1, w) − ū(0, w)` for binary treatment.
    pub fn q1(&self) -> f64 {
        self.ubar[1] - self.ubar[0]
    }

    /// `q(1, w) − q(0, w)` for binary treatment.
    pub fn q2(&self) -> f64 {
        self.q[1] - self.q[0]
    }

    /// Recomputes `ū, v, s, q` as exact sums against `r`, `h` and `b`.
    pub fn derive_exact(&mut self) {
        for a in 0..self.na {
            let mut ubar = 0.0;
            let mut q = 0.0;
            for z in 0..self.nz {
                let u = self.u(z, a);
                ubar += u * self.r(z, a);
                q += u * self.h[z];
            }
            self.ubar[a] = ubar;
            self.q[a] = q;
            for l in 0..2 {
                let mut v = 0.0;
                let mut s = 0.0;
                for z in 0..self.nz {
                    let m = self.m(z, l, a);
                    v += m * self.r(z, a);
                    s += m * self.h[z];
                }
                self.v[a * 2 + l] = v;
                self.s[a * 2 + l] = s;
            }
        }
    }
}

/// Which table of a [`WBlock`] to address; used to build misspecified sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Nuisance {
    M,
    G,
    B,
    Ubar,
    V,
    D,
    E,
    S,
    Q,
}

impl Nuisance {
    /// The nine nuisances of the ratio parameterization, in table order.
    pub const ALL: [Nuisance; 9] = [
        Nuisance::M,
        Nuisance::G,
        Nuisance::B,
        Nuisance::Ubar,
        Nuisance::V,
        Nuisance::D,
        Nuisance::E,
        Nuisance::S,
        Nuisance::Q,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Nuisance::M => "m",
            Nuisance::G => "g",
            Nuisance::B => "b",
            Nuisance::Ubar => "ubar",
            Nuisance::V => "v",
            Nuisance::D => "d",
            Nuisance::E => "e",
            Nuisance::S => "s",
            Nuisance::Q => "q",
        }
    }
}

/// Diagnostics gathered while fitting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClampCounts {
    /// Predicted probabilities moved into the clamp interval.
    pub probabilities: usize,
    /// Ratio denominators raised to the floor during evaluation.
    pub denominators: usize,
    /// True conditionals whose conditioning event had zero mass.
    pub degenerate: usize,
}

/// Per-fold nuisance tables: `blocks[fold][stratum]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NuisanceSet {
    pub blocks: Vec<Vec<WBlock>>,
    pub clamps: ClampCounts,
}

impl NuisanceSet {
    pub fn block(&self, fold: usize, w: usize) -> &WBlock {
        &self.blocks[fold][w]
    }

    pub fn folds(&self) -> usize {
        self.blocks.len()
    }

    pub fn derive_exact(&mut self) {
        for fold in &mut self.blocks {
            for b in fold {
                b.derive_exact();
            }
        }
    }

    /// Replicates a single-fold set indexed by law stratum onto a dataset's
    /// strata and fold count.
    pub fn for_strata(&self, law_strata: &[usize], folds: usize) -> NuisanceSet {
        let row: Vec<WBlock> = law_strata.iter().map(|&w| self.blocks[0][w].clone()).collect();
        NuisanceSet { blocks: vec![row; folds], clamps: self.clamps }
    }
}
