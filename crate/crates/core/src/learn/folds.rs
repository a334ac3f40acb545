use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Random balanced partition of the row indices into `J` validation folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    assignment: Vec<usize>,
    k: usize,
}

impl FoldPlan {
    /// A single fold whose training and validation sets are both all rows.
    /// Used when nuisances are known rather than fitted.
    pub fn single(n: usize) -> FoldPlan {
        FoldPlan { assignment: vec![0; n], k: 1 }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    pub fn fold_of(&self, i: usize) -> usize {
        self.assignment[i]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn validation(&self, j: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignment[i] == j).collect()
    }

    /// Training rows for fold `j`; all rows for a single-fold plan.
    pub fn training(&self, j: usize) -> Vec<usize> {
        if self.k == 1 {
            return (0..self.n()).collect();
        }
        (0..self.n()).filter(|&i| self.assignment[i] != j).collect()
    }
}

pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 || k > n {
        return Err(Error::Input(format!("fold count must satisfy 2 <= J <= n, got J = {k}, n = {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % k;
    }
    Ok(FoldPlan { assignment, k })
}
