use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Scalar;

/// Split of `{0..d}` into a conditioning set `I₁` and a transformed set `I₂`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    dim: usize,
    i1: Vec<usize>,
    i2: Vec<usize>,
}

impl Partition {
    pub fn new(dim: usize, i1: Vec<usize>, i2: Vec<usize>) -> Result<Self> {
        if i1.is_empty() || i2.is_empty() {
            return Err(Error::InvalidConfig("partition index sets must be nonempty".into()));
        }
        let mut seen = vec![false; dim];
        for &i in i1.iter().chain(&i2) {
            if i >= dim || seen[i] {
                return Err(Error::InvalidConfig(format!("partition index {i} out of range or repeated (d = {dim})")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidConfig("partition does not cover every coordinate".into()));
        }
        Ok(Partition { dim, i1, i2 })
    }

    /// `I₁ = {0..⌊d/2⌋}`, `I₂` the rest.
    pub fn halves(dim: usize) -> Result<Self> {
        let h = dim / 2;
        Partition::new(dim, (0..h).collect(), (h..dim).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn i1(&self) -> &[usize] {
        &self.i1
    }

    pub fn i2(&self) -> &[usize] {
        &self.i2
    }

    pub fn split<T: Scalar>(&self, x: &[T]) -> (Vec<T>, Vec<T>) {
        (self.i1.iter().map(|&i| x[i]).collect(), self.i2.iter().map(|&i| x[i]).collect())
    }

    pub fn merge<T: Scalar>(&self, a: &[T], b: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim];
        for (&i, &v) in self.i1.iter().zip(a) {
            out[i] = v;
        }
        for (&i, &v) in self.i2.iter().zip(b) {
            out[i] = v;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(Partition::new(3, vec![0], vec![1, 2]).is_ok());
        assert!(Partition::new(3, vec![0], vec![0, 2]).is_err());
        assert!(Partition::new(3, vec![0], vec![2]).is_err());
        assert!(Partition::new(2, vec![], vec![0, 1]).is_err());
        assert!(Partition::halves(1).is_err());
    }

    #[test]
    fn split_merge_round_trip() {
        let p = Partition::new(4, vec![3, 0], vec![2, 1]).unwrap();
        let x = [1.0, 2.0, 3.0, 4.0];
        let (a, b) = p.split(&x);
        assert_eq!((a.clone(), b.clone()), (vec![4.0, 1.0], vec![3.0, 2.0]));
        assert_eq!(p.merge(&a, &b), x.to_vec());
    }
}
