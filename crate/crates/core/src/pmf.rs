//! Probability mass functions on consecutive non-negative integers.

use crate::error::{Error, Result};

const MASS_TOLERANCE: f64 = 1e-9;

/// A pmf given explicitly on `support_start..support_start + probs.len()`,
/// with the residual probability beyond the explicit support kept as
/// `tail_mass`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePmf {
    support_start: u64,
    probs: Vec<f64>,
    tail_mass: f64,
}

impl DiscretePmf {
    /// Builds a normalized pmf; entries plus tail mass must sum to one.
    pub fn new(support_start: u64, probs: Vec<f64>, tail_mass: f64) -> Result<Self> {
        let pmf = Self::unnormalized(support_start, probs, tail_mass)?;
        let total = pmf.total_mass();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::param(
                "probs",
                format!("entries plus tail mass sum to {total}, expected 1"),
            ));
        }
        Ok(pmf)
    }

    /// Builds a normalized pmf whose tail mass is whatever the explicit
    /// entries leave over.
    pub fn with_residual_tail(support_start: u64, probs: Vec<f64>) -> Result<Self> {
        let explicit: f64 = probs.iter().sum();
        if explicit > 1.0 + MASS_TOLERANCE {
            return Err(Error::param(
                "probs",
                format!("explicit entries sum to {explicit} > 1"),
            ));
        }
        Self::new(support_start, probs, (1.0 - explicit).max(0.0))
    }

    /// Non-negative weights that need not sum to one, e.g. a model
    /// prediction scaled by an externally supplied normalizer.
    pub fn unnormalized(support_start: u64, probs: Vec<f64>, tail_mass: f64) -> Result<Self> {
        if let Some((i, &bad)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::param(
                "probs",
                format!("entry {} is {bad}", support_start + i as u64),
            ));
        }
        if !tail_mass.is_finite() || tail_mass < 0.0 {
            return Err(Error::param(
                "tail_mass",
                format!("{tail_mass} is negative"),
            ));
        }
        Ok(Self {
            support_start,
            probs,
            tail_mass,
        })
    }

    pub fn point_mass(at: u64) -> Self {
        Self {
            support_start: at,
            probs: vec![1.0],
            tail_mass: 0.0,
        }
    }

    pub fn support_start(&self) -> u64 {
        self.support_start
    }

    /// One past the last explicit support point.
    pub fn support_end(&self) -> u64 {
        self.support_start + self.probs.len() as u64
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn explicit_mass(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.explicit_mass() + self.tail_mass
    }

    /// Probability at `j`; zero outside the explicit support.
    pub fn get(&self, j: u64) -> f64 {
        if j < self.support_start {
            return 0.0;
        }
        self.probs
            .get((j - self.support_start) as usize)
            .copied()
            .unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.probs
            .iter()
            .enumerate()
            .map(move |(i, &p)| (self.support_start + i as u64, p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residual_tail_completes_mass() {
        let pmf = DiscretePmf::with_residual_tail(1, vec![0.5, 0.25]).unwrap();
        assert_eq!(pmf.tail_mass(), 0.25);
        assert_eq!(pmf.get(0), 0.0);
        assert_eq!(pmf.get(2), 0.25);
        assert_eq!(pmf.get(3), 0.0);
        assert_eq!(pmf.support_end(), 3);
    }

    #[test]
    fn rejects_negative_and_overfull() {
        assert!(DiscretePmf::new(0, vec![1.2, -0.2], 0.0).is_err());
        assert!(DiscretePmf::new(0, vec![0.7, 0.7], 0.0).is_err());
        assert!(DiscretePmf::with_residual_tail(0, vec![0.7, 0.7]).is_err());
        assert!(DiscretePmf::new(0, vec![0.5], 0.4).is_err());
    }

    #[test]
    fn unnormalized_allows_any_total() {
        let w = DiscretePmf::unnormalized(1, vec![2.0, 3.0], 0.0).unwrap();
        assert_eq!(w.total_mass(), 5.0);
    }
}
