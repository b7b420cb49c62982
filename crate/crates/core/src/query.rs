use serde::{Deserialize, Serialize};

use crate::error::{Result, TseError};

/// Multi-hot class selection over the vocabulary, optionally tagged with the
/// `(n_active, n_inactive)` condition it was drawn under.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    bits: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<(usize, usize)>,
}

impl Query {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits, condition: None }
    }

    pub fn zeros(classes: usize) -> Self {
        Self::new(vec![false; classes])
    }

    pub fn from_indices(classes: usize, indices: &[usize]) -> Result<Self> {
        let mut bits = vec![false; classes];
        for &i in indices {
            if i >= classes {
                return Err(TseError::UnknownClass { index: i, classes });
            }
            bits[i] = true;
        }
        Ok(Self::new(bits))
    }

    pub fn with_condition(mut self, n_active: usize, n_inactive: usize) -> Self {
        self.condition = Some((n_active, n_inactive));
        self
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn classes(&self) -> usize {
        self.bits.len()
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.popcount() == 0
    }

    pub fn indices(&self) -> Vec<usize> {
        self.bits.iter().enumerate().filter_map(|(i, &b)| b.then_some(i)).collect()
    }

    /// True when every selected class is also selected in `other`.
    pub fn is_subset_of(&self, other: &[bool]) -> bool {
        self.bits.len() == other.len() && self.bits.iter().zip(other).all(|(&a, &b)| !a || b)
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// Deterministic seed derivation (SplitMix64 finaliser folded over the parts).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indices_round_trip() {
        let q = Query::from_indices(8, &[1, 5, 7]).unwrap();
        assert_eq!(q.indices(), vec![1, 5, 7]);
        assert_eq!(q.popcount(), 3);
        assert!(Query::from_indices(3, &[3]).is_err());
    }

    #[test]
    fn derived_seeds_differ_by_part() {
        assert_ne!(derive_seed(1, &[2, 3]), derive_seed(1, &[3, 2]));
        assert_eq!(derive_seed(9, &[4]), derive_seed(9, &[4]));
    }
}
