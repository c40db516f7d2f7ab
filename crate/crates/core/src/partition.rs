//! Minimal partitioning of a layer sequence under a per-subnetwork memory
//! budget.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Largest layer count accepted by [`brute_force_partition`].
pub const BRUTE_FORCE_MAX_LAYERS: usize = 20;

/// How the per-scope budget is given.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "mode", rename_all = "snake_case"))]
pub enum PartitionBudget {
    AbsoluteBytes { bytes: u64 },
    /// Fraction of the whole network's single-step footprint.
    Ratio { rho: f64 },
}

impl PartitionBudget {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PartitionBudget::AbsoluteBytes { bytes: 0 } => Err(Error::InvalidConfig(
                "budget must be positive".into(),
            )),
            PartitionBudget::Ratio { rho } if !(rho > 0.0 && rho <= 1.0) => Err(
                Error::InvalidConfig(alloc::format!("budget ratio {rho} not in (0, 1]")),
            ),
            _ => Ok(()),
        }
    }

    /// Bytes available to one scope given the sum of all layer footprints.
    pub fn resolve(&self, total_footprint: u64) -> u64 {
        match *self {
            PartitionBudget::AbsoluteBytes { bytes } => bytes,
            PartitionBudget::Ratio { rho } => libm::floor(rho * total_footprint as f64) as u64,
        }
    }
}

/// Closing layer indices `p_1 < ... < p_K = L` (1-based) with the footprint
/// of every subnetwork.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Partition {
    pub boundaries: Vec<usize>,
    pub footprints: Vec<u64>,
    pub budget: u64,
}

impl Partition {
    pub fn from_boundaries(boundaries: Vec<usize>, layer_fp: &[u64], budget: u64) -> Self {
        let mut footprints = Vec::with_capacity(boundaries.len());
        let mut lo = 0;
        for &hi in &boundaries {
            footprints.push(layer_fp[lo..hi].iter().sum());
            lo = hi;
        }
        Self {
            boundaries,
            footprints,
            budget,
        }
    }

    /// The trivial partition `{L}`.
    pub fn whole(layer_fp: &[u64]) -> Self {
        let total = layer_fp.iter().sum();
        Self::from_boundaries(alloc::vec![layer_fp.len()], layer_fp, total)
    }

    pub fn k(&self) -> usize {
        self.boundaries.len()
    }

    /// 0-based half-open layer range of scope `k` (1-based).
    pub fn scope(&self, k: usize) -> core::ops::Range<usize> {
        let lo = if k == 1 { 0 } else { self.boundaries[k - 2] };
        lo..self.boundaries[k - 1]
    }
}

fn check_feasible(footprints: &[u64], budget: u64) -> Result<()> {
    if let Some(i) = footprints.iter().position(|&f| f > budget) {
        return Err(Error::Infeasible {
            layer: i + 1,
            footprint: footprints[i],
            budget,
        });
    }
    Ok(())
}

/// Single left-to-right pass: a layer that would push the running sum above
/// the budget closes the current subnetwork before it.
pub fn greedy_partition(footprints: &[u64], budget: u64) -> Result<Partition> {
    greedy_counted(footprints, budget).map(|(p, _)| p)
}

fn greedy_counted(footprints: &[u64], budget: u64) -> Result<(Partition, usize)> {
    if footprints.is_empty() {
        return Err(Error::InvalidNetwork("no layers to partition".into()));
    }
    check_feasible(footprints, budget)?;
    let mut boundaries = Vec::new();
    let mut current = 0u64;
    let mut additions = 0;
    for (i, &f) in footprints.iter().enumerate() {
        current += f;
        additions += 1;
        if current > budget {
            boundaries.push(i);
            current = f;
        }
    }
    boundaries.push(footprints.len());
    Ok((
        Partition::from_boundaries(boundaries, footprints, budget),
        additions,
    ))
}

/// Exhaustive search over all `2^(L-1)` boundary sets; returns the feasible
/// set with the fewest subnetworks (the first in enumeration order).
pub fn brute_force_partition(footprints: &[u64], budget: u64) -> Result<Partition> {
    let n = footprints.len();
    if n > BRUTE_FORCE_MAX_LAYERS {
        return Err(Error::SizeGuard {
            len: n,
            max: BRUTE_FORCE_MAX_LAYERS,
        });
    }
    if n == 0 {
        return Err(Error::InvalidNetwork("no layers to partition".into()));
    }
    check_feasible(footprints, budget)?;
    let mut best: Option<(u32, u32)> = None;
    for mask in 0u32..(1 << (n - 1)) {
        let k = mask.count_ones() + 1;
        if best.is_some_and(|(bk, _)| k >= bk) {
            continue;
        }
        if boundaries_of(mask, n)
            .windows(2)
            .all(|w| footprints[w[0]..w[1]].iter().sum::<u64>() <= budget)
        {
            best = Some((k, mask));
        }
    }
    let (_, mask) = best.expect("one layer per subnetwork is always feasible");
    let mut b = boundaries_of(mask, n);
    b.remove(0);
    Ok(Partition::from_boundaries(b, footprints, budget))
}

/// `0` followed by the closing indices encoded in `mask` (bit `i` closes a
/// subnetwork after layer `i + 1`) and `n`.
fn boundaries_of(mask: u32, n: usize) -> Vec<usize> {
    let mut b = alloc::vec![0];
    b.extend((0..n - 1).filter(|i| mask >> i & 1 == 1).map(|i| i + 1));
    b.push(n);
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn worked_example() {
        let fp = [3, 1, 2, 2, 4];
        let g = greedy_partition(&fp, 4).unwrap();
        assert_eq!(g.boundaries, vec![2, 4, 5]);
        assert_eq!(g.footprints, vec![4, 4, 4]);
        assert_eq!(brute_force_partition(&fp, 4).unwrap().k(), 3);
    }

    #[test]
    fn everything_fits() {
        let g = greedy_partition(&[1, 2, 3], 6).unwrap();
        assert_eq!(g.boundaries, vec![3]);
    }

    #[test]
    fn oversized_layer_is_infeasible() {
        let e = greedy_partition(&[5, 1], 4).unwrap_err();
        assert!(matches!(e, Error::Infeasible { layer: 1, .. }));
        assert!(matches!(
            brute_force_partition(&[1, 5], 4),
            Err(Error::Infeasible { layer: 2, .. })
        ));
    }

    #[test]
    fn tight_budget_gives_one_layer_each() {
        let fp = [3; 6];
        assert_eq!(greedy_partition(&fp, 3).unwrap().k(), 6);
        assert_eq!(brute_force_partition(&fp, 3).unwrap().k(), 6);
    }

    #[test]
    fn size_guard() {
        let fp = [1; 21];
        assert!(matches!(
            brute_force_partition(&fp, 4),
            Err(Error::SizeGuard { len: 21, max: 20 })
        ));
    }

    #[test]
    fn one_pass() {
        let (_, adds) = greedy_counted(&[3, 1, 2, 2, 4, 1, 1], 4).unwrap();
        assert_eq!(adds, 7);
    }

    #[test]
    fn ratio_budget() {
        assert_eq!(PartitionBudget::Ratio { rho: 0.5 }.resolve(101), 50);
        assert!(PartitionBudget::Ratio { rho: 0.0 }.validate().is_err());
        assert!(PartitionBudget::Ratio { rho: 1.5 }.validate().is_err());
        assert!(PartitionBudget::AbsoluteBytes { bytes: 0 }.validate().is_err());
    }

    #[test]
    fn scope_ranges() {
        let p = greedy_partition(&[3, 1, 2, 2, 4], 4).unwrap();
        assert_eq!(p.scope(1), 0..2);
        assert_eq!(p.scope(3), 4..5);
    }
}
