//! Ascending ranks with deterministic tie-breaking.

use crate::error::{Error, Result};
use crate::panel::RankVector;

/// Ranks `values` ascending: the smallest value gets rank 1 and the largest
/// rank `n`, so under the 10-is-best convention the highest value is best.
///
/// Ties break by ascending position index — the earlier element receives the
/// lower rank — which keeps rankings reproducible regardless of input noise.
pub fn rank_positions(values: &[f64]) -> Result<Vec<u32>> {
    if values.is_empty() {
        return Err(Error::InvalidData("cannot rank an empty slice".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("cannot rank non-finite values".into()));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    // Stable sort on value keeps equal values in original index order.
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0u32; values.len()];
    for (pos, &idx) in order.iter().enumerate() {
        ranks[idx] = pos as u32 + 1;
    }
    Ok(ranks)
}

/// Ranks one week's returns for a contest cross-section, keyed by stock id.
pub fn return_ranks(stock_ids: &[String], values: &[f64]) -> Result<RankVector> {
    if stock_ids.len() != values.len() {
        return Err(Error::InvalidData(format!(
            "return_ranks: {} stock ids but {} values",
            stock_ids.len(),
            values.len()
        )));
    }
    RankVector::new(stock_ids.to_vec(), rank_positions(values)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ranks_ascend_with_values() {
        // Distinct values: rank order mirrors value order.
        let ranks = rank_positions(&[0.05, 0.01, -0.02]).unwrap();
        assert_eq!(ranks, vec![3, 2, 1]);
    }

    #[test]
    fn ties_break_by_position() {
        let ranks = rank_positions(&[0.01, 0.01]).unwrap();
        assert_eq!(ranks, vec![1, 2], "earlier element takes the lower rank");
        let ranks = rank_positions(&[0.03, 0.01, 0.03, 0.01]).unwrap();
        assert_eq!(ranks, vec![3, 1, 4, 2]);
    }

    #[test]
    fn empty_and_non_finite_inputs_fail() {
        assert!(rank_positions(&[]).is_err());
        assert!(rank_positions(&[0.1, f64::NAN]).is_err());
    }

    #[test]
    fn return_ranks_builds_validated_vector() {
        let ids: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let rv = return_ranks(&ids, &[0.02, -0.01, 0.04]).unwrap();
        assert_eq!(rv.rank_of("c"), Some(3), "highest return gets top rank");
        assert_eq!(rv.rank_of("b"), Some(1));
    }

    proptest! {
        #[test]
        fn ranks_are_always_a_permutation(values in proptest::collection::vec(-1.0f64..1.0, 1..40)) {
            let ranks = rank_positions(&values).unwrap();
            let mut sorted = ranks.clone();
            sorted.sort_unstable();
            let expected: Vec<u32> = (1..=values.len() as u32).collect();
            prop_assert_eq!(sorted, expected);
        }

        #[test]
        fn ranks_respect_strict_order(values in proptest::collection::vec(-1.0f64..1.0, 2..20)) {
            let ranks = rank_positions(&values).unwrap();
            for i in 0..values.len() {
                for j in 0..values.len() {
                    if values[i] < values[j] {
                        prop_assert!(ranks[i] < ranks[j]);
                    }
                }
            }
        }
    }
}
