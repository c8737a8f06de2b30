use std::cmp::Ordering;

use super::Element;
use crate::error::{Error, Result};

/// Indices of the `k` largest entries of `v` (of `|v|` when `by_abs`).
///
/// Ties go to the lower index. The result is sorted ascending.
pub fn topk_indices<T: Element>(v: &[T], k: usize, by_abs: bool) -> Result<Vec<usize>> {
    let n = v.len();
    if k == 0 || k > n {
        return Err(Error::Argument(format!("top-k needs 1 <= k <= n, got k={k}, n={n}")));
    }
    if k == n {
        return Ok((0..n).collect());
    }
    let key = |x: T| if by_abs { x.abs() } else { x };
    // k-th largest key, then one ascending pass: everything above it plus
    // the lowest-indexed ties.
    let mut scratch: Vec<T> = v.iter().map(|&x| key(x)).collect();
    let desc = |a: &T, b: &T| b.partial_cmp(a).unwrap_or(Ordering::Equal);
    let threshold = *scratch.select_nth_unstable_by(k - 1, desc).1;
    let mut ties = k - v.iter().filter(|&&x| key(x) > threshold).count();
    let mut idx = Vec::with_capacity(k);
    for (i, x) in v.iter().map(|&x| key(x)).enumerate() {
        if x > threshold {
            idx.push(i);
        } else if x == threshold && ties > 0 {
            idx.push(i);
            ties -= 1;
        }
    }
    if idx.len() == k {
        return Ok(idx);
    }
    // Unordered keys (NaN): fall back to a full ranking.
    let rank = |a: &usize, b: &usize| desc(&key(v[*a]), &key(v[*b])).then(a.cmp(b));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(rank);
    idx.truncate(k);
    idx.sort_unstable();
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn sort_oracle(v: &[f64], k: usize, by_abs: bool) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        let key = |i: usize| if by_abs { v[i].abs() } else { v[i] };
        idx.sort_by(|a, b| key(*b).partial_cmp(&key(*a)).unwrap().then(a.cmp(b)));
        let mut top = idx[..k].to_vec();
        top.sort();
        top
    }

    #[test]
    fn signed_and_magnitude_selection() {
        let v = [0.1, -0.5, 0.3, 0.2];
        assert_eq!(topk_indices(&v, 2, false).unwrap(), vec![2, 3]);
        assert_eq!(topk_indices(&v, 2, true).unwrap(), vec![1, 2]);
    }

    #[test]
    fn ties_prefer_lower_index() {
        assert_eq!(topk_indices(&[1.0, 1.0, 1.0, 1.0], 2, false).unwrap(), vec![0, 1]);
        assert_eq!(topk_indices(&[0.0, -2.0, 2.0, 1.0], 1, true).unwrap(), vec![1]);
    }

    #[test]
    fn k_out_of_range() {
        assert!(matches!(topk_indices(&[1.0f64, 2.0], 3, false), Err(Error::Argument(_))));
        assert!(topk_indices(&[1.0f64], 0, false).is_err());
    }

    #[test]
    fn random_vector_matches_full_sort() {
        let mut rng = Rng::new(11);
        let v: Vec<f64> = (0..64).map(|_| rng.normal()).collect();
        for by_abs in [false, true] {
            assert_eq!(topk_indices(&v, 8, by_abs).unwrap(), sort_oracle(&v, 8, by_abs));
        }
    }

    proptest! {
        #[test]
        fn full_k_returns_every_index(v in prop::collection::vec(-10.0f64..10.0, 1..40)) {
            let n = v.len();
            prop_assert_eq!(topk_indices(&v, n, false).unwrap(), (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn agrees_with_sort(v in prop::collection::vec(-3i32..3, 1..30), k_frac in 0.0f64..1.0, by_abs: bool) {
            // Small integer range forces plenty of ties.
            let v: Vec<f64> = v.into_iter().map(f64::from).collect();
            let k = 1 + ((v.len() - 1) as f64 * k_frac) as usize;
            prop_assert_eq!(topk_indices(&v, k, by_abs).unwrap(), sort_oracle(&v, k, by_abs));
        }
    }
}
