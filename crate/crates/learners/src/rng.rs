use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives an independent child seed from `(seed, index)` with the
/// SplitMix64 finalizer. Used for per-tree and per-record streams so results
/// do not depend on evaluation order.
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Deterministic 90/10 split used by iterative learners for their loss
/// curves. Returns `(fit, validation)`; validation is empty below 10 rows.
pub(crate) fn holdout_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_val = n / 10;
    if n_val == 0 {
        return ((0..n).collect(), Vec::new());
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng(sub_seed(seed, 0x5EED_0090)));
    let val = idx.split_off(n - n_val);
    (idx, val)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holdout_is_a_partition() {
        let (fit, val) = holdout_split(105, 3);
        assert_eq!(val.len(), 10);
        let mut all: Vec<usize> = fit.iter().chain(&val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..105).collect::<Vec<_>>());
    }

    #[test]
    fn tiny_sets_have_no_validation_rows() {
        assert_eq!(holdout_split(4, 1), (vec![0, 1, 2, 3], vec![]));
    }

    #[test]
    fn sub_seeds_differ() {
        assert_ne!(sub_seed(1, 0), sub_seed(1, 1));
        assert_ne!(sub_seed(1, 0), sub_seed(2, 0));
    }
}
