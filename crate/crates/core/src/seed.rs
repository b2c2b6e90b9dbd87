//! Seed derivation. All randomness in the pipeline flows from one root seed:
//! each task derives its own seed from `(root, stage label, task index)` so
//! parallel schedules cannot change results.

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a per-task seed: FNV-1a over the label folded into the root,
/// then mixed with the task index.
pub fn derive_seed(root: u64, label: &str, index: u64) -> u64 {
    let mut h = root ^ 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix(h ^ mix(index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_labels_and_indices_diverge() {
        let a = derive_seed(7, "train", 0);
        let b = derive_seed(7, "train", 1);
        let c = derive_seed(7, "sample", 0);
        let d = derive_seed(8, "train", 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        assert_eq!(a, derive_seed(7, "train", 0));
    }
}
