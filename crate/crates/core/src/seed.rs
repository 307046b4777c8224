//! Labeled sub-seed derivation from a single master seed.

use sha2::{Digest, Sha256};

/// First 8 bytes (LE) of `sha256(master_le || label)`.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_and_masters_separate_streams() {
        assert_eq!(derive_seed(7, "split"), derive_seed(7, "split"));
        assert_ne!(derive_seed(7, "split"), derive_seed(7, "init"));
        assert_ne!(derive_seed(7, "split"), derive_seed(8, "split"));
    }
}
