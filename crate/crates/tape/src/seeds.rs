//! Seed derivation. Every stage mixes the master seed with a fixed tag, so
//! streams never collide and reruns are reproducible.

use sha2::{Digest, Sha256};

pub fn stage_seed(master: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(stage.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 is 32 bytes"))
}
