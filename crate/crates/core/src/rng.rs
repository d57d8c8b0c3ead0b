use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const DOMAIN_PARTITION: u64 = 0x5041_5254;
pub(crate) const DOMAIN_INIT: u64 = 0x494e_4954;

/// Independent ChaCha stream keyed by `(seed, domain, index)`, so that e.g.
/// the shuffle of iteration `t` does not depend on how many draws earlier
/// iterations consumed.
pub(crate) fn stream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
