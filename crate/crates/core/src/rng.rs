//! Counter-based random streams.
//!
//! Every random quantity is drawn from its own ChaCha keystream, addressed by
//! `(master seed, domain, index)`. Results therefore do not depend on the
//! order in which links, trials or drops are visited, nor on thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// What a stream is used for. Distinct domains never share keystreams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    UeDrop = 1,
    Shadowing = 2,
    Trial = 3,
    Drop = 4,
    Synthetic = 5,
}

/// Opens the keystream for `(master, domain, index)`.
pub fn stream(master: u64, domain: Domain, index: u64) -> ChaCha12Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&master.to_le_bytes());
    seed[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    let mut rng = ChaCha12Rng::from_seed(seed);
    rng.set_stream(index);
    rng
}

/// Derives a child master seed, e.g. one per drop.
pub fn child_seed(master: u64, domain: Domain, index: u64) -> u64 {
    use rand::Rng;
    stream(master, domain, index).random()
}
