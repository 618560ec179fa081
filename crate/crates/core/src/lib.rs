//! Power side-channel analysis toolkit around the Ascon cipher's
//! Initialization round.
//!
//! The crate provides a synthetic power-trace generator with known ground
//! truth ([`sim`]), trace preparation and a binary container format
//! ([`prep`]), classical rank statistics ([`stats`]), a minimal neural
//! engine ([`nn`]), an LSTM sequence autoencoder ([`autoencoder`]),
//! actor-critic clustering of trace features ([`rl`]), generic leakage-model
//! fitting and candidate ranking ([`leakfit`]), and end-to-end attack
//! orchestration ([`pipeline`]).

pub mod ascon;
pub mod autoencoder;
pub mod leakfit;
pub mod nn;
pub mod pipeline;
pub mod prep;
pub mod rl;
pub mod sim;
pub mod stats;

/// Derives an independent 64-bit seed from a master seed and a stream index
/// (splitmix64 over the xor). Used wherever one configured seed has to feed
/// several unrelated generators.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
