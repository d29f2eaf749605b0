//! Stable seed derivation. Seeds must not depend on the platform, the Rust
//! version or worker scheduling, so `std`'s hashers are not used.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// A seed component.
#[derive(Debug, Clone, Copy)]
pub enum Part<'a> {
    Str(&'a str),
    Int(u64),
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over tagged, length-prefixed parts, finalized with splitmix64.
pub fn derive(parts: &[Part<'_>]) -> u64 {
    let mut h = FNV_OFFSET;
    let mut feed = |bytes: &[u8]| {
        for b in bytes {
            h ^= *b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    };
    for part in parts {
        match part {
            Part::Str(s) => {
                feed(&[0x53]);
                feed(&(s.len() as u64).to_le_bytes());
                feed(s.as_bytes());
            }
            Part::Int(v) => {
                feed(&[0x49]);
                feed(&v.to_le_bytes());
            }
        }
    }
    splitmix64(h)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
