// SPDX-License-Identifier: Apache-2.0

//! Canonical template hashing (FNV-1a, 64-bit).

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME)
    })
}

/// Trims and collapses every whitespace run to a single space.
pub fn canonicalize(pattern: &str) -> String {
    pattern.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Hash of the canonical form of a template pattern.
pub fn template_hash(pattern: &str) -> u64 {
    fnv1a64(canonicalize(pattern).as_bytes())
}
