//! Small helpers for ±1 spin configurations.
//!
//! Configurations are stored as `Vec<i8>` with entries in {-1, +1}. For
//! exhaustive enumeration and hashing they are packed into bitmasks where bit
//! `i` set means spin `i` is `+1`.

use crate::error::{Error, Result};

/// Value of spin `i` in a bitmask configuration.
#[inline]
pub fn spin_from_mask(mask: u128, i: usize) -> i8 {
    if (mask >> i) & 1 == 1 {
        1
    } else {
        -1
    }
}

/// Unpack a bitmask into an explicit ±1 vector of length `l`.
pub fn config_from_mask(mask: u128, l: usize) -> Vec<i8> {
    (0..l).map(|i| spin_from_mask(mask, i)).collect()
}

/// Pack a ±1 configuration into a bitmask (requires `len <= 128`).
pub fn mask_from_config(s: &[i8]) -> u128 {
    debug_assert!(s.len() <= 128);
    let mut m = 0u128;
    for (i, &v) in s.iter().enumerate() {
        debug_assert!(v == 1 || v == -1);
        if v == 1 {
            m |= 1 << i;
        }
    }
    m
}

/// Render a configuration as a compact `+-+...` string.
pub fn config_to_string(s: &[i8]) -> String {
    s.iter().map(|&v| if v == 1 { '+' } else { '-' }).collect()
}

/// Parse a `+-+...` string into a ±1 vector.
pub fn config_from_string(text: &str) -> Result<Vec<i8>> {
    text.chars()
        .map(|c| match c {
            '+' => Ok(1),
            '-' => Ok(-1),
            other => Err(Error::Format(format!(
                "invalid spin character {other:?} (expected '+' or '-')"
            ))),
        })
        .collect()
}

/// Validate that every entry is ±1.
pub fn validate_config(s: &[i8]) -> Result<()> {
    for (i, &v) in s.iter().enumerate() {
        if v != 1 && v != -1 {
            return Err(Error::Parameter(format!(
                "spin {i} has value {v}, expected +1 or -1"
            )));
        }
    }
    Ok(())
}
