//! Content hashes over named parameter tensors.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use sha2::{Digest, Sha256};

/// A named tensor view: name, shape and row-major values.
#[derive(Debug, Clone, Copy)]
pub struct NamedValues<'a> {
    pub name: &'a str,
    pub shape: &'a [usize],
    pub values: &'a [f32],
}

/// SHA-256 over the entries in name order, as lowercase hex.
///
/// Each entry contributes its name, its shape and the little-endian bit
/// patterns of its values, so the digest is insensitive to the order in which
/// entries are supplied but changes with any single bit of any value.
pub fn digest<'a, I>(entries: I) -> String
where
    I: IntoIterator<Item = NamedValues<'a>>,
{
    let mut entries: Vec<NamedValues<'a>> = entries.into_iter().collect();
    entries.sort_by(|a, b| a.name.cmp(b.name));
    let mut h = Sha256::new();
    for e in &entries {
        h.update((e.name.len() as u64).to_le_bytes());
        h.update(e.name.as_bytes());
        h.update((e.shape.len() as u64).to_le_bytes());
        for d in e.shape {
            h.update((*d as u64).to_le_bytes());
        }
        for v in e.values {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    to_hex(&h.finalize())
}

/// SHA-256 of arbitrary bytes, as lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    to_hex(&Sha256::digest(bytes))
}

fn to_hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nv<'a>(name: &'a str, shape: &'a [usize], values: &'a [f32]) -> NamedValues<'a> {
        NamedValues { name, shape, values }
    }

    #[test]
    fn order_independent() {
        let a = [1.0f32, 2.0];
        let b = [3.0f32];
        let d1 = digest([nv("a", &[2], &a), nv("b", &[1], &b)]);
        let d2 = digest([nv("b", &[1], &b), nv("a", &[2], &a)]);
        assert_eq!(d1, d2);
        assert_eq!(d1.len(), 64);
    }

    #[test]
    fn sensitive_to_values_shapes_and_names() {
        let a = [1.0f32, 2.0];
        let base = digest([nv("a", &[2], &a)]);
        assert_ne!(base, digest([nv("a", &[2], &[1.0, 2.001])]));
        assert_ne!(base, digest([nv("a", &[1, 2], &a)]));
        assert_ne!(base, digest([nv("b", &[2], &a)]));
        assert_ne!(digest([nv("x", &[1], &[0.0])]), digest([nv("x", &[1], &[-0.0])]));
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
