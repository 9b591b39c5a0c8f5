use sha2::{Digest, Sha256};

/// SHA-256 over length-prefixed parts, hex encoded.
pub fn digest_hex(parts: &[&[u8]]) -> String {
    hex::encode(digest(parts))
}

/// First eight bytes of the SHA-256 digest as a seed.
pub fn stable_seed(parts: &[&[u8]]) -> u64 {
    let d = digest(parts);
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

fn digest(parts: &[&[u8]]) -> Vec<u8> {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().to_vec()
}
