//! Content hashes stamped onto artifacts.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// SHA-256 of the value's JSON serialization, hex encoded.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config values serialize to JSON");
    hex::encode(Sha256::digest(&bytes))
}

/// SHA-256 of raw bytes, hex encoded.
pub fn bytes_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
