//! Published message digest used to expose impersonation.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256, Sha512};
use thiserror::Error;

use crate::message::BitString;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuthError {
    #[error("unknown digest algorithm `{0}`")]
    UnknownAlgorithm(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DigestAlgorithm {
    #[default]
    Sha256,
    Sha512,
}

impl DigestAlgorithm {
    pub fn id(self) -> &'static str {
        match self {
            DigestAlgorithm::Sha256 => "sha256",
            DigestAlgorithm::Sha512 => "sha512",
        }
    }

    pub fn from_id(id: &str) -> Result<Self, AuthError> {
        match id {
            "sha256" => Ok(DigestAlgorithm::Sha256),
            "sha512" => Ok(DigestAlgorithm::Sha512),
            other => Err(AuthError::UnknownAlgorithm(other.to_owned())),
        }
    }

    // The bit length prefix keeps e.g. "0" and "00" apart after byte padding.
    fn digest(self, bits: &BitString) -> Vec<u8> {
        let len = (bits.len() as u64).to_le_bytes();
        let body = bits.to_bytes();
        match self {
            DigestAlgorithm::Sha256 => Sha256::new()
                .chain_update(len)
                .chain_update(&body)
                .finalize()
                .to_vec(),
            DigestAlgorithm::Sha512 => Sha512::new()
                .chain_update(len)
                .chain_update(&body)
                .finalize()
                .to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageAuth {
    pub digest: Vec<u8>,
    pub algorithm_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HashCheck {
    #[default]
    NotRun,
    Match,
    Mismatch,
}

pub fn publish_hash(bits: &BitString) -> MessageAuth {
    publish_hash_with(bits, DigestAlgorithm::default())
}

pub fn publish_hash_with(bits: &BitString, algorithm: DigestAlgorithm) -> MessageAuth {
    MessageAuth {
        digest: algorithm.digest(bits),
        algorithm_id: algorithm.id().to_owned(),
    }
}

pub fn verify_hash(bits: &BitString, auth: &MessageAuth) -> Result<HashCheck, AuthError> {
    let algorithm = DigestAlgorithm::from_id(&auth.algorithm_id)?;
    Ok(if algorithm.digest(bits) == auth.digest {
        HashCheck::Match
    } else {
        HashCheck::Mismatch
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;
    use proptest::prelude::*;

    #[test]
    fn every_single_flip_of_a_64_bit_message_mismatches() {
        let msg = BitString::random(64, &mut from_seed(64));
        let auth = publish_hash(&msg);
        assert_eq!(verify_hash(&msg, &auth), Ok(HashCheck::Match));
        for i in 0..64 {
            assert_eq!(
                verify_hash(&msg.flipped(i), &auth),
                Ok(HashCheck::Mismatch),
                "flip {i}"
            );
        }
    }

    #[test]
    fn empty_message_has_a_digest() {
        let empty = BitString::default();
        let auth = publish_hash(&empty);
        assert_eq!(auth.digest.len(), 32);
        assert_eq!(verify_hash(&empty, &auth), Ok(HashCheck::Match));
        let zero: BitString = "0".parse().unwrap();
        assert_eq!(verify_hash(&zero, &auth), Ok(HashCheck::Mismatch));
    }

    #[test]
    fn unknown_algorithm_is_rejected() {
        let mut auth = publish_hash(&BitString::default());
        auth.algorithm_id = "md5".into();
        assert_eq!(
            verify_hash(&BitString::default(), &auth),
            Err(AuthError::UnknownAlgorithm("md5".into()))
        );
        let a512 = publish_hash_with(&BitString::default(), DigestAlgorithm::Sha512);
        assert_eq!(a512.digest.len(), 64);
        assert_eq!(
            verify_hash(&BitString::default(), &a512),
            Ok(HashCheck::Match)
        );
    }

    proptest! {
        #[test]
        fn digest_is_deterministic(bits in proptest::collection::vec(any::<bool>(), 0..300)) {
            let b = BitString::new(bits);
            prop_assert_eq!(publish_hash(&b), publish_hash(&b.clone()));
            prop_assert_eq!(verify_hash(&b, &publish_hash(&b)), Ok(HashCheck::Match));
        }
    }
}
