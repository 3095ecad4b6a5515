//! Binary SHA-256 Merkle tree over compartment DIDs.
//!
//! Leaves are `SHA-256(did text)` in input order, an internal node is
//! `SHA-256(left ‖ right)`, and an unpaired node is promoted to the next
//! level unchanged.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cid::sha256;
use crate::identity::Did;

pub type Hash32 = [u8; 32];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MerkleError {
    #[error("cannot build a tree without leaves")]
    EmptyInput,
    #[error("leaf index {0} out of range")]
    IndexOutOfRange(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofStep {
    /// Which side the sibling sits on.
    pub side: Side,
    #[serde(with = "hex_hash")]
    pub sibling: Hash32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InclusionProof {
    pub leaf_index: usize,
    pub steps: Vec<ProofStep>,
}

pub fn leaf_hash(did: &Did) -> Hash32 {
    sha256(did.to_string().as_bytes())
}

pub fn node_hash(left: &Hash32, right: &Hash32) -> Hash32 {
    let mut buf = [0u8; 64];
    buf[..32].copy_from_slice(left);
    buf[32..].copy_from_slice(right);
    sha256(&buf)
}

#[derive(Debug, Clone)]
pub struct MerkleTree {
    /// levels[0] = leaves, last = [root]
    levels: Vec<Vec<Hash32>>,
}

impl MerkleTree {
    pub fn from_leaves(leaves: Vec<Hash32>) -> Result<Self, MerkleError> {
        if leaves.is_empty() {
            return Err(MerkleError::EmptyInput);
        }
        let mut levels = vec![leaves];
        while levels.last().expect("non-empty").len() > 1 {
            let next = levels
                .last()
                .expect("non-empty")
                .chunks(2)
                .map(|pair| match pair {
                    [l, r] => node_hash(l, r),
                    [single] => *single,
                    _ => unreachable!(),
                })
                .collect();
            levels.push(next);
        }
        Ok(Self { levels })
    }

    pub fn root(&self) -> Hash32 {
        self.levels.last().expect("non-empty")[0]
    }

    pub fn leaf_count(&self) -> usize {
        self.levels[0].len()
    }

    pub fn proof(&self, leaf_index: usize) -> Result<InclusionProof, MerkleError> {
        if leaf_index >= self.leaf_count() {
            return Err(MerkleError::IndexOutOfRange(leaf_index));
        }
        let mut steps = Vec::new();
        let mut index = leaf_index;
        for level in &self.levels[..self.levels.len() - 1] {
            let sibling = index ^ 1;
            if sibling < level.len() {
                let side = if sibling < index { Side::Left } else { Side::Right };
                steps.push(ProofStep {
                    side,
                    sibling: level[sibling],
                });
            }
            index /= 2;
        }
        Ok(InclusionProof { leaf_index, steps })
    }
}

pub fn verify_proof(leaf: &Hash32, proof: &InclusionProof, root: &Hash32) -> bool {
    let acc = proof.steps.iter().fold(*leaf, |acc, step| match step.side {
        Side::Left => node_hash(&step.sibling, &acc),
        Side::Right => node_hash(&acc, &step.sibling),
    });
    &acc == root
}

/// Root and one inclusion proof per compartment, in input order.
pub fn build_compartment_merkle(compartments: &[Did]) -> Result<(Hash32, Vec<InclusionProof>), MerkleError> {
    let tree = MerkleTree::from_leaves(compartments.iter().map(leaf_hash).collect())?;
    let proofs = (0..tree.leaf_count())
        .map(|i| tree.proof(i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((tree.root(), proofs))
}

mod hex_hash {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(hash: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(hash))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let raw = hex::decode(String::deserialize(d)?).map_err(serde::de::Error::custom)?;
        raw.try_into().map_err(|_| serde::de::Error::custom("expected 32 bytes"))
    }
}
