//! Content hashes and the canonical node encoding.
//!
//! A node's id is the blake3-256 digest of its canonical encoding:
//!
//! ```text
//! u64le len ++ type ++ u64le len ++ name ++ u64le len ++ content
//!   ++ u64le n_children ++ sorted(child ids)
//!   ++ u64le n_edges    ++ sorted(edge ids)
//!   ++ i64le created_at (microseconds)
//! ```
//!
//! The encoding doubles as the immutable blob format, so a blob can be decoded
//! back into its hashed fields and re-verified against its key.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::time::Timestamp;

pub const HASH_LEN: usize = 32;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Hash([u8; HASH_LEN]);

impl Hash {
    pub const fn from_bytes(bytes: [u8; HASH_LEN]) -> Self {
        Hash(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; HASH_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..6])
    }

    pub fn digest(bytes: &[u8]) -> Self {
        Hash(*blake3::hash(bytes).as_bytes())
    }
}

impl fmt::Debug for Hash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hash({})", self.short())
    }
}

impl fmt::Display for Hash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for Hash {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut out = [0u8; HASH_LEN];
        hex::decode_to_slice(s.trim(), &mut out).map_err(|_| Error::InvalidHash(s.to_string()))?;
        Ok(Hash(out))
    }
}

impl Serialize for Hash {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if serializer.is_human_readable() {
            serializer.serialize_str(&self.to_hex())
        } else {
            serializer.serialize_bytes(&self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Hash {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct HashVisitor;

        impl<'de> Visitor<'de> for HashVisitor {
            type Value = Hash;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a 32-byte hash or 64 hex characters")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Hash, E> {
                v.parse().map_err(E::custom)
            }

            fn visit_bytes<E: de::Error>(self, v: &[u8]) -> std::result::Result<Hash, E> {
                let arr: [u8; HASH_LEN] = v.try_into().map_err(|_| E::invalid_length(v.len(), &self))?;
                Ok(Hash(arr))
            }
        }

        if deserializer.is_human_readable() {
            deserializer.deserialize_str(HashVisitor)
        } else {
            deserializer.deserialize_bytes(HashVisitor)
        }
    }
}

/// The hashed fields of a node, with id lists in canonical (sorted) order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalNode {
    pub node_type: String,
    pub name: String,
    pub content: String,
    pub children: Vec<Hash>,
    pub edges: Vec<Hash>,
    pub created_at: Timestamp,
}

impl CanonicalNode {
    pub fn new(
        node_type: impl Into<String>,
        name: impl Into<String>,
        content: impl Into<String>,
        children: &[Hash],
        edges: &[Hash],
        created_at: Timestamp,
    ) -> Self {
        let mut children = children.to_vec();
        children.sort_unstable();
        let mut edges = edges.to_vec();
        edges.sort_unstable();
        Self {
            node_type: node_type.into(),
            name: name.into(),
            content: content.into(),
            children,
            edges,
            created_at,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(
            48 + self.node_type.len()
                + self.name.len()
                + self.content.len()
                + HASH_LEN * (self.children.len() + self.edges.len()),
        );
        put_str(&mut buf, &self.node_type);
        put_str(&mut buf, &self.name);
        put_str(&mut buf, &self.content);
        put_ids(&mut buf, &self.children);
        put_ids(&mut buf, &self.edges);
        buf.extend_from_slice(&self.created_at.0.to_le_bytes());
        buf
    }

    pub fn id(&self) -> Hash {
        Hash::digest(&self.encode())
    }

    /// Inverse of [`encode`](Self::encode). Returns `None` on malformed input,
    /// including id lists that are not in canonical order.
    pub fn decode(bytes: &[u8]) -> Option<Self> {
        let mut r = Reader { buf: bytes };
        let node_type = r.string()?;
        let name = r.string()?;
        let content = r.string()?;
        let children = r.ids()?;
        let edges = r.ids()?;
        let created_at = Timestamp(i64::from_le_bytes(r.take(8)?.try_into().ok()?));
        if !r.buf.is_empty() {
            return None;
        }
        Some(Self { node_type, name, content, children, edges, created_at })
    }
}

/// Content hash of a node. Order of `children` and `edges` does not matter.
pub fn compute_node_id(
    node_type: &str,
    name: &str,
    content: &str,
    children: &[Hash],
    edges: &[Hash],
    created_at: Timestamp,
) -> Hash {
    CanonicalNode::new(node_type, name, content, children, edges, created_at).id()
}

/// Content hash of an edge over `type ++ src ++ dst ++ t_valid.from ++ metadata`.
pub fn compute_edge_id(
    edge_type: &str,
    src: &Hash,
    dst: &Hash,
    valid_from: Timestamp,
    metadata: &BTreeMap<String, String>,
) -> Hash {
    let mut buf = Vec::with_capacity(128);
    put_str(&mut buf, edge_type);
    buf.extend_from_slice(src.as_bytes());
    buf.extend_from_slice(dst.as_bytes());
    buf.extend_from_slice(&valid_from.0.to_le_bytes());
    buf.extend_from_slice(&(metadata.len() as u64).to_le_bytes());
    for (k, v) in metadata {
        put_str(&mut buf, k);
        put_str(&mut buf, v);
    }
    Hash::digest(&buf)
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u64).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn put_ids(buf: &mut Vec<u8>, ids: &[Hash]) {
    buf.extend_from_slice(&(ids.len() as u64).to_le_bytes());
    for id in ids {
        buf.extend_from_slice(id.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.buf.len() < n {
            return None;
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Some(head)
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn string(&mut self) -> Option<String> {
        let len = usize::try_from(self.u64()?).ok()?;
        String::from_utf8(self.take(len)?.to_vec()).ok()
    }

    fn ids(&mut self) -> Option<Vec<Hash>> {
        let n = usize::try_from(self.u64()?).ok()?;
        if n > self.buf.len() / HASH_LEN {
            return None;
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(Hash(self.take(HASH_LEN)?.try_into().ok()?));
        }
        if out.windows(2).any(|w| w[0] > w[1]) {
            return None;
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Expected digests were computed with an independent pure-Python BLAKE3
    // over hand-assembled byte strings.
    const LEAF_GOLDEN: &str = "aed99df13e7d9288102938ba1aa142995f995a4debb9d14400f688997e880026";
    const LEAF_BYTES: &str = "040000000000000046616374010000000000000066010000000000000078\
                              000000000000000000000000000000000000000000000000";
    const COMPOSITE_GOLDEN: &str = "28043773d4b4ae80ce182d2e384850fb69ca3525690fd9604b9b925d28feb97a";

    #[test]
    fn leaf_golden_vector() {
        let node = CanonicalNode::new("Fact", "f", "x", &[], &[], Timestamp(0));
        assert_eq!(hex::encode(node.encode()), LEAF_BYTES);
        assert_eq!(node.id().to_hex(), LEAF_GOLDEN);
        assert_eq!(compute_node_id("Fact", "f", "x", &[], &[], Timestamp(0)).to_hex(), LEAF_GOLDEN);
    }

    #[test]
    fn composite_golden_vector() {
        let a = Hash([1; 32]);
        let b = Hash([2; 32]);
        let e = Hash([3; 32]);
        let id = compute_node_id("Topic", "w", "", &[b, a], &[e], Timestamp(1_700_000_000_000_000));
        assert_eq!(id.to_hex(), COMPOSITE_GOLDEN);
    }

    #[test]
    fn child_order_is_irrelevant() {
        let a = Hash([7; 32]);
        let b = Hash([9; 32]);
        let t = Timestamp(5);
        assert_eq!(
            compute_node_id("World", "w", "", &[a, b], &[], t),
            compute_node_id("World", "w", "", &[b, a], &[], t)
        );
    }

    #[test]
    fn one_byte_of_content_changes_the_hash() {
        let t = Timestamp(0);
        assert_ne!(compute_node_id("Fact", "f", "x", &[], &[], t), compute_node_id("Fact", "f", "y", &[], &[], t));
    }

    #[test]
    fn children_and_edges_do_not_alias() {
        let a = Hash([1; 32]);
        let b = Hash([2; 32]);
        let t = Timestamp(0);
        assert_ne!(
            compute_node_id("W", "w", "", &[a, b], &[], t),
            compute_node_id("W", "w", "", &[a], &[b], t)
        );
    }

    #[test]
    fn hex_round_trip_is_lowercase() {
        let h = Hash::digest(b"abc");
        let s = h.to_hex();
        assert_eq!(s.len(), 64);
        assert_eq!(s, s.to_lowercase());
        assert_eq!(s.parse::<Hash>().unwrap(), h);
        assert!("zz".parse::<Hash>().is_err());
    }

    fn arb_hash() -> impl Strategy<Value = Hash> {
        any::<[u8; 32]>().prop_map(Hash)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn hashing_is_deterministic_and_decodable(
            ty in "[A-Za-z]{1,8}",
            name in ".{0,16}",
            content in ".{0,64}",
            children in proptest::collection::vec(arb_hash(), 0..5),
            edges in proptest::collection::vec(arb_hash(), 0..3),
            created in any::<i64>(),
        ) {
            let node = CanonicalNode::new(ty.clone(), name.clone(), content.clone(), &children, &edges, Timestamp(created));
            let again = compute_node_id(&ty, &name, &content, &children, &edges, Timestamp(created));
            prop_assert_eq!(node.id(), again);
            prop_assert_eq!(CanonicalNode::decode(&node.encode()), Some(node));
        }
    }
}
