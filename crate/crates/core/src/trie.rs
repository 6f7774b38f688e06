//! Sparse binary Merkle trie over hashed keys.
//!
//! Every logical key is hashed to a 256-bit path and, conceptually, its leaf
//! sits at depth `width` of a complete binary tree (`width` = 256 unless a
//! truncated trie is requested). Empty subtrees hash to the null constant
//! (32 zero bytes); any other interior node hashes as
//! `h(Node ‖ left ‖ right)`, with an empty child contributing the null
//! constant. A leaf hashes as `h(Leaf ‖ path ‖ value_digest)`.
//!
//! Storage is path-compressed: a stored leaf hangs at the shortest prefix
//! that is unique among stored keys, and a stored branch exists only where
//! two keys diverge. The single-child chains in between are hashed on
//! demand. Proofs list only the non-empty siblings, each with its depth, so
//! their size tracks the number of divergences on the path (about lg n)
//! rather than the width.

use std::fmt::{self, Write as _};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{hex_bytes, tag, Canonical, CodecError, Reader, Writer};
use crate::crypto::{tagged_hash, Digest, Domain};

pub const MAX_WIDTH: u16 = 256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrieError {
    #[error("key already present")]
    DuplicateKey,
    #[error("a different key already occupies this slot")]
    PathCollision,
    #[error("key not found")]
    KeyNotFound,
    #[error("key is present")]
    KeyPresent,
}

/// The 256-bit path of a logical key: `h(TrieKey ‖ key)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TrieKey(pub Digest);

impl TrieKey {
    pub fn derive(logical_key: &[u8]) -> Self {
        TrieKey(tagged_hash(Domain::TrieKey, &[logical_key]))
    }

    pub fn bit(&self, i: u16) -> bool {
        self.0.bit(i as usize)
    }

    /// First bit index in `[from, to)` where the two paths differ.
    fn first_difference(&self, other: &TrieKey, from: u16, to: u16) -> Option<u16> {
        (from..to).find(|&i| self.bit(i) != other.bit(i))
    }

    /// Binary string of the first `n` bits, as used in node labels.
    pub fn prefix_bits(&self, n: u16) -> String {
        (0..n)
            .map(|i| if self.bit(i) { '1' } else { '0' })
            .collect()
    }
}

/// A trie root, `G` for a ledger epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RootDigest(pub Digest);

impl RootDigest {
    pub const EMPTY: RootDigest = RootDigest(Digest::ZERO);
}

impl fmt::Display for RootDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

/// Digest bound to a stored value: `h(Value ‖ value)`.
pub fn value_digest(value: &[u8]) -> Digest {
    tagged_hash(Domain::Value, &[value])
}

pub fn leaf_hash(path: &TrieKey, value_digest: &Digest) -> Digest {
    tagged_hash(Domain::Leaf, &[path.0.as_bytes(), value_digest.as_bytes()])
}

/// Interior node rule. Two empty children make an empty node.
pub fn node_hash(left: &Digest, right: &Digest) -> Digest {
    if left.is_zero() && right.is_zero() {
        return Digest::ZERO;
    }
    tagged_hash(Domain::Node, &[left.as_bytes(), right.as_bytes()])
}

/// Hash a lone subtree digest at depth `from` up to depth `to` along `path`,
/// with empty siblings at every level in between.
fn lift(mut digest: Digest, path: &TrieKey, from: u16, to: u16) -> Digest {
    for d in (to + 1..=from).rev() {
        digest = if path.bit(d - 1) {
            node_hash(&Digest::ZERO, &digest)
        } else {
            node_hash(&digest, &Digest::ZERO)
        };
    }
    digest
}

#[derive(Debug)]
struct Leaf {
    path: TrieKey,
    key: Vec<u8>,
    value_digest: Digest,
    hash: Digest,
}

#[derive(Debug)]
struct Branch {
    /// Bit index on which the two children differ; the branch is the node
    /// at depth `split` on its path.
    split: u16,
    left: Node,
    right: Node,
    /// Child subtree digests at depth `split + 1`.
    left_hash: Digest,
    right_hash: Digest,
    hash: Digest,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(Arc<Leaf>),
    Branch(Arc<Branch>),
}

impl Node {
    /// Any stored path below this node; all share the node's prefix.
    fn some_path(&self) -> &TrieKey {
        match self {
            Node::Leaf(l) => &l.path,
            Node::Branch(b) => b.left.some_path(),
        }
    }

    fn natural_depth(&self, width: u16) -> u16 {
        match self {
            Node::Leaf(_) => width,
            Node::Branch(b) => b.split,
        }
    }

    fn natural_hash(&self) -> Digest {
        match self {
            Node::Leaf(l) => l.hash,
            Node::Branch(b) => b.hash,
        }
    }

    /// Digest of the subtree rooted at `depth` that contains only this node.
    fn hash_at(&self, depth: u16, width: u16) -> Digest {
        lift(
            self.natural_hash(),
            self.some_path(),
            self.natural_depth(width),
            depth,
        )
    }
}

fn make_branch(split: u16, width: u16, left: Node, right: Node) -> Node {
    let left_hash = left.hash_at(split + 1, width);
    let right_hash = right.hash_at(split + 1, width);
    Node::Branch(Arc::new(Branch {
        split,
        hash: node_hash(&left_hash, &right_hash),
        left,
        right,
        left_hash,
        right_hash,
    }))
}

/// One non-empty sibling on an authentication path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sibling {
    /// Depth of the sibling node (1 = a child of the root).
    pub depth: u16,
    pub digest: Digest,
}

/// Immutable trie. `insert` returns a new trie sharing unchanged subtrees.
#[derive(Debug, Clone)]
pub struct Trie {
    width: u16,
    root: Option<Node>,
    len: usize,
    root_digest: Digest,
}

impl Default for Trie {
    fn default() -> Self {
        Trie::new()
    }
}

impl Trie {
    pub fn new() -> Self {
        Trie::with_width(MAX_WIDTH)
    }

    /// A trie whose leaves sit at depth `width` (paths truncated to `width`
    /// bits). Two keys whose truncated paths agree cannot coexist.
    pub fn with_width(width: u16) -> Self {
        assert!(width <= MAX_WIDTH, "width must be at most 256");
        Trie {
            width,
            root: None,
            len: 0,
            root_digest: Digest::ZERO,
        }
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn root(&self) -> RootDigest {
        RootDigest(self.root_digest)
    }

    /// Insert `key → h(value)`.
    pub fn insert(&self, key: &[u8], value: &[u8]) -> Result<Trie, TrieError> {
        self.insert_digest(key, value_digest(value))
    }

    pub fn insert_digest(&self, key: &[u8], value_digest: Digest) -> Result<Trie, TrieError> {
        let path = TrieKey::derive(key);
        let leaf = Node::Leaf(Arc::new(Leaf {
            path,
            key: key.to_vec(),
            value_digest,
            hash: leaf_hash(&path, &value_digest),
        }));
        let root = match &self.root {
            None => leaf,
            Some(n) => self.insert_at(n, 0, leaf)?,
        };
        let root_digest = root.hash_at(0, self.width);
        Ok(Trie {
            width: self.width,
            root: Some(root),
            len: self.len + 1,
            root_digest,
        })
    }

    fn insert_at(&self, node: &Node, depth: u16, new: Node) -> Result<Node, TrieError> {
        let w = self.width;
        let new_path = *new.some_path();
        match node {
            Node::Leaf(l) => match l.path.first_difference(&new_path, depth, w) {
                None => {
                    let Node::Leaf(nl) = &new else { unreachable!() };
                    if nl.key == l.key {
                        Err(TrieError::DuplicateKey)
                    } else {
                        Err(TrieError::PathCollision)
                    }
                }
                Some(b) => Ok(Self::pair(b, w, node.clone(), new)),
            },
            Node::Branch(br) => {
                if let Some(b) = node
                    .some_path()
                    .first_difference(&new_path, depth, br.split)
                {
                    return Ok(Self::pair(b, w, node.clone(), new));
                }
                let goes_right = new_path.bit(br.split);
                let child = if goes_right { &br.right } else { &br.left };
                let replaced = self.insert_at(child, br.split + 1, new)?;
                let replaced_hash = replaced.hash_at(br.split + 1, w);
                let (left, right, left_hash, right_hash) = if goes_right {
                    (br.left.clone(), replaced, br.left_hash, replaced_hash)
                } else {
                    (replaced, br.right.clone(), replaced_hash, br.right_hash)
                };
                Ok(Node::Branch(Arc::new(Branch {
                    split: br.split,
                    hash: node_hash(&left_hash, &right_hash),
                    left,
                    right,
                    left_hash,
                    right_hash,
                })))
            }
        }
    }

    /// Branch at `split` holding `existing` and `new` on opposite sides.
    fn pair(split: u16, width: u16, existing: Node, new: Node) -> Node {
        if new.some_path().bit(split) {
            make_branch(split, width, existing, new)
        } else {
            make_branch(split, width, new, existing)
        }
    }

    /// Value digest stored under `key`, if present.
    pub fn get(&self, key: &[u8]) -> Option<Digest> {
        match self.locate(key) {
            Located::Found { value_digest, .. } => Some(value_digest),
            _ => None,
        }
    }

    pub fn contains(&self, key: &[u8]) -> bool {
        self.get(key).is_some()
    }

    fn locate(&self, key: &[u8]) -> Located {
        let w = self.width;
        let path = TrieKey::derive(key);
        let mut siblings = Vec::new();
        let mut depth = 0u16;
        let mut node = match &self.root {
            None => return Located::Empty { depth: 0, siblings },
            Some(n) => n,
        };
        loop {
            match node {
                Node::Branch(br) => {
                    if let Some(b) = node.some_path().first_difference(&path, depth, br.split) {
                        siblings.push(Sibling {
                            depth: b + 1,
                            digest: node.hash_at(b + 1, w),
                        });
                        siblings.reverse();
                        return Located::Empty {
                            depth: b + 1,
                            siblings,
                        };
                    }
                    let (next, other) = if path.bit(br.split) {
                        (&br.right, br.left_hash)
                    } else {
                        (&br.left, br.right_hash)
                    };
                    siblings.push(Sibling {
                        depth: br.split + 1,
                        digest: other,
                    });
                    depth = br.split + 1;
                    node = next;
                }
                Node::Leaf(l) => {
                    siblings.reverse();
                    return match l.path.first_difference(&path, depth, w) {
                        Some(b) => {
                            let mut s = siblings;
                            s.insert(
                                0,
                                Sibling {
                                    depth: b + 1,
                                    digest: node.hash_at(b + 1, w),
                                },
                            );
                            Located::Empty {
                                depth: b + 1,
                                siblings: s,
                            }
                        }
                        None if l.key == key => Located::Found {
                            value_digest: l.value_digest,
                            siblings,
                        },
                        None => Located::Occupied {
                            key: l.key.clone(),
                            value_digest: l.value_digest,
                            siblings,
                        },
                    };
                }
            }
        }
    }

    pub fn prove_inclusion(&self, key: &[u8]) -> Result<ProofOfInclusion, TrieError> {
        match self.locate(key) {
            Located::Found {
                value_digest,
                siblings,
            } => Ok(ProofOfInclusion {
                key: key.to_vec(),
                value_digest,
                width: self.width,
                siblings,
            }),
            _ => Err(TrieError::KeyNotFound),
        }
    }

    pub fn prove_exclusion(&self, key: &[u8]) -> Result<ProofOfExclusion, TrieError> {
        let witness = match self.locate(key) {
            Located::Found { .. } => return Err(TrieError::KeyPresent),
            Located::Empty { depth, siblings } => ExclusionWitness::EmptySubtree {
                width: self.width,
                depth,
                siblings,
            },
            Located::Occupied {
                key: other,
                value_digest,
                siblings,
            } => ExclusionWitness::ConflictingLeaf(ProofOfInclusion {
                key: other,
                value_digest,
                width: self.width,
                siblings,
            }),
        };
        Ok(ProofOfExclusion {
            key: key.to_vec(),
            witness,
        })
    }

    /// Text rendering of the stored structure. Each line is a node label
    /// (`G` for the root, `C` + binary path prefix otherwise), the first
    /// eight hex digits of its digest at that position, and its kind.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "trie: {} entries, width {}", self.len, self.width);
        match &self.root {
            Some(root) => self.dump_node(root, 0, &mut out),
            None => out.push_str("G 00000000 empty\n"),
        }
        out
    }

    fn dump_node(&self, node: &Node, depth: u16, out: &mut String) {
        let w = self.width;
        let label = if depth == 0 {
            "G".to_string()
        } else {
            format!("C{}", node.some_path().prefix_bits(depth))
        };
        let indent = depth.min(64) as usize * 2;
        let digest = node.hash_at(depth, w);
        match node {
            Node::Leaf(l) => {
                let _ = writeln!(
                    out,
                    "{:indent$}{label} {} leaf slot={} key={} value={}",
                    "",
                    &digest.to_hex()[..8],
                    l.path.prefix_bits(w.min(16)),
                    hex::encode(&l.key[..l.key.len().min(8)]),
                    &l.value_digest.to_hex()[..8],
                );
            }
            Node::Branch(br) => {
                let _ = writeln!(
                    out,
                    "{:indent$}{label} {} branch@{}",
                    "",
                    &digest.to_hex()[..8],
                    br.split
                );
                self.dump_node(&br.left, br.split + 1, out);
                self.dump_node(&br.right, br.split + 1, out);
            }
        }
    }
}

enum Located {
    Found {
        value_digest: Digest,
        siblings: Vec<Sibling>,
    },
    Empty {
        depth: u16,
        siblings: Vec<Sibling>,
    },
    Occupied {
        key: Vec<u8>,
        value_digest: Digest,
        siblings: Vec<Sibling>,
    },
}

/// Authentication path for `key → value_digest`. Siblings run from the
/// leaf towards the root, strictly decreasing in depth; empty siblings are
/// omitted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofOfInclusion {
    #[serde(with = "hex_bytes")]
    pub key: Vec<u8>,
    pub value_digest: Digest,
    pub width: u16,
    pub siblings: Vec<Sibling>,
}

impl ProofOfInclusion {
    pub fn path(&self) -> TrieKey {
        TrieKey::derive(&self.key)
    }

    /// Root implied by the proof, or `None` if the sibling list is not
    /// well formed.
    pub fn computed_root(&self) -> Option<RootDigest> {
        let path = self.path();
        fold(
            &path,
            leaf_hash(&path, &self.value_digest),
            self.width,
            self.width,
            &self.siblings,
        )
    }

    pub fn verify(&self, root: &RootDigest) -> bool {
        self.computed_root().as_ref() == Some(root)
    }
}

/// Fold `start` (the digest at depth `from` on `path`) up to the root.
fn fold(
    path: &TrieKey,
    start: Digest,
    from: u16,
    width: u16,
    siblings: &[Sibling],
) -> Option<RootDigest> {
    if width > MAX_WIDTH || from > width || siblings.len() > MAX_WIDTH as usize {
        return None;
    }
    let mut prev = from + 1;
    for s in siblings {
        if s.depth == 0 || s.depth >= prev || s.digest.is_zero() {
            return None;
        }
        prev = s.depth;
    }
    let mut cur = start;
    let mut it = siblings.iter().peekable();
    for d in (1..=from).rev() {
        let sib = match it.peek() {
            Some(s) if s.depth == d => it.next().expect("peeked").digest,
            _ => Digest::ZERO,
        };
        cur = if path.bit(d - 1) {
            node_hash(&sib, &cur)
        } else {
            node_hash(&cur, &sib)
        };
    }
    Some(RootDigest(cur))
}

pub fn verify_inclusion(root: &RootDigest, proof: &ProofOfInclusion) -> bool {
    proof.verify(root)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ExclusionWitness {
    /// The subtree at `depth` on the key's path is empty.
    EmptySubtree {
        width: u16,
        depth: u16,
        siblings: Vec<Sibling>,
    },
    /// A different key occupies the key's slot.
    ConflictingLeaf(ProofOfInclusion),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofOfExclusion {
    #[serde(with = "hex_bytes")]
    pub key: Vec<u8>,
    pub witness: ExclusionWitness,
}

impl ProofOfExclusion {
    pub fn verify(&self, root: &RootDigest) -> bool {
        let path = TrieKey::derive(&self.key);
        match &self.witness {
            ExclusionWitness::EmptySubtree {
                width,
                depth,
                siblings,
            } => fold(&path, Digest::ZERO, *depth, *width, siblings).as_ref() == Some(root),
            ExclusionWitness::ConflictingLeaf(inner) => {
                inner.key != self.key
                    && inner
                        .path()
                        .first_difference(&path, 0, inner.width)
                        .is_none()
                    && inner.verify(root)
            }
        }
    }
}

pub fn verify_exclusion(root: &RootDigest, proof: &ProofOfExclusion) -> bool {
    proof.verify(root)
}

fn write_siblings(w: &mut Writer, siblings: &[Sibling]) {
    w.u32(siblings.len() as u32);
    for s in siblings {
        w.u16(s.depth).fixed(s.digest.as_bytes());
    }
}

fn read_siblings(r: &mut Reader<'_>) -> Result<Vec<Sibling>, CodecError> {
    let n = r.u32()? as usize;
    if n > MAX_WIDTH as usize {
        return Err(CodecError::Invalid("too many siblings"));
    }
    (0..n)
        .map(|_| {
            Ok(Sibling {
                depth: r.u16()?,
                digest: Digest(r.array()?),
            })
        })
        .collect()
}

impl Canonical for ProofOfInclusion {
    const TAG: u8 = tag::PROOF_OF_INCLUSION;

    fn encode_body(&self, w: &mut Writer) {
        w.bytes(&self.key)
            .fixed(self.value_digest.as_bytes())
            .u16(self.width);
        write_siblings(w, &self.siblings);
    }

    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(ProofOfInclusion {
            key: r.bytes()?.to_vec(),
            value_digest: Digest(r.array()?),
            width: r.u16()?,
            siblings: read_siblings(r)?,
        })
    }
}

impl Canonical for ProofOfExclusion {
    const TAG: u8 = tag::PROOF_OF_EXCLUSION;

    fn encode_body(&self, w: &mut Writer) {
        w.bytes(&self.key);
        match &self.witness {
            ExclusionWitness::EmptySubtree {
                width,
                depth,
                siblings,
            } => {
                w.u8(0).u16(*width).u16(*depth);
                write_siblings(w, siblings);
            }
            ExclusionWitness::ConflictingLeaf(p) => {
                w.u8(1).item(p);
            }
        }
    }

    fn decode_body(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let key = r.bytes()?.to_vec();
        let witness = match r.u8()? {
            0 => ExclusionWitness::EmptySubtree {
                width: r.u16()?,
                depth: r.u16()?,
                siblings: read_siblings(r)?,
            },
            1 => ExclusionWitness::ConflictingLeaf(r.item()?),
            _ => return Err(CodecError::Invalid("unknown exclusion witness kind")),
        };
        Ok(ProofOfExclusion { key, witness })
    }
}
