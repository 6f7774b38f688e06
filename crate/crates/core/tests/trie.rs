use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest as _, Sha256};
use uso_core::crypto::Digest;
use uso_core::trie::{ExclusionWitness, RootDigest, Trie, TrieKey};

// Independent restatement of the hashing rules, straight on SHA-256.
fn sha(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

fn oracle_path(key: &[u8]) -> [u8; 32] {
    sha(&[&[0x04], key])
}

fn oracle_leaf(key: &[u8], value: &[u8]) -> [u8; 32] {
    let vd = sha(&[&[0x05], value]);
    sha(&[&[0x00], &oracle_path(key), &vd])
}

fn oracle_node(l: &[u8; 32], r: &[u8; 32]) -> [u8; 32] {
    if *l == [0; 32] && *r == [0; 32] {
        return [0; 32];
    }
    sha(&[&[0x01], l, r])
}

/// Complete tree of depth `width` over every slot, hashed level by level.
fn full_tree_root(width: u32, entries: &[(Vec<u8>, Vec<u8>)]) -> [u8; 32] {
    assert!(width <= 16);
    let mut level = vec![[0u8; 32]; 1 << width];
    for (k, v) in entries {
        let p = oracle_path(k);
        let slot = (u32::from_be_bytes([p[0], p[1], p[2], p[3]]) >> (32 - width)) as usize;
        let slot = if width == 0 { 0 } else { slot };
        assert_eq!(level[slot], [0; 32], "test picked colliding keys");
        level[slot] = oracle_leaf(k, v);
    }
    while level.len() > 1 {
        level = level.chunks(2).map(|c| oracle_node(&c[0], &c[1])).collect();
    }
    level[0]
}

fn slot8(key: &[u8]) -> u8 {
    oracle_path(key)[0]
}

/// Random entries with pairwise distinct 8-bit slots.
fn distinct_slot_entries(rng: &mut ChaCha20Rng, n: usize) -> Vec<(Vec<u8>, Vec<u8>)> {
    let mut used = [false; 256];
    let mut out = Vec::new();
    while out.len() < n {
        let k: [u8; 12] = rng.gen();
        let s = slot8(&k) as usize;
        if used[s] {
            continue;
        }
        used[s] = true;
        let v: [u8; 8] = rng.gen();
        out.push((k.to_vec(), v.to_vec()));
    }
    out
}

#[test]
fn root_matches_full_tree_oracle_at_width_8() {
    let mut rng = ChaCha20Rng::seed_from_u64(0x0AC1E);
    for _ in 0..100 {
        let n = rng.gen_range(1..=64);
        let entries = distinct_slot_entries(&mut rng, n);
        let mut t = Trie::with_width(8);
        for (k, v) in &entries {
            t = t.insert(k, v).unwrap();
        }
        assert_eq!(t.root().0 .0, full_tree_root(8, &entries), "n = {n}");
        for (k, _) in &entries {
            assert!(t.prove_inclusion(k).unwrap().verify(&t.root()));
        }
    }
}

#[test]
fn oracle_agrees_at_small_widths() {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    for width in [1u16, 2, 4, 12] {
        let mut entries: Vec<(Vec<u8>, Vec<u8>)> = Vec::new();
        let mut t = Trie::with_width(width);
        for _ in 0..(1usize << width).min(40) {
            let k: [u8; 8] = rng.gen();
            if let Ok(next) = t.insert(&k, b"v") {
                t = next;
                entries.push((k.to_vec(), b"v".to_vec()));
            }
        }
        assert_eq!(
            t.root().0 .0,
            full_tree_root(width as u32, &entries),
            "width {width}"
        );
    }
}

/// A logical key whose path starts with the given bits.
fn key_with_prefix(bits: &str) -> Vec<u8> {
    (0u32..)
        .map(|i| format!("k{bits}-{i}").into_bytes())
        .find(|k| TrieKey::derive(k).prefix_bits(bits.len() as u16) == bits)
        .unwrap()
}

#[test]
fn four_leaf_schematic_reconstructs_literally() {
    let prefixes = ["001", "101", "110", "111"];
    let keys: Vec<Vec<u8>> = prefixes.iter().map(|p| key_with_prefix(p)).collect();
    let values: Vec<Vec<u8>> = (1..=4).map(|i| format!("v{i}").into_bytes()).collect();

    let mut t = Trie::with_width(3);
    for (k, v) in keys.iter().zip(&values) {
        t = t.insert(k, v).unwrap();
    }

    let empty = [0u8; 32];
    let c001 = oracle_leaf(&keys[0], &values[0]);
    let c101 = oracle_leaf(&keys[1], &values[1]);
    let c110 = oracle_leaf(&keys[2], &values[2]);
    let c111 = oracle_leaf(&keys[3], &values[3]);
    let c00 = oracle_node(&empty, &c001);
    let c0 = oracle_node(&c00, &empty);
    let c10 = oracle_node(&empty, &c101);
    let c11 = oracle_node(&c110, &c111);
    let c1 = oracle_node(&c10, &c11);
    let g = oracle_node(&c0, &c1);
    assert_eq!(t.root().0 .0, g);

    let p = t.prove_inclusion(&keys[2]).unwrap();
    assert_eq!(p.key, keys[2]);
    let sibs: Vec<(u16, [u8; 32])> = p.siblings.iter().map(|s| (s.depth, s.digest.0)).collect();
    assert_eq!(sibs, vec![(3, c111), (2, c10), (1, c0)]);
    assert_eq!(
        g,
        oracle_node(&c0, &oracle_node(&c10, &oracle_node(&c110, &c111)))
    );
    assert!(p.verify(&t.root()));

    // "000" has no entry: the empty subtree C01 proves its absence.
    let absent = key_with_prefix("000");
    let ex = t.prove_exclusion(&absent).unwrap();
    assert!(matches!(ex.witness, ExclusionWitness::EmptySubtree { .. }));
    assert!(ex.verify(&t.root()));
}

#[test]
fn schematic_shape_holds_at_full_width() {
    let prefixes = ["001", "101", "110", "111"];
    let keys: Vec<Vec<u8>> = prefixes.iter().map(|p| key_with_prefix(p)).collect();
    let mut t = Trie::new();
    for k in &keys {
        t = t.insert(k, b"v").unwrap();
    }
    let p = t.prove_inclusion(&keys[2]).unwrap();
    let depths: Vec<u16> = p.siblings.iter().map(|s| s.depth).collect();
    assert_eq!(&depths[depths.len() - 2..], &[2, 1]);
    assert!(p.siblings.iter().rev().take(2).all(|s| !s.digest.is_zero()));
    assert!(p.verify(&t.root()));
}

fn mean_siblings(n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut t = Trie::new();
    let mut keys = Vec::with_capacity(n);
    for _ in 0..n {
        let k: [u8; 16] = rng.gen();
        t = t.insert(&k, b"v").unwrap();
        keys.push(k);
    }
    let total: usize = keys
        .iter()
        .map(|k| t.prove_inclusion(k).unwrap().siblings.len())
        .sum();
    total as f64 / n as f64
}

#[test]
fn proof_size_is_logarithmic() {
    let mut prev: Option<f64> = None;
    for e in [4u32, 6, 8, 10, 12] {
        let n = 1usize << e;
        let m = mean_siblings(n, e as u64);
        assert!(m <= 3.0 * e as f64, "n = {n}: mean {m}");
        if let Some(p) = prev {
            assert!(m - p <= 3.0, "n = {n}: grew {}", m - p);
        }
        prev = Some(m);
    }
}

#[test]
fn exclusion_for_absent_keys() {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let mut t = Trie::new();
    for _ in 0..300 {
        let k: [u8; 8] = rng.gen();
        t = t.insert(&k, b"x").unwrap();
    }
    for _ in 0..300 {
        let k: [u8; 9] = rng.gen();
        let ex = t.prove_exclusion(&k).unwrap();
        assert!(ex.verify(&t.root()));
        let mut other = ex.clone();
        other.key.push(0);
        assert!(!other.verify(&t.root()) || t.prove_exclusion(&other.key).is_ok());
    }
}

#[test]
fn empty_root_constant() {
    assert_eq!(Trie::new().root(), RootDigest(Digest::ZERO));
    assert_eq!(full_tree_root(8, &[]), [0; 32]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn root_is_order_independent(
        entries in prop::collection::btree_map(prop::collection::vec(any::<u8>(), 1..24), prop::collection::vec(any::<u8>(), 0..16), 1..40),
        seed in any::<u64>(),
    ) {
        let items: Vec<_> = entries.into_iter().collect();
        let mut shuffled = items.clone();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.gen_range(0..=i));
        }
        let build = |xs: &[(Vec<u8>, Vec<u8>)]| {
            xs.iter().fold(Trie::new(), |t, (k, v)| t.insert(k, v).unwrap())
        };
        let a = build(&items);
        let b = build(&shuffled);
        prop_assert_eq!(a.root(), b.root());
        for (k, _) in &items {
            let p = a.prove_inclusion(k).unwrap();
            prop_assert!(p.verify(&b.root()));
        }
    }

    #[test]
    fn proofs_do_not_transfer_to_other_values(
        keys in prop::collection::btree_set(prop::collection::vec(any::<u8>(), 1..16), 2..20),
        flip in any::<u8>(),
    ) {
        let keys: Vec<_> = keys.into_iter().collect();
        let t = keys.iter().fold(Trie::new(), |t, k| t.insert(k, k).unwrap());
        let mut p = t.prove_inclusion(&keys[0]).unwrap();
        p.value_digest.0[(flip % 32) as usize] ^= 1;
        prop_assert!(!p.verify(&t.root()));
    }

    #[test]
    fn insert_then_exclude_is_consistent(
        keys in prop::collection::btree_set(prop::collection::vec(any::<u8>(), 1..16), 1..30),
        probe in prop::collection::vec(any::<u8>(), 1..16),
    ) {
        let t = keys.iter().fold(Trie::new(), |t, k| t.insert(k, b"v").unwrap());
        if keys.contains(&probe) {
            prop_assert!(t.prove_exclusion(&probe).is_err());
            prop_assert!(t.prove_inclusion(&probe).unwrap().verify(&t.root()));
        } else {
            prop_assert!(t.prove_exclusion(&probe).unwrap().verify(&t.root()));
            prop_assert!(t.prove_inclusion(&probe).is_err());
        }
    }
}
