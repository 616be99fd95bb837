//! Circular (ECFP-style) fingerprints and Tanimoto similarity.

use super::hashing::{combine, hash_seq};
use super::{MolError, OrderedMolGraph};
use serde::{Deserialize, Serialize};

pub const DEFAULT_NBITS: usize = 2048;
pub const DEFAULT_RADIUS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint {
    words: Vec<u64>,
    nbits: usize,
    radius: usize,
}

impl Fingerprint {
    pub fn empty(nbits: usize, radius: usize) -> Self {
        Fingerprint {
            words: vec![0; nbits.div_ceil(64)],
            nbits,
            radius,
        }
    }

    pub fn from_bits(nbits: usize, bits: &[usize]) -> Self {
        let mut fp = Self::empty(nbits, 0);
        for &b in bits {
            fp.set(b);
        }
        fp
    }

    pub fn set(&mut self, bit: usize) {
        assert!(bit < self.nbits, "bit {bit} outside {} bits", self.nbits);
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn contains(&self, bit: usize) -> bool {
        bit < self.nbits && self.words[bit / 64] & (1 << (bit % 64)) != 0
    }

    pub fn nbits(&self) -> usize {
        self.nbits
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn popcount(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nbits).filter(|&b| self.contains(b))
    }
}

/// Hashes each atom's neighbourhood for `radius` rounds; every intermediate
/// invariant sets one bit.
pub fn circular_fingerprint(
    g: &OrderedMolGraph,
    radius: usize,
    nbits: usize,
) -> Result<Fingerprint, MolError> {
    if nbits == 0 {
        return Err(MolError::LengthMismatch(0, DEFAULT_NBITS));
    }
    let n = g.node_count();
    let mut inv = Vec::with_capacity(n);
    for v in 0..n {
        let atom = g.label(v).atom().ok_or(MolError::NonTerminalPresent(v))?;
        inv.push(hash_seq(
            0x5EED,
            [
                atom.element as u64,
                (i64::from(atom.charge) + 16) as u64,
                g.degree(v) as u64,
                u64::from(g.bond_order_sum(v)),
            ],
        ));
    }
    let mut fp = Fingerprint::empty(nbits, radius);
    for &h in &inv {
        fp.set((h % nbits as u64) as usize);
    }
    for round in 0..radius {
        let next: Vec<u64> = (0..n)
            .map(|v| {
                let mut pairs: Vec<u64> = g
                    .neighbors(v)
                    .iter()
                    .map(|nb| {
                        let order = nb.label.bond().map_or(0, |b| u64::from(b.valence()));
                        combine(order, inv[nb.node])
                    })
                    .collect();
                pairs.sort_unstable();
                hash_seq(combine(round as u64 + 1, inv[v]), pairs)
            })
            .collect();
        for &h in &next {
            fp.set((h % nbits as u64) as usize);
        }
        inv = next;
    }
    Ok(fp)
}

/// |a ∧ b| / |a ∨ b|, or 1.0 when both are empty.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, MolError> {
    if a.nbits != b.nbits {
        return Err(MolError::LengthMismatch(a.nbits, b.nbits));
    }
    let (mut both, mut either) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        both += (x & y).count_ones();
        either += (x | y).count_ones();
    }
    if either == 0 {
        return Ok(1.0);
    }
    Ok(f64::from(both) / f64::from(either))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;

    fn fp(s: &str) -> Fingerprint {
        circular_fingerprint(&parse_smiles(s).unwrap(), DEFAULT_RADIUS, DEFAULT_NBITS).unwrap()
    }

    #[test]
    fn deterministic_and_discriminating() {
        assert_eq!(fp("CC(=O)NC1CCCCC1"), fp("CC(=O)NC1CCCCC1"));
        assert_ne!(fp("C"), fp("O"));
        assert!(fp("CCO").popcount() <= DEFAULT_NBITS);
    }

    #[test]
    fn invariant_under_every_atom_order() {
        let g = parse_smiles("CCO").unwrap();
        let reference = fp("CCO");
        for perm in [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ] {
            let h = g.permuted(&perm);
            assert_eq!(circular_fingerprint(&h, 2, 2048).unwrap(), reference);
        }
        assert_eq!(fp("OCC"), reference);
    }

    #[test]
    fn tanimoto_values() {
        let a = Fingerprint::from_bits(16, &[1, 2, 3]);
        let b = Fingerprint::from_bits(16, &[2, 3, 4]);
        let c = Fingerprint::from_bits(16, &[7, 8]);
        assert_eq!(tanimoto(&a, &a).unwrap(), 1.0);
        assert_eq!(tanimoto(&a, &b).unwrap(), 0.5);
        assert_eq!(tanimoto(&a, &c).unwrap(), 0.0);
        let e = Fingerprint::empty(16, 0);
        assert_eq!(tanimoto(&e, &e).unwrap(), 1.0);
        assert!(matches!(
            tanimoto(&a, &Fingerprint::empty(32, 0)),
            Err(MolError::LengthMismatch(16, 32))
        ));
    }

    #[test]
    fn nonterminal_rejected() {
        let mut g = OrderedMolGraph::new();
        g.add_node(crate::molgraph::NodeLabel::NonTerminal);
        assert!(matches!(
            circular_fingerprint(&g, 2, 64),
            Err(MolError::NonTerminalPresent(0))
        ));
    }
}
