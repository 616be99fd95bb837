use molgram::corpus::bundled_corpus;
use molgram::molgraph::{
    circular_fingerprint, is_isomorphic, parse_smiles, validate_valence, write_smiles,
};
use proptest::prelude::*;

#[test]
fn corpus_round_trips_through_smiles() {
    for entry in bundled_corpus() {
        let written = write_smiles(&entry.graph).unwrap();
        let back = parse_smiles(&written).unwrap();
        assert!(
            is_isomorphic(&back, &entry.graph),
            "{} -> {written}",
            entry.text
        );
    }
}

#[test]
fn corpus_passes_valence_check() {
    for entry in bundled_corpus() {
        let report = validate_valence(&entry.graph);
        assert!(report.valid, "{}: {:?}", entry.text, report.violations);
    }
}

fn corpus_index() -> impl Strategy<Value = usize> {
    0..bundled_corpus().len()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fingerprint_ignores_atom_order(i in corpus_index(), seed in any::<u64>()) {
        use rand::{seq::SliceRandom, SeedableRng};
        let g = bundled_corpus()[i].graph.clone();
        let mut perm: Vec<usize> = (0..g.node_count()).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let h = g.permuted(&perm);
        prop_assert_eq!(
            circular_fingerprint(&g, 2, 2048).unwrap(),
            circular_fingerprint(&h, 2, 2048).unwrap()
        );
        prop_assert!(is_isomorphic(&g, &h));
        prop_assert!(is_isomorphic(&h, &g));
    }

    #[test]
    fn isomorphism_is_an_equivalence(a in corpus_index(), b in corpus_index(), c in corpus_index()) {
        let corpus = bundled_corpus();
        let (ga, gb, gc) = (&corpus[a].graph, &corpus[b].graph, &corpus[c].graph);
        prop_assert!(is_isomorphic(ga, ga));
        prop_assert_eq!(is_isomorphic(ga, gb), is_isomorphic(gb, ga));
        if is_isomorphic(ga, gb) && is_isomorphic(gb, gc) {
            prop_assert!(is_isomorphic(ga, gc));
        }
    }
}
