use proptest::prelude::*;

use smiles_qae::corpus::{build_vocab, detokenize, tokenize};
use smiles_qae::objective::{levenshtein, levenshtein_similarity};
use smiles_qae::qae::{ansatz, CircuitParams, Direction};
use smiles_qae::qsim::StateVector;

fn smiles_like() -> impl Strategy<Value = String> {
    proptest::collection::vec(
        prop::sample::select(vec![
            "C", "c", "N", "n", "O", "o", "S", "F", "Cl", "Br", "(", ")", "=", "#", "1", "2", "[nH]",
            "[C@@H]", "[O-]",
        ]),
        1..20,
    )
    .prop_map(|t| t.concat())
}

fn short() -> impl Strategy<Value = Vec<u8>> {
    proptest::collection::vec(0u8..4, 0..8)
}

proptest! {
    #[test]
    fn tokenizer_round_trips(s in smiles_like()) {
        let vocab = build_vocab(&[s.as_str()]).unwrap();
        let seq = tokenize(&s, &vocab).unwrap();
        prop_assert_eq!(detokenize(seq.ids(), &vocab), s);
    }

    #[test]
    fn edit_distance_is_a_metric(a in short(), b in short(), c in short()) {
        prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
        prop_assert_eq!(levenshtein(&a, &a), 0);
        prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
        prop_assert!(levenshtein(&a, &b) <= a.len().max(b.len()));
    }

    #[test]
    fn similarity_is_bounded_and_symmetric(a in smiles_like(), b in smiles_like()) {
        let s = levenshtein_similarity(&a, &b);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(s, levenshtein_similarity(&b, &a));
    }

    #[test]
    fn ansatz_preserves_norm(
        n in 1usize..6,
        layers in 1usize..4,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let theta = CircuitParams {
            n_layers: layers,
            n_qubits: n,
            angles: (0..layers * n * 2).map(|_| rng.gen_range(-4.0..4.0)).collect(),
        };
        let mut s = StateVector::zero(n).unwrap();
        ansatz(&mut s, &theta, Direction::Forward).unwrap();
        prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
    }
}
