//! Dynamic-programming results against exhaustive enumeration.

use rand::Rng;
use rnaforge_core::fold::{self, pair_probability_by_exclusion};
use rnaforge_core::oracle::Ensemble;
use rnaforge_core::rng::stream;
use rnaforge_core::{EnergyParams, Nucleotide, Sequence};

fn random_sequence(rng: &mut impl Rng, n: usize) -> Sequence {
    Sequence::new((0..n).map(|_| Nucleotide::from_index(rng.random_range(0..4))).collect())
}

fn param_sets() -> Vec<EnergyParams> {
    vec![
        EnergyParams::default(),
        EnergyParams::all_zero(),
        EnergyParams {
            e_pair: [-17, -23, -9, -14, 4, -3],
            e_stack: -12,
            min_hairpin: 3,
            rt: 0.9,
        },
        EnergyParams {
            min_hairpin: 1,
            ..EnergyParams::default()
        },
    ]
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

#[test]
fn dp_matches_enumeration() {
    let mut rng = stream(&[11]);
    for (pi, p) in param_sets().iter().enumerate() {
        for _ in 0..40 {
            let n = rng.random_range(5..=12);
            let x = random_sequence(&mut rng, n);
            let oracle = Ensemble::new(&x, p).unwrap();
            let summary = fold::summarize(&x, p).unwrap();
            assert_eq!(summary.mfe_value, oracle.mfe_value(), "{x} params {pi}");
            assert_eq!(summary.mfe_count, oracle.mfe_count(), "{x} params {pi}");
            assert!(rel_close(summary.q(), oracle.partition_function(), 1e-9));
            let e = rnaforge_core::thermo::energy(&x, &summary.mfe_structure, p).unwrap();
            assert_eq!(e, summary.mfe_value);

            let dense = oracle.pair_probabilities(n);
            for i in 0..n {
                for j in 0..n {
                    assert!((summary.probs.get(i, j) - dense[i * n + j]).abs() < 1e-9);
                }
            }
            for (s, prob) in oracle.probabilities() {
                let dp = fold::boltzmann_prob(&x, &s, p).unwrap();
                assert!(rel_close(dp, prob, 1e-9), "{x} {s}: {dp} vs {prob}");
                let ned = fold::ned(&x, &s, p).unwrap();
                assert!((ned - oracle.ned(&s).unwrap()).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn exclusion_route_matches_outside_pass() {
    let mut rng = stream(&[12]);
    let p = EnergyParams::default();
    for _ in 0..20 {
        let x = random_sequence(&mut rng, 14);
        let probs = fold::pair_probabilities(&x, &p).unwrap();
        for i in 0..14 {
            for j in (i + 4)..14 {
                let alt = pair_probability_by_exclusion(&x, &p, i, j).unwrap();
                assert!((alt - probs.get(i, j)).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn scaling_energies_and_rt_together_preserves_probabilities() {
    let mut rng = stream(&[13]);
    let p = EnergyParams::default();
    let doubled = EnergyParams {
        e_pair: p.e_pair.map(|e| 2 * e),
        e_stack: 2 * p.e_stack,
        rt: 2.0 * p.rt,
        ..p.clone()
    };
    for _ in 0..20 {
        let x = random_sequence(&mut rng, 20);
        let (_, y) = fold::mfe(&x, &p);
        let a = fold::boltzmann_prob(&x, &y, &p).unwrap();
        let b = fold::boltzmann_prob(&x, &y, &doubled).unwrap();
        assert!(rel_close(a, b, 1e-9));
    }
}

#[test]
fn mfe_structure_is_most_probable() {
    let mut rng = stream(&[14]);
    let p = EnergyParams::default();
    for _ in 0..30 {
        let x = random_sequence(&mut rng, 11);
        let (_, best) = fold::mfe(&x, &p);
        let pbest = fold::boltzmann_prob(&x, &best, &p).unwrap();
        for (s, _) in Ensemble::new(&x, &p).unwrap().members {
            assert!(fold::boltzmann_prob(&x, &s, &p).unwrap() <= pbest + 1e-12);
        }
    }
}

#[test]
fn pair_probability_matrix_is_well_formed() {
    let mut rng = stream(&[15]);
    let p = EnergyParams::default();
    for _ in 0..20 {
        let n = rng.random_range(20..60);
        let x = random_sequence(&mut rng, n);
        let probs = fold::pair_probabilities(&x, &p).unwrap();
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                let pij = probs.get(i, j);
                assert_eq!(pij, probs.get(j, i));
                assert!((0.0..=1.0).contains(&pij));
                row += pij;
            }
            assert!(row <= 1.0 + 1e-9);
            assert!((probs.unpaired(i) - (1.0 - row).max(0.0)).abs() < 1e-9);
        }
    }
}

#[test]
fn design_metrics_agree_with_full_summary() {
    let mut rng = stream(&[16]);
    let p = EnergyParams::default();
    for _ in 0..20 {
        let x = random_sequence(&mut rng, 30);
        let (_, y) = fold::mfe(&x, &p);
        let full = fold::fold_summary(&x, &y, &p).unwrap();
        let fast = fold::design_metrics(&x, &y, &p).unwrap();
        assert!(rel_close(full.probability, fast.probability, 1e-12));
        assert_eq!(full.is_umfe, fast.is_umfe);
        assert!(full.is_mfe);
    }
}
