//! Problem to dataset to posterior, through the public API only.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tmsynth::sampler::{init_point, nuts_sample, LogDensity, NutsSettings, StickBreaking, TemperedPosterior};
use tmsynth::synthesis::{exact_k, make_dataset, neg_log_likelihood};
use tmsynth::utm::CodeParameter;
use tmsynth::{Dataset, SynthesisProblem};

#[test]
fn solution_code_has_zero_loss_and_uniform_code_does_not() {
    let problem = SynthesisProblem::detect_a(1, 4, 8).unwrap();
    let data = make_dataset(&problem, 60, 3).unwrap();
    let solution = CodeParameter::encode(&problem.solution().unwrap());
    let at_solution = neg_log_likelihood(&solution, &data).unwrap();
    assert!(at_solution.nl_n.abs() < 1e-12);
    assert_eq!(at_solution.clamped, 0);
    assert!(exact_k(&solution, &problem, 4).unwrap() < 1e-12);

    let uniform = CodeParameter::uniform(problem.layout().clone());
    let at_uniform = neg_log_likelihood(&uniform, &data).unwrap();
    assert!(at_uniform.nl_n > 1.0);
    assert!(exact_k(&uniform, &problem, 4).unwrap() > 0.0);
}

#[test]
fn dataset_text_round_trips() {
    let problem = SynthesisProblem::parity_check(1, 5, 42).unwrap();
    let data = make_dataset(&problem, 40, 11).unwrap();
    let back = Dataset::from_text(&data.to_text(&problem), &problem).unwrap();
    assert_eq!(back.pairs, data.pairs);
    assert_eq!(back.seed, data.seed);
}

#[test]
fn posterior_energy_matches_direct_likelihood() {
    let problem = SynthesisProblem::detect_a(1, 3, 4).unwrap();
    let data = make_dataset(&problem, 25, 9).unwrap();
    let mut post = TemperedPosterior::new(problem.layout().clone(), &data, 0.5).unwrap();
    let transform = StickBreaking::for_layout(problem.layout());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z = init_point(&transform, 1.0, &mut rng).unwrap();
    let mut grad = vec![0.0; post.dim()];
    let eval = post.evaluate(&z, &mut grad).unwrap();
    let w = CodeParameter::from_flat(problem.layout().clone(), post.code_at(&z)).unwrap();
    let direct = neg_log_likelihood(&w, &data).unwrap();
    assert!((eval.energy - direct.nl_n).abs() <= 1e-9 * direct.nl_n.max(1.0));
}

#[test]
fn short_chain_on_a_small_problem_is_well_behaved() {
    let problem = SynthesisProblem::detect_a(1, 3, 4).unwrap();
    let data = make_dataset(&problem, 25, 9).unwrap();
    let mut post = TemperedPosterior::new(problem.layout().clone(), &data, 1.0 / 25f64.ln()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let z0 = init_point(post.transform(), 1.0, &mut rng).unwrap();
    let settings = NutsSettings { samples: 100, burn_in: 100, ..NutsSettings::default() };
    let chain = nuts_sample(&mut post, &z0, &settings, &mut rng).unwrap();
    assert_eq!(chain.len(), 100);
    assert!(chain.energies.iter().all(|e| e.is_finite() && *e >= 0.0));
    assert!(chain.divergent_fraction() < 0.1);
    assert!(chain.mean_accept() > 0.5);
}
