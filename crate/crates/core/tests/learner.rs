use logitrank::constructions::{build_noisy_parity, random_isan, NoisyParitySpec};
use logitrank::learner::{reconstruct_exact, steal, LearnerConfig};
use logitrank::linalg::DEFAULT_RANK_TOL;
use logitrank::model::{load_model, save_model, tv_distance, Alphabet, TimeVaryingIsan};

const BUDGET: u128 = 1 << 20;

fn tv(a: &TimeVaryingIsan, b: &TimeVaryingIsan) -> f64 {
    tv_distance(
        &a.exact_distribution(BUDGET).unwrap(),
        &b.exact_distribution(BUDGET).unwrap(),
    )
    .unwrap()
}

#[test]
fn stolen_model_matches_target() {
    for seed in 0..4 {
        let m = random_isan(2, Alphabet::new(3).unwrap(), 5, seed, 1.0).unwrap();
        let res = steal(&m, &LearnerConfig::new(0.05, 2, seed)).unwrap();
        assert!(tv(&m, &res.model) < 1e-8, "seed {seed}");
        assert!(res.model.hidden_dim() <= 2 * 5);
    }
}

#[test]
fn stolen_parity_survives_a_file_roundtrip() {
    let spec = NoisyParitySpec::new(vec![1, 0, 1, 1], 0.15).unwrap();
    let m = build_noisy_parity(&spec).unwrap();
    let res = steal(&m, &LearnerConfig::new(0.1, 2, 4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("learned.lrk");
    save_model(&res.model, &serde_json::json!({"from": "test"}), &path).unwrap();
    let (back, prov) = load_model(&path).unwrap();
    assert_eq!(prov["from"], "test");
    assert_eq!(back, res.model);
    assert!(tv(&m, &back) < 1e-8);
}

#[test]
fn exact_reconstruction_on_larger_alphabet() {
    let m = random_isan(3, Alphabet::new(4).unwrap(), 4, 21, 1.2).unwrap();
    let r = reconstruct_exact(&m, DEFAULT_RANK_TOL, BUDGET).unwrap();
    assert!(tv(&m, &r) < 1e-8);
}
