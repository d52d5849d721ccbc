use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use syngen::evaluation::{evaluate, exact_match_corpus};
use syngen::inference::predict_corpus;
use syngen::synthetic::{generate, synthetic_run_config, SyntheticConfig, SyntheticDataset};
use syngen::training::{sample_batch, total_loss, train};
use syngen::{RunConfig, ScorerModel};

fn small() -> (SyntheticDataset, RunConfig) {
    let ds = generate(&SyntheticConfig { concepts: 40, documents: 60, ..SyntheticConfig::default() }).unwrap();
    let cfg = RunConfig { epochs: 40, negative_samples: 5000, ..synthetic_run_config() };
    (ds, cfg)
}

#[test]
fn training_lowers_loss_on_a_fixed_batch() {
    let (ds, cfg) = small();
    let run = train(&ds.dictionary, &ds.corpus, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch = sample_batch(&ds.dictionary, &run.pool, 64, cfg.noise_sigma, cfg.dim, &mut rng).unwrap();
    let before = total_loss(&ScorerModel::new(&cfg).unwrap(), &batch, &cfg).unwrap();
    let after = total_loss(&run.model, &batch, &cfg).unwrap();
    assert!(after.classification < before.classification, "{} -> {}", before.classification, after.classification);
    assert_eq!(run.log.len(), cfg.epochs);
}

#[test]
fn baseline_recall_is_dictionary_coverage() {
    let (ds, _) = small();
    let in_dict: HashSet<&str> = ds.dictionary.surfaces().collect();
    let mentions: Vec<&str> = ds.gold.iter().flat_map(|d| d.spans.iter().map(|s| s.text.as_str())).collect();
    let covered = mentions.iter().filter(|m| in_dict.contains(*m)).count();
    let preds = exact_match_corpus(&ds.dictionary, &ds.corpus, true).unwrap();
    let score = evaluate(&preds, &ds.gold).unwrap();
    assert_eq!(score.tp, covered);
    assert!((score.recall - covered as f64 / mentions.len() as f64).abs() < 1e-12);
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let (ds, cfg) = small();
    let cfg = RunConfig { epochs: 5, ..cfg };
    let run = train(&ds.dictionary, &ds.corpus, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    run.model.save(&path).unwrap();
    let loaded = ScorerModel::load(&path).unwrap();
    assert_eq!(loaded.to_json().unwrap(), run.model.to_json().unwrap());
    assert_eq!(
        predict_corpus(&loaded, &ds.corpus, 0.5, 8).unwrap(),
        predict_corpus(&run.model, &ds.corpus, 0.5, 8).unwrap()
    );
}
