use comatch::cotrain::Algorithm;
use comatch::lab::{run_experiment, ExperimentConfig, ModelSpec};

#[test]
fn standard_on_clean_synthetic_labels_reaches_95_percent() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::synth_example("clean", Algorithm::Standard);
    cfg.out_dir = tmp.path().to_path_buf();
    cfg.save_checkpoints = false;
    cfg.noise.epsilon = 0.0;
    cfg.model = ModelSpec::Mlp {
        hidden_dims: vec![256],
        init_seed: None,
    };
    cfg.train.epochs = 20;
    cfg.train.lr_decay_start = 10;
    cfg.train.lr = 0.001;
    let summary = run_experiment(&cfg).unwrap();
    let last = summary.final_test_acc.unwrap();
    assert!(last >= 0.95, "final clean accuracy {last}");
    assert_eq!(summary.rows.last().unwrap().label_precision, Some(1.0));
}
