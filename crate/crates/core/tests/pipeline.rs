//! End-to-end checks on small generated datasets.

use std::path::Path;

use scvae::diffcore::Graph;
use scvae::losses::reconstruction;
use scvae::mesh::TriMesh;
use scvae::model::{LatentStats, MeshVae};
use scvae::torusgen::{generate_dataset, DatasetManifest, FactorRanges, Split};
use scvae::trainer::{evaluate, init_model, train, EvalOptions, TrainConfig};

fn dataset(dir: &Path, count: usize) -> DatasetManifest {
    generate_dataset(count, &FactorRanges::default(), (32, 32), 3, dir).unwrap()
}

fn small_eval() -> EvalOptions {
    EvalOptions {
        nna_count: 6,
        cd_points: 64,
        emd_points: 32,
        volume_bins: 2,
        shapes_per_bin: 3,
        ..Default::default()
    }
}

fn train_reconstruction(model: &MeshVae, meshes: &[TriMesh]) -> f64 {
    let refs: Vec<&TriMesh> = meshes.iter().collect();
    let x = model.prepare(&refs).unwrap();
    let mut g = Graph::new();
    let out = model.forward(&mut g, x.clone(), None).unwrap();
    reconstruction(x.data(), g.value(out.x_hat).data()).unwrap().value
}

#[test]
fn reconstruction_falls_over_five_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), 64);
    let cfg = TrainConfig {
        epochs: 5,
        ..Default::default()
    };
    let (untrained, train_meshes) = init_model(&manifest, &cfg).unwrap();
    let mut series = vec![train_reconstruction(&untrained, &train_meshes)];
    let out = train(&manifest, &cfg, None).unwrap();
    series.extend(out.log.epochs.iter().map(|r| r.train.reconstruction));
    let falls = series.windows(2).filter(|w| w[1] < w[0]).count();
    assert!(falls >= 4, "reconstruction series {series:?}");
    assert_eq!(out.log.epochs.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
}

#[test]
fn same_seed_gives_identical_parameters_and_logs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), 40);
    let cfg = TrainConfig {
        epochs: 2,
        seed: 11,
        ..Default::default()
    };
    let a = train(&manifest, &cfg, None).unwrap();
    let b = train(&manifest, &cfg, None).unwrap();
    assert_eq!(a.final_model.params().to_named(), b.final_model.params().to_named());
    assert_eq!(a.log.to_csv(), b.log.to_csv());
    assert_eq!(a.final_model.to_checkpoint_json().unwrap(), b.final_model.to_checkpoint_json().unwrap());
}

#[test]
fn checkpoint_round_trip_evaluates_identically() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(&dir.path().join("data"), 100);
    let cfg = TrainConfig {
        epochs: 1,
        ..Default::default()
    };
    let out_dir = dir.path().join("run");
    let out = train(&manifest, &cfg, Some(&out_dir)).unwrap();
    for name in ["config.json", "final.json", "best.json", "train_log.csv"] {
        assert!(out_dir.join(name).exists(), "{name} missing");
    }
    let loaded = MeshVae::load(&out_dir.join("final.json")).unwrap();
    let opts = small_eval();
    let direct = evaluate(&out.final_model, &manifest, Split::Test, &opts).unwrap();
    let reloaded = evaluate(&loaded, &manifest, Split::Test, &opts).unwrap();
    assert_eq!(direct, reloaded);
    assert!(direct.is_finite(), "{direct:?}");
}

#[test]
fn untrained_model_has_low_sap() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), 100);
    let (mut model, train_meshes) = init_model(&manifest, &TrainConfig::default()).unwrap();
    let refs: Vec<&TriMesh> = train_meshes.iter().collect();
    let mus: Vec<Vec<f64>> = model.encode(&refs, None).unwrap().into_iter().map(|c| c.mu).collect();
    model.set_latent_stats(LatentStats::fit(&mus).unwrap()).unwrap();
    let report = evaluate(&model, &manifest, Split::Test, &small_eval()).unwrap();
    assert!(report.sap_mean < 0.1, "sap {}", report.sap_mean);
    assert!(report.is_finite());
}

#[test]
fn evaluate_needs_a_trained_model() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), 20);
    let (model, _) = init_model(&manifest, &TrainConfig::default()).unwrap();
    assert!(evaluate(&model, &manifest, Split::Test, &small_eval()).is_err());
}
