use std::path::Path;

use mosaic_core::config::load_config;
use mosaic_core::experiment::Setting;
use mosaic_core::indep::DindepKind;
use mosaic_core::mosaic::Scoring;
use mosaic_core::nn::{OutputActivation, Topology};
use mosaic_core::Standardization;

fn load(name: &str) -> mosaic_core::config::Config {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    load_config(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn every_shipped_config_loads() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 8);
}

#[test]
fn desk_grid_golden() {
    let c = load("artificial_desk.toml");
    assert_eq!(c.experiment.settings, vec![Setting::MultiPair, Setting::MultiEnv]);
    assert_eq!(c.experiment.widths, vec![4, 40]);
    assert_eq!(c.experiment.pair_counts, vec![10, 20, 30]);
    assert_eq!(c.experiment.mixings, 20);
    assert_eq!(c.experiment.measures, vec![DindepKind::DcorComplement, DindepKind::HsicPValue]);
    assert_eq!(c.experiment.topologies, vec![Topology::Structural, Topology::FullyConnected]);
    assert_eq!(c.mlp.output_activation, OutputActivation::Abs);
    assert_eq!(c.mlp.depth, 4);
    assert_eq!(c.train.standardization, Standardization::Pooled);
    assert_eq!(c.train.learning_rate, 0.01);
    assert_eq!(c.train.max_steps, 5000);
    assert_eq!(c.synth.n_per_pair, 512);
}

#[test]
fn full_scale_ensemble_golden() {
    let e = load("tcep_full.toml").ensemble;
    assert_eq!((e.n_models, e.retries), (300, 10));
    assert_eq!(e.set_size, [4, 32]);
    assert_eq!((e.thre_t, e.thre_v), (0.7, 0.7));
    assert_eq!(e.threshold_range, [0.65, 0.75]);
    assert_eq!(e.threshold_samples, 100);
    assert_eq!(e.scoring, Scoring::Margin);
    assert_eq!(e.measure, DindepKind::DcorComplement);
}

#[test]
fn reduced_configs() {
    let e = load("tcep_reduced.toml").ensemble;
    assert_eq!((e.n_models, e.retries), (50, 3));
    let e = load("pseudo_tcep.toml").ensemble;
    assert_eq!((e.n_models, e.retries), (20, 2));
    let c = load("multi_pair.toml");
    assert_eq!(c.experiment.pair_counts, vec![30]);
    assert_eq!(c.experiment.widths, vec![40]);
    let c = load("confounded.toml");
    assert!(c.experiment.confounded);
}
