use std::path::Path;

use nudgenet::config::PipelineConfig;
use nudgenet::error::AppError;
use nudgenet::formats::*;
use nudgenet::pipeline;
use nudgenet_core::dynamics::Trajectory;
use nudgenet_core::nudging::{ObservationOperator, ObservationSeries};
use nudgenet_core::resnet::{box_init, InitScheme, ResNetArch};
use nudgenet_core::trainer::{Normalizer, TrainedModel};

fn small_config() -> PipelineConfig {
    PipelineConfig::from_toml("[ensemble]\nn_refs = 3\nhorizon = 0.5\n\n[dataset]\nwindows = 4\n")
        .unwrap()
}

fn awkward_trajectory() -> Trajectory {
    let times = vec![0.0, 0.1, 0.30000000000000004, 1.0];
    let data = vec![
        1.0,
        -2.5,
        1e300,
        0.1,
        0.2,
        0.3,
        -0.0,
        5e-324,
        7.0,
        1.0 / 3.0,
        2.0,
        3.0,
    ];
    Trajectory::from_parts(3, times, data).unwrap()
}

#[test]
fn trajectory_binary_and_csv_round_trip_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let t = awkward_trajectory();
    let bytes = trajectory_to_bytes(&t);
    let back = trajectory_from_bytes(&bytes, Path::new("x")).unwrap();
    assert_eq!(back, t);
    let p = tmp.path().join("a/t.csv");
    write_trajectory_csv(&p, &t).unwrap();
    let back = read_trajectory(&p).unwrap();
    assert_eq!(back.times(), t.times());
    for (a, b) in back.data().iter().zip(t.data()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn corrupt_inputs_are_format_errors() {
    let t = awkward_trajectory();
    let mut bytes = trajectory_to_bytes(&t);
    bytes[0] ^= 1;
    assert!(matches!(
        trajectory_from_bytes(&bytes, Path::new("x")),
        Err(AppError::Format { .. })
    ));
    let bytes = trajectory_to_bytes(&t);
    let cut = &bytes[..bytes.len() - 3];
    assert!(matches!(
        trajectory_from_bytes(cut, Path::new("x")),
        Err(AppError::Format { .. })
    ));
    assert!(matches!(
        dataset_from_bytes(&bytes, Path::new("x")),
        Err(AppError::Format { .. })
    ));
}

#[test]
fn ensemble_round_trip() {
    let t = awkward_trajectory();
    let bytes = ensemble_to_bytes(&[4, 9], &[t.clone(), t.shifted(1.0)]);
    let (ids, trajs) = ensemble_from_bytes(&bytes, Path::new("x")).unwrap();
    assert_eq!(ids, vec![4, 9]);
    assert_eq!(trajs[0], t);
    assert_eq!(trajs[1], t.shifted(1.0));
}

#[test]
fn observations_round_trip_through_sidecar() {
    let tmp = tempfile::tempdir().unwrap();
    let t = Trajectory::from_parts(
        3,
        vec![0.0, 0.1, 0.2],
        (0..9).map(|i| i as f64 / 7.0).collect(),
    )
    .unwrap();
    let op = ObservationOperator::new(vec![1, 3], 3).unwrap();
    let obs = ObservationSeries::from_trajectory(&t, op).unwrap();
    let p = tmp.path().join("obs.csv");
    write_observations_csv(&p, &obs).unwrap();
    let side = ObservationSidecar {
        observed_indices: vec![1, 3],
        state_dim: 3,
        delta: 0.1,
        mu: None,
        seed: None,
        reference_hash: None,
    };
    let back = read_observations_csv(&p, &side).unwrap();
    assert_eq!(back.times(), obs.times());
    assert_eq!(back.values(), obs.values());
    let wrong = ObservationSidecar {
        observed_indices: vec![2, 3],
        ..side
    };
    assert!(read_observations_csv(&p, &wrong).is_err());
}

#[test]
fn dataset_round_trip_keeps_metadata_and_blocks() {
    let cfg = small_config();
    let ens = pipeline::training_ensemble(&cfg).unwrap();
    let ds = pipeline::dataset(&cfg, &ens).unwrap();
    assert_eq!(ds.len(), 12);
    let bytes = dataset_to_bytes(&ds);
    let back = dataset_from_bytes(&bytes, Path::new("x")).unwrap();
    assert_eq!(back, ds);
    assert_eq!(
        back.meta.provenance,
        format!("config sha256 {}", cfg.hash())
    );
    let block = dataset_data_block(&bytes, Path::new("x")).unwrap();
    assert_eq!(block.len(), 8 * (ds.inputs().len() + ds.outputs().len()));
}

#[test]
fn model_round_trip() {
    let arch = ResNetArch::uniform(4, 6, 2, 3).unwrap();
    let params = box_init(&arch, 3, InitScheme::Box);
    let model = TrainedModel {
        arch: arch.clone(),
        params,
        normalizer: Normalizer::identity(4, 3),
    };
    let header = ModelHeader {
        arch,
        normalizer: model.normalizer.clone(),
        component: Some(2),
        dataset_hash: "abc".into(),
        init: "box".into(),
        training: serde_json::json!({"max_iters": 5}),
        param_count: model.params.values.len(),
    };
    let bytes = model_to_bytes(&model, &header);
    let (back, h) = model_from_bytes(&bytes, Path::new("m")).unwrap();
    assert_eq!(back.params, model.params);
    assert_eq!(h.component, Some(2));
    let x = [0.3, -1.0, 2.0, 0.5];
    assert_eq!(back.predict(&x).unwrap(), model.predict(&x).unwrap());
    let block = model_params_block(&bytes, Path::new("m")).unwrap();
    assert_eq!(block.len(), 8 * model.params.values.len());
}
