use depthcomp::model::{assemble_input, train, validation_rmse, Model, Sample};
use depthcomp::scene::{generate_scene, sparse_sample};
use depthcomp::{ModelConfig, PositionMode, SamplingSpec, SceneSpec, TrainConfig};

fn scene_sample(seed: u64) -> Sample {
    let scene = generate_scene(&SceneSpec::plane_world(64, 64, seed)).unwrap();
    let frame = sparse_sample(&scene.depth, &SamplingSpec::uniform(0.05, seed), 10.0).unwrap();
    let x = assemble_input(&scene.rgb, &frame, PositionMode::PixelCenter).unwrap();
    Sample::new(x, scene.depth.to_tensor()).unwrap()
}

#[test]
fn single_sample_overfit() {
    let data = vec![scene_sample(11)];
    let mut model = Model::new(ModelConfig::default()).unwrap();
    let before = validation_rmse(&model, &data).unwrap().unwrap();
    let cfg = TrainConfig { epochs: 500, batch_size: 1, ..TrainConfig::default() };
    let report = train(&mut model, &data, &[], &cfg, &mut |_| Ok(())).unwrap();
    assert_eq!(report.steps, 500);
    let after = validation_rmse(&model, &data).unwrap().unwrap();
    assert!(after < 0.1 * before, "rmse {before:.1} -> {after:.1} mm");
}
