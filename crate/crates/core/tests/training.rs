use fmamba::losses::LossWeights;
use fmamba::synthetic::scene_pair;
use fmamba::train::{loss_and_grad, train_toy, TrainConfig};
use fmamba::{Error, Model, ModelConfig};

fn short(steps: usize) -> TrainConfig {
    TrainConfig { steps, ..TrainConfig::default() }
}

#[test]
fn same_seed_gives_identical_trace_and_weights() {
    let pairs = [scene_pair(32, 32, 1), scene_pair(32, 32, 2)];
    let run = || {
        let mut m = Model::init(ModelConfig::micro()).unwrap();
        let trace = train_toy(&mut m, &pairs, &short(6), |_, _| {}).unwrap();
        (m, trace)
    };
    let (m1, t1) = run();
    let (m2, t2) = run();
    assert_eq!(t1, t2);
    assert_eq!(m1, m2);
    assert_ne!(m1, Model::init(ModelConfig::micro()).unwrap());
}

#[test]
fn callback_sees_every_step_before_update() {
    let pairs = [scene_pair(32, 32, 3)];
    let mut m = Model::init(ModelConfig::micro()).unwrap();
    let start = Model::init(ModelConfig::micro()).unwrap();
    let mut seen = Vec::new();
    let trace = train_toy(&mut m, &pairs, &short(4), |i, b| seen.push((i, b.total))).unwrap();
    assert_eq!(seen.iter().map(|s| s.0).collect::<Vec<_>>(), [1, 2, 3, 4]);
    let (first, _) = loss_and_grad(&start, &pairs[0].0, &pairs[0].1, LossWeights::DEFAULT).unwrap();
    assert_eq!(first.total, trace[0].total);
    assert_eq!(seen[0].1, trace[0].total);
}

#[test]
fn bad_training_inputs() {
    let mut m = Model::init(ModelConfig::micro()).unwrap();
    assert!(matches!(train_toy(&mut m, &[], &short(3), |_, _| {}), Err(Error::Empty(_))));
    let pairs = [scene_pair(32, 32, 0)];
    assert!(matches!(train_toy(&mut m, &pairs, &short(0), |_, _| {}), Err(Error::Config(_))));
    let mut wild = TrainConfig::default();
    wild.steps = 5;
    wild.adam.lr = 1e300;
    assert!(train_toy(&mut m, &pairs, &wild, |_, _| {}).is_err());
}
