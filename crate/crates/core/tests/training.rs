use premover_core::numerics::{AdamWState, HeadDims, ParamGrads, ParamSet};
use premover_core::simworld::{BackboneEmulation, EmulatorConfig, SuiteKind};
use premover_core::training::{batch_loss, episode_samples, train, Dataset, LossConfig, TrainConfig, TrainSample};

fn small_dataset(emu: &BackboneEmulation, episodes: std::ops::Range<usize>) -> Dataset {
    let mut groups = Vec::new();
    for ep in episodes {
        groups.extend(episode_samples(emu, 0, SuiteKind::Object, 1, ep, 16, 6).unwrap());
    }
    Dataset { groups }
}

fn dims(emu: &BackboneEmulation) -> HeadDims {
    HeadDims {
        d: emu.d(),
        h: 16,
        d_proj: 16,
    }
}

#[test]
fn zero_learning_rate_keeps_the_initialization() {
    let emu = BackboneEmulation::new(0, EmulatorConfig::default()).unwrap();
    let data = small_dataset(&emu, 0..2);
    let init = ParamSet::init(dims(&emu), 4);
    let cfg = TrainConfig {
        lr: 0.0,
        epochs: 2,
        ..TrainConfig::default()
    };
    let (trained, logs) = train(init.clone(), &data, &Dataset::default(), &cfg, |_, _| true).unwrap();
    assert_eq!(logs.len(), 2);
    assert!(trained.same_values(&init));
}

#[test]
fn overfitting_one_batch_never_raises_the_loss() {
    let emu = BackboneEmulation::new(0, EmulatorConfig::default()).unwrap();
    let data = small_dataset(&emu, 0..1);
    let batch: Vec<&[TrainSample]> = data.groups.iter().take(4).map(Vec::as_slice).collect();
    let cfg = LossConfig::default();
    let mut params = ParamSet::init(dims(&emu), 5);
    let mut opt = AdamWState::new(&params, 1e-4, 1e-4, 1.0);
    let mut losses = Vec::new();
    for _ in 0..20 {
        let mut grads = ParamGrads::zeros(params.dims());
        let (loss, _) = batch_loss(&params, &batch, &cfg, Some(&mut grads)).unwrap();
        losses.push(loss);
        params.grads = grads;
        opt.step(&mut params).unwrap();
    }
    assert!(losses.windows(2).all(|w| w[1] <= w[0]), "{losses:?}");
    assert!(losses[19] < losses[0]);
}

#[test]
fn training_is_deterministic() {
    let emu = BackboneEmulation::new(0, EmulatorConfig::default()).unwrap();
    let data = small_dataset(&emu, 0..2);
    let held = small_dataset(&emu, 2..3);
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let run = || train(ParamSet::init(dims(&emu), 1), &data, &held, &cfg, |_, _| true).unwrap();
    let (a, la) = run();
    let (b, lb) = run();
    assert!(a.same_values(&b));
    assert_eq!(la, lb);
    assert_eq!(data.content_hash(), small_dataset(&emu, 0..2).content_hash());
}

#[test]
fn unready_prefixes_only_train_through_the_gate() {
    let emu = BackboneEmulation::new(0, EmulatorConfig::default()).unwrap();
    let data = small_dataset(&emu, 0..1);
    let unready: Vec<Vec<TrainSample>> = data
        .groups
        .iter()
        .map(|g| g.iter().filter(|s| !s.y).cloned().collect::<Vec<_>>())
        .filter(|g| !g.is_empty())
        .collect();
    assert!(!unready.is_empty());
    let batch: Vec<&[TrainSample]> = unready.iter().map(Vec::as_slice).collect();
    let params = ParamSet::init(dims(&emu), 2);
    let focus_only = LossConfig {
        lambda_ready: 0.0,
        ..LossConfig::default()
    };
    let mut grads = ParamGrads::zeros(params.dims());
    batch_loss(&params, &batch, &focus_only, Some(&mut grads)).unwrap();
    assert!(grads.to_flat().iter().all(|&g| g == 0.0));

    let mut grads = ParamGrads::zeros(params.dims());
    batch_loss(&params, &batch, &LossConfig::default(), Some(&mut grads)).unwrap();
    assert!(grads.to_flat().iter().any(|&g| g != 0.0));
}

#[test]
fn training_leaves_the_emulator_untouched() {
    let emu = BackboneEmulation::new(0, EmulatorConfig::default()).unwrap();
    let before = emu.state_hash();
    let data = small_dataset(&emu, 0..2);
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    train(
        ParamSet::init(dims(&emu), 1),
        &data,
        &Dataset::default(),
        &cfg,
        |_, _| true,
    )
    .unwrap();
    assert_eq!(emu.state_hash(), before);
}
