use drumscribe::audio::LogMel;
use drumscribe::audio::{log_mel, Spectrogram};
use drumscribe::dataset::{toy_corpus, ToyCorpusConfig};
use drumscribe::model::gradcheck::{check_gradients, random_batch};
use drumscribe::model::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Batch, BatchSource, CropSource, LabeledExample, Mode, Model,
    ModelConfig, ModelError, TrainConfig, Trainer,
};
use ndarray::{s, Array2, Array3};

const VELOCITY_WEIGHT: f64 = 0.5;

fn to_f32(b: &Batch<f64>) -> Batch<f32> {
    Batch { inputs: b.inputs.mapv(|v| v as f32), onsets: b.onsets.mapv(|v| v as f32), velocities: b.velocities.mapv(|v| v as f32) }
}

#[test]
fn gradients_match_finite_differences() {
    let t0 = std::time::Instant::now();
    for seed in 1..=5 {
        let report = check_gradients(&ModelConfig::default(), seed, 2, 100, VELOCITY_WEIGHT).unwrap();
        assert_eq!(report.len(), Model::<f64>::init(ModelConfig::default(), 0).unwrap().params.len());
        for g in &report {
            assert!(g.err64 <= 1e-5, "seed {seed} {}: f64 relative error {:e}", g.name, g.err64);
            assert!(g.err32 <= 1e-3, "seed {seed} {}: f32 relative error {:e}", g.name, g.err32);
        }
        let worst = report.iter().map(|g| g.err64).fold(0.0, f64::max);
        eprintln!("seed {seed}: worst f64 error {worst:e} ({:?})", t0.elapsed());
    }
}

#[test]
fn zero_weights_give_chance_outputs() {
    let m = Model::<f32>::init(ModelConfig::default(), 0).unwrap().zeroed();
    let input = Array3::from_shape_fn((2, 30, 250), |(b, t, f)| ((b + t * f) % 7) as f32 - 3.0);
    for mode in [Mode::Eval, Mode::Train { dropout_seed: 4 }] {
        let out = m.forward(&input, mode).unwrap();
        assert!(out.onset_probs.iter().all(|&p| p == 0.5));
        assert!(out.velocities.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn eval_is_deterministic_and_keeps_time_resolution() {
    let m = Model::<f32>::init(ModelConfig::default(), 11).unwrap();
    let spec = Spectrogram { data: Array2::from_shape_fn((1200, 250), |(t, f)| ((t * 31 + f * 17) % 97) as f32 / 10.0 - 8.0) };
    let a = m.predict(&spec).unwrap();
    let b = m.predict(&spec).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.onset_probs.dim(), (1200, 7));
    assert_eq!(a.velocities.dim(), (1200, 7));
    assert!(a.onset_probs.iter().all(|&p| (0.0..=1.0).contains(&p)));
    // blocked inference agrees with one full-length pass
    let input = spec.data.clone().into_shape_with_order((1, 1200, 250)).unwrap();
    let full = m.forward(&input, Mode::Eval).unwrap();
    let probs = full.onset_probs.slice(s![0, .., ..]);
    let vel = full.velocities.slice(s![0, .., ..]);
    assert!(probs.iter().zip(&a.onset_probs).all(|(x, y)| (x - y).abs() < 1e-5));
    assert!(vel.iter().zip(&a.velocities).all(|(x, y)| (x - y).abs() < 1e-4));
}

#[test]
fn delaying_input_delays_outputs() {
    let mut m = Model::<f64>::init(ModelConfig::default(), 5).unwrap();
    let frames = 200;
    let k = 7;
    let x = random_batch(9, 1, frames, 250, 7).inputs;
    // running statistics that match the input, as after training
    let stats = m.forward(&x, Mode::Train { dropout_seed: 0 }).unwrap().state_update;
    for (name, v) in stats.values {
        m.state.get_mut(&name).assign(&v.into_dyn());
    }
    let mut delayed = Array3::from_elem((1, frames + k, 250), -13.8);
    delayed.slice_mut(s![.., k.., ..]).assign(&x);
    let a = m.forward(&x, Mode::Eval).unwrap();
    let b = m.forward(&delayed, Mode::Eval).unwrap();
    // the recurrent state forgets the extra leading rows geometrically
    for t in 80..frames - 3 {
        for c in 0..7 {
            assert!((a.onset_probs[[0, t, c]] - b.onset_probs[[0, t + k, c]]).abs() < 1e-4, "onset row {t}");
            assert!((a.velocities[[0, t, c]] - b.velocities[[0, t + k, c]]).abs() < 1e-4, "velocity row {t}");
        }
    }
}

#[test]
fn wrong_bin_count_is_rejected() {
    let m = Model::<f32>::init(ModelConfig::default(), 0).unwrap();
    let err = m.predict(&Spectrogram { data: Array2::zeros((10, 128)) }).unwrap_err();
    assert!(matches!(err, ModelError::BinMismatch { expected: 250, found: 128 }));
    let batch = to_f32(&random_batch(1, 1, 10, 64, 7));
    assert!(matches!(m.loss_and_grads(&batch, 0.5, 0), Err(ModelError::BinMismatch { .. })));
}

#[test]
fn zero_input_gives_zero_first_layer_gradients() {
    let m = Model::<f64>::init(ModelConfig::default(), 2).unwrap();
    let batch = Batch { inputs: Array3::zeros((2, 20, 250)), onsets: Array3::zeros((2, 20, 7)), velocities: Array3::zeros((2, 20, 7)) };
    let (_, grads, _) = m.loss_and_grads(&batch, VELOCITY_WEIGHT, 3).unwrap();
    for stack in ["onset", "velocity"] {
        assert!(grads.get(&format!("{stack}/conv1/w")).iter().all(|&g| g == 0.0));
    }
    // deeper layers still learn from the biases of the output layer
    assert!(grads.get("onset/out/b").iter().any(|&g| g != 0.0));
}

#[test]
fn gradients_are_deterministic() {
    let m = Model::<f32>::init(ModelConfig::default(), 8).unwrap();
    let batch = to_f32(&random_batch(4, 2, 40, 250, 7));
    let (la, ga, _) = m.loss_and_grads(&batch, VELOCITY_WEIGHT, 17).unwrap();
    let (lb, gb, _) = m.loss_and_grads(&batch, VELOCITY_WEIGHT, 17).unwrap();
    assert_eq!(la, lb);
    assert_eq!(ga, gb);
    let (lc, _, _) = m.loss_and_grads(&batch, VELOCITY_WEIGHT, 18).unwrap();
    assert_ne!(la, lc, "dropout masks follow the seed");
}

fn toy_examples(n: usize) -> Vec<LabeledExample> {
    let mel = LogMel::new(Default::default());
    toy_corpus(&ToyCorpusConfig { sequences: n, ..Default::default() })
        .iter()
        .map(|e| LabeledExample::from_audio(&e.audio, &e.track, &mel, 7).unwrap())
        .collect()
}

#[test]
fn checkpoint_resume_continues_identically() {
    let source = CropSource { examples: toy_examples(2), crop_frames: 40, seed: 3 };
    let config = TrainConfig { batch_size: 2, seed: 21, ..Default::default() };
    let mut trainer = Trainer::new(ModelConfig::default(), config).unwrap();
    trainer.run(&source, 3, |_, _| true).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&trainer.checkpoint(), &path).unwrap();
    let straight = trainer.run(&source, 13, |_, _| true).unwrap();

    let ck = load_checkpoint::<f32>(&path).unwrap();
    assert_eq!(ck.step, 3);
    let mut resumed = Trainer::from_checkpoint(ck);
    let again = resumed.run(&source, 13, |_, _| true).unwrap();
    assert_eq!(straight.len(), 10);
    assert_eq!(straight, again);
    assert_eq!(trainer, resumed);
}

#[test]
fn checkpoint_rejects_foreign_files() {
    let trainer = Trainer::new(ModelConfig::default(), TrainConfig::default()).unwrap();
    let mut bytes = Vec::new();
    write_checkpoint(&trainer.checkpoint(), &mut bytes).unwrap();
    assert_eq!(read_checkpoint::<f32>(&bytes).unwrap(), trainer.checkpoint());
    assert!(matches!(read_checkpoint::<f64>(&bytes), Err(ModelError::Checkpoint(_))));
    assert!(read_checkpoint::<f32>(&bytes[..100]).is_err());
    assert!(read_checkpoint::<f32>(b"RIFF....WAVEfmt ").is_err());
    // a header edited to a different architecture no longer matches its hash
    let mut patched = bytes.clone();
    let start = patched.windows(16).position(|w| w == b"\"lstm_units\":64,").unwrap();
    patched[start + 13..start + 15].copy_from_slice(b"32");
    assert!(matches!(read_checkpoint::<f32>(&patched), Err(ModelError::ConfigMismatch { .. })));
}

#[test]
fn non_finite_loss_aborts_training() {
    let mut trainer = Trainer::new(ModelConfig::default(), TrainConfig { batch_size: 1, ..Default::default() }).unwrap();
    let mut batch = to_f32(&random_batch(1, 1, 20, 250, 7));
    batch.velocities[[0, 0, 0]] = f32::NAN;
    batch.onsets[[0, 0, 0]] = 1.0;
    let before = trainer.clone();
    assert!(matches!(trainer.train_step(&batch), Err(ModelError::Diverged { step: 0, .. })));
    assert_eq!(trainer, before);
}

fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn loss_decreases_on_toy_corpus() {
    let source = CropSource { examples: toy_examples(4), crop_frames: 100, seed: 1 };
    let mut trainer = Trainer::new(ModelConfig::default(), TrainConfig { batch_size: 1, seed: 1, ..Default::default() }).unwrap();
    let rows = trainer.run(&source, 1001, |_, _| true).unwrap();
    let loss: Vec<f64> = rows.iter().map(|r| r.loss).collect();
    let early = median(&loss[..=100]);
    let late = median(&loss[900..=1000]);
    eprintln!("median loss {early} -> {late}");
    assert!(late < early);
}

#[test]
fn batches_are_a_function_of_the_step() {
    let source = CropSource { examples: toy_examples(3), crop_frames: 50, seed: 9 };
    let a = source.batch(5, 3).unwrap();
    assert_eq!(a, source.batch(5, 3).unwrap());
    assert_ne!(a, source.batch(6, 3).unwrap());
    assert_eq!(a.inputs.dim(), (3, 50, 250));
    let spec = log_mel(&toy_corpus(&ToyCorpusConfig::default())[0].audio).unwrap();
    assert_eq!(spec.bins(), 250);
}
