use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seegnet::model::{Ablations, ElectrodeInput, Model, ModelConfig, TrialBatch, TrialInput};

fn rel_close(a: &[f32], b: &[f32], tol: f32) -> bool {
    a.iter()
        .zip(b)
        .all(|(x, y)| (x - y).abs() <= tol * x.abs().max(y.abs()).max(1.0))
}

fn random_signal(r: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| r.random_range(-3.0..3.0)).collect()
}

fn random_mni(r: &mut ChaCha8Rng) -> [f64; 3] {
    [
        r.random_range(-90.0..90.0),
        r.random_range(-120.0..90.0),
        r.random_range(-70.0..80.0),
    ]
}

/// Batch with electrodes at `slots` of each trial and every other slot masked
/// and filled with `filler`.
fn batch(
    e_max: usize,
    slots: &[usize],
    signals: &[Vec<Vec<f32>>],
    mni: &[[f64; 3]],
    filler: &mut dyn FnMut() -> f32,
) -> TrialBatch {
    let n = signals[0][0].len();
    let b = signals.len();
    let mut tb = TrialBatch {
        e_max,
        n_samples: n,
        voltages: (0..b * e_max * n).map(|_| filler()).collect(),
        mask: vec![false; b * e_max],
        mni: vec![[1e6, -1e6, 1e6]; b * e_max],
        subjects: vec!["s".into(); b],
        targets: vec![0.0; b],
    };
    for (i, trial) in signals.iter().enumerate() {
        for (j, &slot) in slots.iter().enumerate() {
            let off = (i * e_max + slot) * n;
            tb.voltages[off..off + n].copy_from_slice(&trial[j]);
            tb.mask[i * e_max + slot] = true;
            tb.mni[i * e_max + slot] = mni[j];
        }
    }
    tb
}

#[test]
fn predictions_ignore_masked_electrodes() {
    let model = Model::<f32>::new(ModelConfig::default(), vec!["s".into()], 5).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(42);
    for instance in 0..100 {
        let n_present = r.random_range(1..=6);
        let mut slots: Vec<usize> = (0..20).collect();
        rand::seq::SliceRandom::shuffle(&mut slots[..], &mut r);
        slots.truncate(n_present);
        let tight = slots.iter().max().unwrap() + 1;
        let n_trials = r.random_range(1..=3);
        let signals: Vec<Vec<Vec<f32>>> = (0..n_trials)
            .map(|_| (0..n_present).map(|_| random_signal(&mut r, 600)).collect())
            .collect();
        let mni: Vec<[f64; 3]> = (0..n_present).map(|_| random_mni(&mut r)).collect();

        let plain = batch(tight, &slots, &signals, &mni, &mut || 0.0);
        let mut g = ChaCha8Rng::seed_from_u64(instance);
        let mut garbage = || {
            if g.random_bool(0.5) {
                f32::NAN
            } else {
                g.random_range(-1e4..1e4)
            }
        };
        let padded = batch(28, &slots, &signals, &mni, &mut garbage);

        let a = model.predict_std(&plain.inputs(&model).unwrap()).unwrap();
        let b = model.predict_std(&padded.inputs(&model).unwrap()).unwrap();
        assert!(rel_close(&a, &b, 1e-6), "instance {instance}: {a:?} vs {b:?}");

        // Train-mode batch statistics and gradients see only unmasked data too.
        let targets = vec![0.5f32; n_trials];
        let sq = |p: f32, t: f32| ((p - t) * (p - t) / 2.0, p - t);
        let ga = model
            .gradients(&plain.inputs(&model).unwrap(), &targets, sq, true)
            .unwrap();
        let gb = model
            .gradients(&padded.inputs(&model).unwrap(), &targets, sq, true)
            .unwrap();
        assert!(
            rel_close(&ga.grads, &gb.grads, 1e-6),
            "instance {instance}: gradients differ"
        );
        assert_eq!(ga.batch_stats, gb.batch_stats);
    }
}

fn small(ablate: Ablations) -> ModelConfig {
    ModelConfig {
        t_trial: 120,
        pool_window: 20,
        pool_stride: 10,
        e_max: 6,
        d: 8,
        head_hidden: 4,
        ablate,
        ..ModelConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Moving electrodes to other slots while permuting the matching blocks
    /// of trunk-projection columns leaves the space-ablated network's output
    /// unchanged.
    #[test]
    fn space_ablated_model_is_slot_equivariant(seed in 0u64..10_000, n_present in 1usize..=6) {
        let ablate = Ablations { as_: true, ..Ablations::default() };
        let cfg = small(ablate);
        let model = Model::<f32>::new(cfg.clone(), vec!["s".into()], seed).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let signals: Vec<Vec<f32>> = (0..n_present).map(|_| random_signal(&mut r, cfg.t_trial)).collect();
        let mni: Vec<[f64; 3]> = (0..n_present).map(|_| random_mni(&mut r)).collect();
        let mut perm: Vec<usize> = (0..cfg.e_max).collect();
        rand::seq::SliceRandom::shuffle(&mut perm[..], &mut r);

        let trial = |slot_of: &dyn Fn(usize) -> usize| TrialInput {
            head: 0,
            electrodes: (0..n_present)
                .map(|e| ElectrodeInput { slot: slot_of(e), signal: &signals[e], mni: mni[e] })
                .collect(),
        };
        let original = trial(&|e| e);
        let moved = trial(&|e| perm[e]);

        let mut permuted = model.clone();
        let block = cfg.n_tokens() * cfg.k;
        let cols = cfg.trunk_in();
        let w = model.params.slice("trunk.weight").unwrap().to_vec();
        let dst = permuted.params.slice_mut("trunk.weight").unwrap();
        for row in 0..cfg.d {
            for (slot, &to) in perm.iter().enumerate() {
                let src = row * cols + slot * block;
                let out = row * cols + to * block;
                dst[out..out + block].copy_from_slice(&w[src..src + block]);
            }
        }
        let a = model.predict_std(&[original]).unwrap();
        let b = permuted.predict_std(&[moved]).unwrap();
        prop_assert!(rel_close(&a, &b, 1e-5), "{:?} vs {:?}", a, b);
    }
}
