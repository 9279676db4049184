//! Executable forms of the accuracy definitions for quality evaluators and of
//! the core-set argument: an evaluator that reproduces Dice exactly reveals the
//! hidden ground truth in `2·w·h` queries.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::datagen::{derive_seed, TrainingTuple};
use crate::error::{Error, Result};
use crate::metrics::dice;
use crate::raster::{BinaryMask, BoxPrompt, Image};

/// A scoring function `(predicted mask, image) → score` that counts its calls.
pub struct EvaluatorOracle<F> {
    score: F,
    calls: AtomicUsize,
}

impl<F: Fn(&BinaryMask, &Image) -> f64> EvaluatorOracle<F> {
    pub fn new(score: F) -> Self {
        Self {
            score,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn evaluate(&self, mask: &BinaryMask, image: &Image) -> f64 {
        self.calls.fetch_add(1, Ordering::Relaxed);
        (self.score)(mask, image)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

/// An oracle returning the exact Dice against `hidden`.
pub fn exact_dice_oracle(hidden: BinaryMask) -> EvaluatorOracle<impl Fn(&BinaryMask, &Image) -> f64> {
    EvaluatorOracle::new(move |m: &BinaryMask, _: &Image| dice(m, &hidden).expect("probe matches hidden size"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub mask: BinaryMask,
    pub calls: usize,
}

/// Recovers the mask an absolutely accurate Dice oracle is scoring against.
///
/// Each pixel is probed with the all-ones map and the all-ones map with that
/// pixel cleared; the pixel is foreground iff the full map scores higher. For a
/// nonempty hidden mask the two scores always differ, so a tie means the oracle
/// is not exact and is reported as [`Error::AmbiguousProbe`].
pub fn core_set_reconstruct<F>(oracle: &EvaluatorOracle<F>, image: &Image, w: usize, h: usize) -> Result<Reconstruction>
where
    F: Fn(&BinaryMask, &Image) -> f64,
{
    if (image.width(), image.height()) != (w, h) {
        return Err(Error::DimensionMismatch {
            expected: (w, h),
            found: image.dims(),
        });
    }
    let start = oracle.calls();
    let mut probe = BinaryMask::ones(w, h)?;
    let mut out = BinaryMask::zeros(w, h)?;
    for y in 0..h {
        for x in 0..w {
            let on = oracle.evaluate(&probe, image);
            probe.set(x, y, false);
            let off = oracle.evaluate(&probe, image);
            probe.set(x, y, true);
            if on == off {
                return Err(Error::AmbiguousProbe { x, y, score: on });
            }
            out.set(x, y, on > off);
        }
    }
    Ok(Reconstruction {
        mask: out,
        calls: oracle.calls() - start,
    })
}

/// Outcome of [`reconstruction_trials`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSummary {
    pub size: usize,
    pub trials: usize,
    pub noise: f64,
    pub exact: usize,
    /// Trials aborted because a probe pair scored equal.
    pub ambiguous: usize,
    pub recovery_rate: f64,
    /// Fraction of correctly recovered pixels over the non-aborted trials.
    pub pixel_accuracy: f64,
    pub calls_per_trial: Vec<usize>,
}

/// Random nonempty `size × size` mask with a per-mask foreground density.
pub fn random_hidden_mask<R: Rng + ?Sized>(rng: &mut R, size: usize) -> Result<BinaryMask> {
    let density = rng.random_range(0.02..0.9);
    let mut mask = BinaryMask::from_fn(size, size, |_, _| rng.random_bool(density))?;
    if mask.is_empty() {
        mask.set(rng.random_range(0..size), rng.random_range(0..size), true);
    }
    Ok(mask)
}

/// Reconstructs `trials` seeded random masks through a Dice oracle whose
/// answers carry uniform noise in `[-noise, noise]`.
pub fn reconstruction_trials(size: usize, trials: usize, noise: f64, seed: u64) -> Result<TrialSummary> {
    if size == 0 || trials == 0 {
        return Err(Error::invalid("size and trials must be positive"));
    }
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(Error::invalid(format!("noise {noise} must be a non-negative number")));
    }
    let image = Image::constant(size, size, 1, 0.0)?;
    let (mut exact, mut ambiguous, mut right, mut probed) = (0, 0, 0usize, 0usize);
    let mut calls_per_trial = Vec::with_capacity(trials);
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[trial as u64]));
        let hidden = random_hidden_mask(&mut rng, size)?;
        let noise_rng = Mutex::new(rng);
        let oracle = EvaluatorOracle::new(|m: &BinaryMask, _: &Image| {
            let d = dice(m, &hidden).expect("probe matches hidden size");
            if noise == 0.0 {
                d
            } else {
                d + noise * noise_rng.lock().expect("unpoisoned").random_range(-1.0..=1.0)
            }
        });
        match core_set_reconstruct(&oracle, &image, size, size) {
            Ok(r) => {
                exact += usize::from(r.mask == hidden);
                right += r
                    .mask
                    .values()
                    .iter()
                    .zip(hidden.values())
                    .filter(|(a, b)| a == b)
                    .count();
                probed += size * size;
            }
            Err(Error::AmbiguousProbe { .. }) => ambiguous += 1,
            Err(e) => return Err(e),
        }
        calls_per_trial.push(oracle.calls());
    }
    Ok(TrialSummary {
        size,
        trials,
        noise,
        exact,
        ambiguous,
        recovery_rate: exact as f64 / trials as f64,
        pixel_accuracy: if probed == 0 { 0.0 } else { right as f64 / probed as f64 },
        calls_per_trial,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbsoluteAccuracy {
    pub max_deviation: f64,
    pub worst_index: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Largest `|τ − π|` over `tuples`, where π is the tuple's true Dice.
pub fn check_absolute_accuracy(
    evaluator: impl Fn(&TrainingTuple) -> Result<f64>,
    tuples: &[TrainingTuple],
    tol: f64,
) -> Result<AbsoluteAccuracy> {
    if tuples.is_empty() {
        return Err(Error::invalid("no tuples to check"));
    }
    let mut worst = (f64::NEG_INFINITY, 0);
    for (i, t) in tuples.iter().enumerate() {
        let d = (evaluator(t)? - t.q_dice).abs();
        if d > worst.0 {
            worst = (d, i);
        }
    }
    Ok(AbsoluteAccuracy {
        max_deviation: worst.0,
        worst_index: worst.1,
        tolerance: tol,
        passed: worst.0 <= tol,
    })
}

/// Pairwise checks above this many scores run on a seeded subsample.
pub const PAIRWISE_CAP: usize = 2000;
const SUBSAMPLE_SEED: u64 = 0xBE7A;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelativeAccuracy {
    pub beta: f64,
    pub passed: bool,
    pub violated_pairs: usize,
    pub checked_pairs: usize,
    /// Number of scores examined; below the input length when subsampled.
    pub scores_used: usize,
    pub cap: usize,
}

/// Checks that every pair whose true scores differ by at least `beta` is
/// ordered the same way by the evaluator. `beta = 0` is plain relative accuracy.
pub fn check_beta_relative_accuracy(
    evaluator_scores: &[f64],
    true_scores: &[f64],
    beta: f64,
) -> Result<RelativeAccuracy> {
    if evaluator_scores.len() != true_scores.len() {
        return Err(Error::invalid(format!(
            "{} evaluator scores but {} true scores",
            evaluator_scores.len(),
            true_scores.len()
        )));
    }
    if !(beta >= 0.0) {
        return Err(Error::invalid(format!("beta {beta} must be non-negative")));
    }
    let n = true_scores.len();
    let picked: Vec<usize> = if n > PAIRWISE_CAP {
        let mut rng = ChaCha8Rng::seed_from_u64(SUBSAMPLE_SEED);
        let mut v = index::sample(&mut rng, n, PAIRWISE_CAP).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..n).collect()
    };
    let (mut violated, mut checked) = (0, 0);
    for (k, &i) in picked.iter().enumerate() {
        for &j in &picked[k + 1..] {
            let dp = true_scores[i] - true_scores[j];
            if dp == 0.0 || dp.abs() < beta {
                continue;
            }
            checked += 1;
            if !((evaluator_scores[i] - evaluator_scores[j]) * dp > 0.0) {
                violated += 1;
            }
        }
    }
    Ok(RelativeAccuracy {
        beta,
        passed: violated == 0,
        violated_pairs: violated,
        checked_pairs: checked,
        scores_used: picked.len(),
        cap: PAIRWISE_CAP,
    })
}

/// Scores each tuple's prediction by asking `segmenter` for the true mask and
/// computing Dice against it: one oracle call per tuple.
pub fn reduction_demo_a_to_b(
    segmenter: impl Fn(&Image, &BoxPrompt) -> BinaryMask,
    tuples: &[TrainingTuple],
) -> Result<Vec<f64>> {
    tuples
        .iter()
        .map(|t| dice(&t.pred_mask, &segmenter(&t.image, &t.prompt)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, SyntheticConfig};
    use proptest::prelude::*;

    fn mask3(bits: u16) -> BinaryMask {
        BinaryMask::from_fn(3, 3, |x, y| bits >> (y * 3 + x) & 1 == 1).unwrap()
    }

    #[test]
    fn uniform_mask_is_recovered_in_two_calls_per_pixel() {
        let hidden = BinaryMask::ones(4, 4).unwrap();
        let oracle = exact_dice_oracle(hidden.clone());
        let r = core_set_reconstruct(&oracle, &Image::constant(4, 4, 1, 0.0).unwrap(), 4, 4).unwrap();
        assert_eq!((r.mask, r.calls), (hidden, 32));
    }

    #[test]
    fn every_nonempty_3x3_mask_is_recovered() {
        let img = Image::constant(3, 3, 1, 0.5).unwrap();
        for bits in 1..512u16 {
            let hidden = mask3(bits);
            let oracle = exact_dice_oracle(hidden.clone());
            let r = core_set_reconstruct(&oracle, &img, 3, 3).unwrap();
            assert_eq!(r.mask, hidden, "bits {bits:09b}");
            assert_eq!(r.calls, 18);
        }
    }

    #[test]
    fn random_16x16_masks_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = Image::constant(16, 16, 1, 0.0).unwrap();
        for _ in 0..100 {
            let hidden = random_hidden_mask(&mut rng, 16).unwrap();
            let oracle = exact_dice_oracle(hidden.clone());
            let r = core_set_reconstruct(&oracle, &img, 16, 16).unwrap();
            assert_eq!((r.mask, r.calls), (hidden, 512));
        }
    }

    #[test]
    fn single_pixel_probe_separates_exhaustively() {
        // Fixing all other pixels, the variant that agrees with the hidden mask
        // at the probed pixel scores strictly higher.
        for bits in 1..512u16 {
            let hidden = mask3(bits);
            for p in 0..9 {
                let (x, y) = (p % 3, p / 3);
                let on = BinaryMask::ones(3, 3).unwrap();
                let mut off = on.clone();
                off.set(x, y, false);
                let (s_on, s_off) = (dice(&on, &hidden).unwrap(), dice(&off, &hidden).unwrap());
                if hidden.get(x, y) {
                    assert!(s_on > s_off);
                } else {
                    assert!(s_off > s_on);
                }
            }
        }
    }

    #[test]
    fn empty_base_map_cannot_separate_background() {
        // With an all-zeros base both variants score 0 at any background pixel.
        let hidden = mask3(0b1);
        let mut single = BinaryMask::zeros(3, 3).unwrap();
        single.set(2, 2, true);
        assert_eq!(
            dice(&single, &hidden).unwrap(),
            dice(&BinaryMask::zeros(3, 3).unwrap(), &hidden).unwrap()
        );
    }

    #[test]
    fn inexact_oracles_are_detected() {
        let img = Image::constant(3, 3, 1, 0.0).unwrap();
        let constant = EvaluatorOracle::new(|_: &BinaryMask, _: &Image| 0.5);
        assert!(matches!(
            core_set_reconstruct(&constant, &img, 3, 3),
            Err(Error::AmbiguousProbe { x: 0, y: 0, .. })
        ));
        assert_eq!(constant.calls(), 2);
        let empty = exact_dice_oracle(BinaryMask::zeros(3, 3).unwrap());
        assert!(core_set_reconstruct(&empty, &img, 3, 3).is_err());
        assert!(core_set_reconstruct(&constant, &img, 4, 3).is_err());
    }

    #[test]
    fn trial_summary_reports_recovery() {
        let clean = reconstruction_trials(8, 5, 0.0, 1).unwrap();
        assert_eq!((clean.exact, clean.recovery_rate, clean.pixel_accuracy), (5, 1.0, 1.0));
        assert_eq!(clean.calls_per_trial, vec![128; 5]);
        assert_eq!(clean, reconstruction_trials(8, 5, 0.0, 1).unwrap());
        let noisy = reconstruction_trials(8, 5, 0.05, 1).unwrap();
        assert!(noisy.recovery_rate < 1.0 && noisy.pixel_accuracy < 1.0);
        assert_eq!(noisy.calls_per_trial, vec![128; 5]);
        assert!(reconstruction_trials(8, 0, 0.0, 1).is_err());
    }

    fn small_tuples() -> Vec<TrainingTuple> {
        generate(&SyntheticConfig {
            n_images: 4,
            image_size: 40,
            seed: 11,
            ..SyntheticConfig::default()
        })
        .unwrap()
        .tuples
    }

    #[test]
    fn absolute_accuracy_examples() {
        let tuples = small_tuples();
        let exact = check_absolute_accuracy(|t| dice(&t.pred_mask, &t.gt_mask), &tuples, 0.0).unwrap();
        assert_eq!(exact.max_deviation, 0.0);
        assert!(exact.passed);
        let offset = check_absolute_accuracy(|t| Ok(t.q_dice + 0.1), &tuples, 0.05).unwrap();
        assert!((offset.max_deviation - 0.1).abs() < 1e-12);
        assert!(!offset.passed);
        assert!(check_absolute_accuracy(|t| Ok(t.q_dice), &[], 0.1).is_err());
    }

    #[test]
    fn relative_accuracy_examples() {
        let truth = [0.1, 0.4, 0.35, 0.9, 0.6];
        let shifted: Vec<f64> = truth.iter().map(|t| t + 0.05).collect();
        let reversed: Vec<f64> = truth.iter().map(|t| 1.0 - t).collect();
        for beta in [0.0, 0.04, 0.2, 0.5, 1.0] {
            assert!(check_beta_relative_accuracy(&truth, &truth, beta).unwrap().passed);
            assert!(check_beta_relative_accuracy(&shifted, &truth, beta).unwrap().passed);
        }
        let r = check_beta_relative_accuracy(&reversed, &truth, 0.0).unwrap();
        assert_eq!((r.passed, r.violated_pairs, r.checked_pairs), (false, 10, 10));
        // Only the 0.35/0.4 pair is closer than 0.1.
        assert_eq!(
            check_beta_relative_accuracy(&reversed, &truth, 0.1)
                .unwrap()
                .violated_pairs,
            9
        );
        assert!(check_beta_relative_accuracy(&truth, &truth[..2], 0.0).is_err());
        assert!(check_beta_relative_accuracy(&truth, &truth, -0.1).is_err());
    }

    #[test]
    fn long_sequences_are_subsampled() {
        let truth: Vec<f64> = (0..2500).map(|i| i as f64 / 2500.0).collect();
        let r = check_beta_relative_accuracy(&truth, &truth, 0.0).unwrap();
        assert_eq!(
            (r.scores_used, r.checked_pairs),
            (PAIRWISE_CAP, PAIRWISE_CAP * (PAIRWISE_CAP - 1) / 2)
        );
        assert_eq!(r, check_beta_relative_accuracy(&truth, &truth, 0.0).unwrap());
    }

    #[test]
    fn reduction_recovers_dice() {
        let tuples = small_tuples();
        let by_prompt =
            |_: &Image, p: &BoxPrompt| tuples.iter().find(|t| &t.prompt == p).unwrap().gt_mask.as_ref().clone();
        let scores = reduction_demo_a_to_b(by_prompt, &tuples).unwrap();
        for (s, t) in scores.iter().zip(&tuples) {
            assert_eq!(*s, dice(&t.pred_mask, &t.gt_mask).unwrap());
        }
        let perfect: Vec<TrainingTuple> = tuples
            .iter()
            .map(|t| TrainingTuple {
                pred_mask: t.gt_mask.as_ref().clone(),
                ..t.clone()
            })
            .collect();
        assert!(reduction_demo_a_to_b(by_prompt, &perfect)
            .unwrap()
            .iter()
            .all(|&s| s == 1.0));
        let disjoint = |i: &Image, p: &BoxPrompt| {
            let mut inv = by_prompt(i, p);
            for v in inv.values_mut() {
                *v ^= 1;
            }
            inv
        };
        assert!(reduction_demo_a_to_b(disjoint, &perfect)
            .unwrap()
            .iter()
            .all(|&s| s == 0.0));
    }

    fn arb_scores() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..40).prop_flat_map(|n| {
            (
                proptest::collection::vec(0.0..1.0f64, n),
                proptest::collection::vec(0.0..1.0f64, n),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn larger_beta_only_removes_violations((tau, pi) in arb_scores(), b1 in 0.0..0.6f64, gap in 0.0..0.4f64) {
            let lo = check_beta_relative_accuracy(&tau, &pi, b1).unwrap();
            let hi = check_beta_relative_accuracy(&tau, &pi, b1 + gap).unwrap();
            prop_assert!(hi.violated_pairs <= lo.violated_pairs);
            prop_assert!(!lo.passed || hi.passed);
        }

        #[test]
        fn increasing_transforms_do_not_change_the_verdict((tau, pi) in arb_scores(), beta in 0.0..0.5f64) {
            let warped: Vec<f64> = tau.iter().map(|t| (4.0 * t).exp() - 7.0).collect();
            let a = check_beta_relative_accuracy(&tau, &pi, beta).unwrap();
            let b = check_beta_relative_accuracy(&warped, &pi, beta).unwrap();
            prop_assert_eq!((a.passed, a.violated_pairs), (b.passed, b.violated_pairs));
        }

        #[test]
        fn truth_always_passes((_, pi) in arb_scores(), beta in 0.0..1.0f64) {
            prop_assert!(check_beta_relative_accuracy(&pi, &pi, beta).unwrap().passed);
        }
    }
}
