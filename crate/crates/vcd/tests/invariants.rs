//! Cross-module invariants: a golden end-to-end caption decode checked
//! against a step-by-step trace, and the drift of the POPE answer
//! distribution toward the prior as distortion grows.

use rand::Rng;
use vcd::decoding::{decode_sequence, softmax, SamplingStrategy, VcdParams};
use vcd::distortion::{build_schedule, diffuse_to};
use vcd::rng::rng_from_seed;
use vcd::toymodel::{logits_caption, logits_pope, render_scene, CaptionScorer, SceneSpec, ToyModelSpec};
use vcd::Tensor;

/// Independent re-derivation of the contrastive distribution with plain
/// loops: softmax the original branch, keep tokens at or above beta times the
/// max, combine logits on the survivors, renormalize.
fn traced_distribution(lv: &[f64], ld: &[f64], alpha: f64, beta: f64) -> Vec<f64> {
    let max_logit = lv.iter().copied().filter(|x| x.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = lv
        .iter()
        .map(|&x| if x == f64::NEG_INFINITY { 0.0 } else { (x - max_logit).exp() })
        .collect();
    let z: f64 = exps.iter().sum();
    let probs_v: Vec<f64> = exps.iter().map(|e| e / z).collect();
    let threshold = beta * probs_v.iter().copied().fold(0.0f64, f64::max);

    let mut combined = vec![f64::NEG_INFINITY; lv.len()];
    for i in 0..lv.len() {
        if probs_v[i] >= threshold && lv[i].is_finite() {
            combined[i] = (1.0 + alpha) * lv[i] - alpha * ld[i];
        }
    }
    let max_c = combined.iter().copied().filter(|x| x.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = combined
        .iter()
        .map(|&x| if x == f64::NEG_INFINITY { 0.0 } else { (x - max_c).exp() })
        .collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

fn traced_inverse_cdf(probs: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last = i;
            cum += p;
            if u < cum {
                return i;
            }
        }
    }
    last
}

#[test]
fn golden_caption_decode_matches_trace() {
    let spec = ToyModelSpec::default_calibration();
    let scene = SceneSpec::new([0, 5, 11]);
    let v = render_scene(&scene, &spec, &mut rng_from_seed(7)).unwrap();
    let schedule = build_schedule(0.1, 999).unwrap();
    let vd = diffuse_to(&v, &schedule, 500, &mut rng_from_seed(8)).unwrap();
    let params = VcdParams { alpha: 1.0, beta: 0.1, noise_step_t: 500 };
    let scorer = CaptionScorer { spec: &spec };
    let mut rng = rng_from_seed(9);
    let tokens = decode_sequence(
        &scorer,
        &v,
        &vd,
        &[],
        &params,
        &SamplingStrategy::Direct,
        spec.num_objects() + 1,
        &mut rng,
    )
    .unwrap();

    // Step-by-step trace with the same rng draws.
    let mut trace_rng = rng_from_seed(9);
    let mut traced: Vec<usize> = Vec::new();
    for _ in 0..spec.num_objects() + 1 {
        let lv = logits_caption(&spec, &v, &traced).unwrap();
        let ld = logits_caption(&spec, &vd, &traced).unwrap();
        let dist = traced_distribution(&lv.0, &ld.0, params.alpha, params.beta);
        let token = traced_inverse_cdf(&dist, trace_rng.random());
        traced.push(token);
        if token == spec.eos_token() {
            break;
        }
    }
    assert_eq!(tokens, traced);

    // Frozen after the trace above first agreed with decode_sequence.
    let golden: Vec<usize> = vec![0, 11, 5, 22];
    assert_eq!(tokens, golden);
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum()
}

/// As distortion deepens, the answer distribution drifts away from the clean
/// one and the prior takes over: expected KL to the clean distribution is
/// non-decreasing in t, and p(YES) for an absent object whose prior-only
/// score is negative rises toward the noise-dominated level.
#[test]
fn distortion_amplifies_the_prior() {
    let spec = ToyModelSpec::default_calibration();
    let scene = SceneSpec::new([5, 6, 7]);
    let schedule = build_schedule(0.1, 999).unwrap();
    // alpha_bar decays as 0.9^t, so the transition lives at small t; the
    // grid samples it and the fully noised tail.
    let ts = [0usize, 5, 15, 40, 999];
    let seeds = 1000;
    let mut mean_kl = vec![0.0; ts.len()];
    let mut mean_yes = vec![0.0; ts.len()];
    for seed in 0..seeds {
        let mut rng = rng_from_seed(3000 + seed);
        let v0 = render_scene(&scene, &spec, &mut rng).unwrap();
        let p0 = softmax(&logits_pope(&spec, &v0, 5).unwrap()).unwrap();
        for (i, &t) in ts.iter().enumerate() {
            let vt = diffuse_to(&v0, &schedule, t, &mut rng).unwrap();
            let pt = softmax(&logits_pope(&spec, &vt, 5).unwrap()).unwrap();
            mean_kl[i] += kl(pt.probs(), p0.probs()) / seeds as f64;
            // Object 1 is absent and frequent (second-highest prior).
            let p_absent = softmax(&logits_pope(&spec, &vt, 1).unwrap()).unwrap();
            mean_yes[i] += p_absent.probs()[spec.yes_token()] / seeds as f64;
        }
    }
    for w in mean_kl.windows(2) {
        assert!(w[1] >= w[0] - 0.01, "KL not non-decreasing: {mean_kl:?}");
    }
    for w in mean_yes.windows(2) {
        assert!(w[1] >= w[0] - 0.01, "p(YES) not rising: {mean_yes:?}");
    }
    assert!(mean_yes[ts.len() - 1] > mean_yes[0] + 0.05);
}

/// Sanity anchor for the golden test inputs: rendering is deterministic per
/// seed and the distorted tensor differs from the clean one.
#[test]
fn golden_inputs_are_stable() {
    let spec = ToyModelSpec::default_calibration();
    let scene = SceneSpec::new([0, 5, 11]);
    let a = render_scene(&scene, &spec, &mut rng_from_seed(7)).unwrap();
    let b = render_scene(&scene, &spec, &mut rng_from_seed(7)).unwrap();
    assert_eq!(a.data(), b.data());
    let schedule = build_schedule(0.1, 999).unwrap();
    let vd = diffuse_to(&a, &schedule, 500, &mut rng_from_seed(8)).unwrap();
    assert_ne!(vd.data(), a.data());
    assert_eq!(vd.shape(), a.shape());
    let _: &Tensor = &vd;
}
