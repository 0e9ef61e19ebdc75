//! A deterministic synthetic vision-conditioned next-token model.
//!
//! The model scores tokens log-linearly from three channels: visual evidence
//! read off the scene tensor, a frequency prior per object, and co-occurrence
//! coupling between objects. The prior and co-occurrence channels are the
//! bias knobs; cranking them up makes the model hallucinate frequent and
//! correlated objects once the visual channel is drowned in noise, which is
//! exactly the failure mode the contrastive rule is meant to correct.

use std::collections::BTreeSet;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoding::{Logits, NextTokenScorer, TokenId};
use crate::rng::standard_normal;
use crate::tensor::Tensor;
use crate::{Result, VcdError};

/// Standard deviation of the per-element jitter added by [`render_scene`].
/// Nonzero so exactly tied logits cannot occur.
pub const JITTER_STD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModelSpec {
    num_objects: usize,
    prior_freq: Vec<f64>,
    /// Row-major `m x m`, symmetric, zero diagonal.
    cooc: Vec<f64>,
    pub w_visual: f64,
    pub w_prior: f64,
    pub w_cooc: f64,
    pub decision_offset: f64,
}

impl ToyModelSpec {
    pub fn new(
        prior_freq: Vec<f64>,
        cooc_pairs: &[(usize, usize, f64)],
        w_visual: f64,
        w_prior: f64,
        w_cooc: f64,
        decision_offset: f64,
    ) -> Result<Self> {
        let m = prior_freq.len();
        if m == 0 {
            return Err(VcdError::param("num_objects", "need at least one object"));
        }
        if prior_freq.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(VcdError::param("prior_freq", "entries must lie in (0,1)"));
        }
        let mut cooc = vec![0.0; m * m];
        for &(i, j, w) in cooc_pairs {
            if i >= m || j >= m {
                return Err(VcdError::param("cooc_pairs", format!("object id out of range: ({i},{j})")));
            }
            if i == j {
                return Err(VcdError::param("cooc_pairs", "diagonal entries must stay zero"));
            }
            if w < 0.0 {
                return Err(VcdError::param("cooc_pairs", "weights must be >= 0"));
            }
            cooc[i * m + j] = w;
            cooc[j * m + i] = w;
        }
        Ok(ToyModelSpec {
            num_objects: m,
            prior_freq,
            cooc,
            w_visual,
            w_prior,
            w_cooc,
            decision_offset,
        })
    }

    /// The calibration used throughout the experiments: 20 objects, a Zipf
    /// frequency profile, and five correlated pairs that couple frequent
    /// objects to rare partners.
    pub fn default_calibration() -> Self {
        let m = 20;
        let prior_freq: Vec<f64> = (0..m).map(|i| 0.9 / (i + 1) as f64).collect();
        let pairs: Vec<(usize, usize, f64)> = [(0, 11), (1, 13), (2, 15), (3, 17), (4, 19)]
            .iter()
            .map(|&(a, b)| (a, b, 1.5))
            .collect();
        ToyModelSpec::new(prior_freq, &pairs, 4.0, 1.5, 1.5, 2.0).unwrap()
    }

    pub fn num_objects(&self) -> usize {
        self.num_objects
    }

    pub fn prior_freq(&self) -> &[f64] {
        &self.prior_freq
    }

    pub fn cooc(&self, i: usize, j: usize) -> f64 {
        self.cooc[i * self.num_objects + j]
    }

    /// Object ids coupled to `obj` with positive co-occurrence weight.
    pub fn partners(&self, obj: usize) -> Vec<usize> {
        (0..self.num_objects).filter(|&j| self.cooc(obj, j) > 0.0).collect()
    }

    // Vocabulary layout: object tokens, then YES, NO, EOS.
    pub fn vocab_size(&self) -> usize {
        self.num_objects + 3
    }

    pub fn yes_token(&self) -> TokenId {
        self.num_objects
    }

    pub fn no_token(&self) -> TokenId {
        self.num_objects + 1
    }

    pub fn eos_token(&self) -> TokenId {
        self.num_objects + 2
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ToyModelConfig = serde_json::from_str(&text)
            .map_err(|e| VcdError::Config(format!("{}: {e}", path.display())))?;
        cfg.build()
    }

    pub fn to_config(&self) -> ToyModelConfig {
        let mut cooc_pairs = Vec::new();
        for i in 0..self.num_objects {
            for j in (i + 1)..self.num_objects {
                let w = self.cooc(i, j);
                if w > 0.0 {
                    cooc_pairs.push((i, j, w));
                }
            }
        }
        ToyModelConfig {
            num_objects: self.num_objects,
            prior_freq: self.prior_freq.clone(),
            cooc_pairs,
            weights: ChannelWeights {
                visual: self.w_visual,
                prior: self.w_prior,
                cooc: self.w_cooc,
            },
            decision_offset: self.decision_offset,
            seed: None,
        }
    }
}

/// On-disk form of a model spec. Keys: `num_objects`, `prior_freq`,
/// `cooc_pairs` (triples `[i, j, weight]`), `weights`
/// (`{visual, prior, cooc}`), `decision_offset`, optional `seed`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyModelConfig {
    pub num_objects: usize,
    pub prior_freq: Vec<f64>,
    pub cooc_pairs: Vec<(usize, usize, f64)>,
    pub weights: ChannelWeights,
    pub decision_offset: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelWeights {
    pub visual: f64,
    pub prior: f64,
    pub cooc: f64,
}

impl ToyModelConfig {
    pub fn build(&self) -> Result<ToyModelSpec> {
        if self.prior_freq.len() != self.num_objects {
            return Err(VcdError::Config(format!(
                "num_objects is {} but prior_freq has {} entries",
                self.num_objects,
                self.prior_freq.len()
            )));
        }
        ToyModelSpec::new(
            self.prior_freq.clone(),
            &self.cooc_pairs,
            self.weights.visual,
            self.weights.prior,
            self.weights.cooc,
            self.decision_offset,
        )
    }
}

/// Ground-truth object annotations for one synthetic image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub present: BTreeSet<usize>,
}

impl SceneSpec {
    pub fn new(present: impl IntoIterator<Item = usize>) -> Self {
        SceneSpec {
            present: present.into_iter().collect(),
        }
    }
}

/// Scene feature vector: 1 where an object is present, 0 where absent, plus
/// small Gaussian jitter.
pub fn render_scene(scene: &SceneSpec, spec: &ToyModelSpec, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let m = spec.num_objects();
    if let Some(&max) = scene.present.iter().next_back() {
        if max >= m {
            return Err(VcdError::param("scene", format!("object id {max} out of range")));
        }
    }
    let data = (0..m)
        .map(|i| {
            let base = if scene.present.contains(&i) { 1.0 } else { 0.0 };
            base + JITTER_STD * standard_normal(rng)
        })
        .collect();
    Tensor::new(vec![m], data)
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Binary existence query: scores YES against NO for one object. All other
/// vocabulary entries are masked.
pub fn logits_pope(spec: &ToyModelSpec, v: &Tensor, query_object: usize) -> Result<Logits> {
    let m = spec.num_objects();
    if query_object >= m {
        return Err(VcdError::param("query-object", format!("{query_object} out of range (m={m})")));
    }
    if v.len() != m {
        return Err(VcdError::Shape(format!("visual tensor has {} elements, expected {m}", v.len())));
    }
    let q = query_object;
    let cooc_term: f64 = (0..m).map(|j| v.data()[j] * spec.cooc(j, q)).sum();
    let l_yes = spec.w_visual * v.data()[q]
        + spec.w_prior * logit(spec.prior_freq[q])
        + spec.w_cooc * cooc_term
        - spec.decision_offset;
    let mut values = vec![f64::NEG_INFINITY; spec.vocab_size()];
    values[spec.yes_token()] = l_yes;
    values[spec.no_token()] = 0.0;
    Ok(Logits(values))
}

/// Captioning head: scores every not-yet-mentioned object against ending the
/// caption. Already-mentioned objects are masked; the co-occurrence channel
/// here conditions on the emitted prefix, not on the image.
pub fn logits_caption(spec: &ToyModelSpec, v: &Tensor, prefix: &[TokenId]) -> Result<Logits> {
    let m = spec.num_objects();
    if v.len() != m {
        return Err(VcdError::Shape(format!("visual tensor has {} elements, expected {m}", v.len())));
    }
    if let Some(&bad) = prefix.iter().find(|&&t| t >= m) {
        return Err(VcdError::param("prefix", format!("token {bad} is not an object token")));
    }
    let mentioned: BTreeSet<TokenId> = prefix.iter().copied().collect();
    let mut values = vec![f64::NEG_INFINITY; spec.vocab_size()];
    for (y, value) in values.iter_mut().enumerate().take(m) {
        if mentioned.contains(&y) {
            continue;
        }
        let cooc_term: f64 = prefix.iter().map(|&o| spec.cooc(o, y)).sum();
        *value = spec.w_visual * v.data()[y]
            + spec.w_prior * logit(spec.prior_freq[y])
            + spec.w_cooc * cooc_term;
    }
    values[spec.eos_token()] = 0.0;
    Ok(Logits(values))
}

/// Scorer adapter for existence queries; the query object id is the prompt.
pub struct PopeScorer<'a> {
    pub spec: &'a ToyModelSpec,
    pub query_object: usize,
}

impl NextTokenScorer for PopeScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.spec.vocab_size()
    }
    fn eos_token(&self) -> Option<TokenId> {
        Some(self.spec.eos_token())
    }
    fn logits(&self, visual: &Tensor, _prompt: &[TokenId], _prefix: &[TokenId]) -> Result<Logits> {
        logits_pope(self.spec, visual, self.query_object)
    }
}

/// Scorer adapter for caption generation.
pub struct CaptionScorer<'a> {
    pub spec: &'a ToyModelSpec,
}

impl NextTokenScorer for CaptionScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.spec.vocab_size()
    }
    fn eos_token(&self) -> Option<TokenId> {
        Some(self.spec.eos_token())
    }
    fn logits(&self, visual: &Tensor, _prompt: &[TokenId], prefix: &[TokenId]) -> Result<Logits> {
        logits_caption(self.spec, visual, prefix)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::softmax;
    use crate::distortion::{build_schedule, diffuse_to};
    use crate::rng::{rng_from_seed, rng_from_seed as seed_rng};

    fn flat_spec(m: usize, w_visual: f64, offset: f64) -> ToyModelSpec {
        ToyModelSpec::new(vec![0.5; m], &[], w_visual, 0.0, 0.0, offset).unwrap()
    }

    #[test]
    fn render_matches_indicator_without_jitter() {
        // Jitter is N(0, 0.01^2); with a tolerance of 6 sigma the indicator
        // structure is visible through it.
        let spec = flat_spec(3, 1.0, 0.0);
        let scene = SceneSpec::new([0]);
        let v = render_scene(&scene, &spec, &mut rng_from_seed(4)).unwrap();
        assert!((v.data()[0] - 1.0).abs() < 0.06);
        assert!(v.data()[1].abs() < 0.06);
        assert!(v.data()[2].abs() < 0.06);

        let empty = SceneSpec::new([]);
        let spec2 = flat_spec(2, 1.0, 0.0);
        let v = render_scene(&empty, &spec2, &mut rng_from_seed(4)).unwrap();
        assert!(v.data().iter().all(|x| x.abs() < 0.06));
    }

    #[test]
    fn render_is_deterministic_per_seed() {
        let spec = ToyModelSpec::default_calibration();
        let scene = SceneSpec::new([1, 4, 7]);
        let a = render_scene(&scene, &spec, &mut rng_from_seed(77)).unwrap();
        let b = render_scene(&scene, &spec, &mut rng_from_seed(77)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn pope_sigmoid_reference() {
        // w_visual=4, other channels off, offset 2, v[q]=1 => l_yes = 2,
        // p(YES) = sigmoid(2) = 0.88079707797788244...
        let spec = flat_spec(3, 4.0, 2.0);
        let v = Tensor::vector(vec![1.0, 0.0, 0.0]).unwrap();
        let l = logits_pope(&spec, &v, 0).unwrap();
        let d = softmax(&l).unwrap();
        assert!((d.probs()[spec.yes_token()] - 0.88079707797788243).abs() < 1e-12);

        // Everything off: coin flip.
        let spec = flat_spec(3, 0.0, 0.0);
        let l = logits_pope(&spec, &v, 1).unwrap();
        let d = softmax(&l).unwrap();
        assert!((d.probs()[spec.yes_token()] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pope_masks_non_answer_tokens() {
        let spec = ToyModelSpec::default_calibration();
        let v = Tensor::constant(vec![20], 0.0).unwrap();
        let l = logits_pope(&spec, &v, 3).unwrap();
        for (i, &x) in l.0.iter().enumerate() {
            if i == spec.yes_token() || i == spec.no_token() {
                assert!(x.is_finite());
            } else {
                assert_eq!(x, f64::NEG_INFINITY);
            }
        }
        assert!(logits_pope(&spec, &v, 20).is_err());
    }

    #[test]
    fn visual_signal_decays_with_noise_step() {
        // E[w_visual * v_t[q]] = sqrt(alpha_bar[t]) * w_visual * v0[q]; check
        // the empirical average over 10000 draws at a mid-range t.
        let spec = flat_spec(1, 4.0, 0.0);
        let v0 = Tensor::vector(vec![1.0]).unwrap();
        let schedule = build_schedule(0.1, 999).unwrap();
        let t = 10;
        let n = 10_000;
        let mut sum = 0.0;
        for i in 0..n {
            let vt = diffuse_to(&v0, &schedule, t, &mut seed_rng(i)).unwrap();
            sum += spec.w_visual * vt.data()[0];
        }
        let mean = sum / n as f64;
        let expected = schedule.alpha_bar()[t].sqrt() * spec.w_visual;
        // std of each draw is w_visual * sqrt(1-ab) ~ 2.3; 5 SE band.
        let se = spec.w_visual * (1.0 - schedule.alpha_bar()[t]).sqrt() / (n as f64).sqrt();
        assert!((mean - expected).abs() < 5.0 * se);
        assert!(expected < spec.w_visual);
    }

    #[test]
    fn caption_exclusion_and_exhaustion() {
        let spec = ToyModelSpec::default_calibration();
        let v = Tensor::constant(vec![20], 0.0).unwrap();
        let prefix: Vec<usize> = (0..20).collect();
        let l = logits_caption(&spec, &v, &prefix).unwrap();
        for (i, &x) in l.0.iter().enumerate() {
            if i == spec.eos_token() {
                assert_eq!(x, 0.0);
            } else {
                assert_eq!(x, f64::NEG_INFINITY);
            }
        }

        let l = logits_caption(&spec, &v, &[5]).unwrap();
        assert_eq!(l.0[5], f64::NEG_INFINITY);
        assert!(l.0[6].is_finite());
        assert!(logits_caption(&spec, &v, &[spec.yes_token()]).is_err());
    }

    #[test]
    fn cooc_channel_can_dominate() {
        // prefix=[0], cooc(0,1) large, pure-noise visual: argmax must be the
        // partner object.
        let spec = ToyModelSpec::new(vec![0.1; 4], &[(0, 1, 50.0)], 1.0, 1.0, 1.0, 0.0).unwrap();
        let noise = crate::rng::normal_tensor(&[4], &mut rng_from_seed(2));
        let l = logits_caption(&spec, &noise, &[0]).unwrap();
        let best = l
            .0
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(best, 1);
    }

    #[test]
    fn config_round_trip() {
        let spec = ToyModelSpec::default_calibration();
        let cfg = spec.to_config();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ToyModelConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.build().unwrap(), spec);
    }

    #[test]
    fn spec_validation() {
        assert!(ToyModelSpec::new(vec![], &[], 1.0, 1.0, 1.0, 0.0).is_err());
        assert!(ToyModelSpec::new(vec![0.0, 0.5], &[], 1.0, 1.0, 1.0, 0.0).is_err());
        assert!(ToyModelSpec::new(vec![0.5, 0.5], &[(0, 0, 1.0)], 1.0, 1.0, 1.0, 0.0).is_err());
        assert!(ToyModelSpec::new(vec![0.5, 0.5], &[(0, 3, 1.0)], 1.0, 1.0, 1.0, 0.0).is_err());
        let ok = ToyModelSpec::new(vec![0.5, 0.5], &[(0, 1, 2.0)], 1.0, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(ok.cooc(0, 1), 2.0);
        assert_eq!(ok.cooc(1, 0), 2.0);
        assert_eq!(ok.cooc(0, 0), 0.0);
    }
}
