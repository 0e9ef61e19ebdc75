//! Contrastive decoding core: logit combination, adaptive plausibility
//! truncation, and the sampling strategies layered on top.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;
use crate::{Result, VcdError};

pub type TokenId = usize;

/// Per-token scores. Entries are finite or `-inf` (masked); at least one entry
/// must be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(pub Vec<f64>);

impl Logits {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A normalized distribution over token ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist(Vec<f64>);

impl ProbDist {
    /// Validates and wraps an externally produced probability vector.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(VcdError::Degenerate("empty distribution".into()));
        }
        if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(VcdError::Degenerate("probability outside [0,1]".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(VcdError::Degenerate(format!("sum {sum} != 1")));
        }
        Ok(ProbDist(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Lowest-index token of maximal probability.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// Knobs of the contrastive rule: amplification `alpha`, truncation `beta`,
/// and the diffusion step used to distort the visual input.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VcdParams {
    pub alpha: f64,
    pub beta: f64,
    pub noise_step_t: usize,
}

impl Default for VcdParams {
    fn default() -> Self {
        VcdParams {
            alpha: 1.0,
            beta: 0.1,
            noise_step_t: 500,
        }
    }
}

impl VcdParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(VcdError::param("alpha", format!("must be >= 0, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(VcdError::param("beta", format!("must lie in [0,1], got {}", self.beta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SamplingStrategy {
    /// Inverse-CDF sampling from the distribution as-is.
    Direct,
    /// Lowest-index argmax.
    Greedy,
    TopK(usize),
    TopP(f64),
    /// Rescale `log p / tau` over the support, then apply the inner strategy.
    Temperature { tau: f64, inner: Box<SamplingStrategy> },
}

impl SamplingStrategy {
    pub fn validate(&self) -> Result<()> {
        match self {
            SamplingStrategy::Direct | SamplingStrategy::Greedy => Ok(()),
            SamplingStrategy::TopK(k) => {
                if *k == 0 {
                    Err(VcdError::param("strategy", "top-k requires k >= 1"))
                } else {
                    Ok(())
                }
            }
            SamplingStrategy::TopP(p) => {
                if *p > 0.0 && *p <= 1.0 {
                    Ok(())
                } else {
                    Err(VcdError::param("strategy", format!("top-p requires p in (0,1], got {p}")))
                }
            }
            SamplingStrategy::Temperature { tau, inner } => {
                if !(*tau > 0.0 && tau.is_finite()) {
                    return Err(VcdError::param("strategy", format!("temperature must be > 0, got {tau}")));
                }
                if matches!(**inner, SamplingStrategy::Temperature { .. }) {
                    return Err(VcdError::param("strategy", "temperature cannot wrap another temperature"));
                }
                inner.validate()
            }
        }
    }
}

impl std::fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SamplingStrategy::Direct => write!(f, "direct"),
            SamplingStrategy::Greedy => write!(f, "greedy"),
            SamplingStrategy::TopK(k) => write!(f, "topk:{k}"),
            SamplingStrategy::TopP(p) => write!(f, "topp:{p}"),
            SamplingStrategy::Temperature { tau, inner } => write!(f, "temp:{tau}+{inner}"),
        }
    }
}

/// Parses `direct | greedy | topk:K | topp:P | temp:TAU+INNER`.
impl std::str::FromStr for SamplingStrategy {
    type Err = VcdError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: String| VcdError::param("strategy", msg);
        let strategy = if let Some(rest) = s.strip_prefix("temp:") {
            let (tau_str, inner_str) = rest
                .split_once('+')
                .ok_or_else(|| bad(format!("expected temp:TAU+INNER, got {s:?}")))?;
            let tau: f64 = tau_str
                .parse()
                .map_err(|_| bad(format!("bad temperature {tau_str:?}")))?;
            SamplingStrategy::Temperature {
                tau,
                inner: Box::new(inner_str.parse()?),
            }
        } else if let Some(k) = s.strip_prefix("topk:") {
            SamplingStrategy::TopK(k.parse().map_err(|_| bad(format!("bad k {k:?}")))?)
        } else if let Some(p) = s.strip_prefix("topp:") {
            SamplingStrategy::TopP(p.parse().map_err(|_| bad(format!("bad p {p:?}")))?)
        } else {
            match s {
                "direct" => SamplingStrategy::Direct,
                "greedy" => SamplingStrategy::Greedy,
                other => {
                    return Err(bad(format!(
                        "unknown strategy {other:?} (expected direct|greedy|topk:K|topp:P|temp:TAU+INNER)"
                    )))
                }
            }
        };
        strategy.validate()?;
        Ok(strategy)
    }
}

/// Numerically stable softmax; `-inf` logits map to probability exactly zero.
pub fn softmax(logits: &Logits) -> Result<ProbDist> {
    let m = logits
        .0
        .iter()
        .copied()
        .filter(|x| x.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(VcdError::Degenerate("no finite logit".into()));
    }
    let mut probs: Vec<f64> = logits
        .0
        .iter()
        .map(|&x| if x == f64::NEG_INFINITY { 0.0 } else { (x - m).exp() })
        .collect();
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    Ok(ProbDist(probs))
}

/// `(1+alpha) * logits_v - alpha * logits_vd`, elementwise. `alpha = 0`
/// returns the original logits unchanged. A token masked in the original
/// branch stays masked; a token masked only in the distorted branch has no
/// finite contrast and is rejected.
pub fn contrast_logits(logits_v: &Logits, logits_vd: &Logits, alpha: f64) -> Result<Logits> {
    if logits_v.len() != logits_vd.len() {
        return Err(VcdError::Shape(format!(
            "logit lengths differ: {} vs {}",
            logits_v.len(),
            logits_vd.len()
        )));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(VcdError::param("alpha", format!("must be >= 0, got {alpha}")));
    }
    if alpha == 0.0 {
        return Ok(logits_v.clone());
    }
    let mut out = Vec::with_capacity(logits_v.len());
    for (&lv, &ld) in logits_v.0.iter().zip(&logits_vd.0) {
        if lv == f64::NEG_INFINITY {
            out.push(f64::NEG_INFINITY);
        } else if ld == f64::NEG_INFINITY {
            return Err(VcdError::Degenerate(
                "distorted branch masks a token the original branch allows".into(),
            ));
        } else {
            out.push((1.0 + alpha) * lv - alpha * ld);
        }
    }
    Ok(Logits(out))
}

/// Adaptive plausibility set: token ids whose probability is at least
/// `beta * max(probs)`. The threshold is inclusive, so the argmax always
/// qualifies and the set is never empty.
pub fn plausibility_mask(probs_v: &ProbDist, beta: f64) -> Result<Vec<TokenId>> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(VcdError::param("beta", format!("must lie in [0,1], got {beta}")));
    }
    let max = probs_v.0.iter().copied().fold(0.0f64, f64::max);
    let threshold = beta * max;
    Ok(probs_v
        .0
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= threshold)
        .map(|(i, _)| i)
        .collect())
}

/// The full contrastive rule: plausibility set from the original-branch
/// softmax, contrast on the surviving tokens, `-inf` elsewhere, softmax.
/// Tokens outside the plausibility set get probability exactly zero.
pub fn vcd_distribution(logits_v: &Logits, logits_vd: &Logits, params: &VcdParams) -> Result<ProbDist> {
    params.validate()?;
    if logits_v.len() != logits_vd.len() {
        return Err(VcdError::Shape(format!(
            "logit lengths differ: {} vs {}",
            logits_v.len(),
            logits_vd.len()
        )));
    }
    let probs_v = softmax(logits_v)?;
    let head = plausibility_mask(&probs_v, params.beta)?;
    let mut keep = vec![false; logits_v.len()];
    for &i in &head {
        keep[i] = true;
    }
    let combined = contrast_logits(logits_v, logits_vd, params.alpha)?;
    let masked = Logits(
        combined
            .0
            .iter()
            .enumerate()
            .map(|(i, &x)| if keep[i] { x } else { f64::NEG_INFINITY })
            .collect(),
    );
    softmax(&masked)
}

fn inverse_cdf(probs: &[f64], rng: &mut ChaCha8Rng) -> TokenId {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last_nonzero = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_nonzero = i;
            cum += p;
            if u < cum {
                return i;
            }
        }
    }
    // Rounding can leave cum marginally below 1.
    last_nonzero
}

/// Draws one token according to the strategy.
pub fn sample(dist: &ProbDist, strategy: &SamplingStrategy, rng: &mut ChaCha8Rng) -> Result<TokenId> {
    strategy.validate()?;
    match strategy {
        SamplingStrategy::Direct => Ok(inverse_cdf(&dist.0, rng)),
        SamplingStrategy::Greedy => Ok(dist.argmax()),
        SamplingStrategy::TopK(k) => {
            let support = top_k_support(dist, *k);
            Ok(inverse_cdf(&restrict(dist, &support), rng))
        }
        SamplingStrategy::TopP(p) => {
            let support = top_p_support(dist, *p);
            Ok(inverse_cdf(&restrict(dist, &support), rng))
        }
        SamplingStrategy::Temperature { tau, inner } => {
            let tempered = apply_temperature(dist, *tau)?;
            sample(&tempered, inner, rng)
        }
    }
}

/// The `min(k, vocab)` highest-probability tokens; ties at the boundary keep
/// the lower token ids so the support size is exactly `min(k, vocab)`.
pub fn top_k_support(dist: &ProbDist, k: usize) -> Vec<TokenId> {
    let mut order: Vec<TokenId> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist.0[b].partial_cmp(&dist.0[a]).unwrap().then(a.cmp(&b)));
    let mut support: Vec<TokenId> = order.into_iter().take(k.min(dist.len())).collect();
    support.sort_unstable();
    support
}

/// Smallest probability-descending prefix whose cumulative mass reaches `p`.
pub fn top_p_support(dist: &ProbDist, p: f64) -> Vec<TokenId> {
    let mut order: Vec<TokenId> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist.0[b].partial_cmp(&dist.0[a]).unwrap().then(a.cmp(&b)));
    let mut support = Vec::new();
    let mut cum = 0.0;
    for id in order {
        support.push(id);
        cum += dist.0[id];
        if cum >= p {
            break;
        }
    }
    support.sort_unstable();
    support
}

fn restrict(dist: &ProbDist, support: &[TokenId]) -> Vec<f64> {
    let mass: f64 = support.iter().map(|&i| dist.0[i]).sum();
    let mut probs = vec![0.0; dist.len()];
    if mass > 0.0 {
        for &i in support {
            probs[i] = dist.0[i] / mass;
        }
    } else {
        // All-zero support only arises from top-k exceeding the nonzero
        // count; fall back to uniform over the support.
        for &i in support {
            probs[i] = 1.0 / support.len() as f64;
        }
    }
    probs
}

/// `softmax(log p / tau)` over the support of `dist`; zero-probability tokens
/// stay at exactly zero.
pub fn apply_temperature(dist: &ProbDist, tau: f64) -> Result<ProbDist> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(VcdError::param("strategy", format!("temperature must be > 0, got {tau}")));
    }
    let logits = Logits(
        dist.0
            .iter()
            .map(|&p| if p > 0.0 { p.ln() / tau } else { f64::NEG_INFINITY })
            .collect(),
    );
    softmax(&logits)
}

/// A vision-conditioned next-token scorer.
pub trait NextTokenScorer {
    fn vocab_size(&self) -> usize;
    fn eos_token(&self) -> Option<TokenId>;
    fn logits(&self, visual: &Tensor, prompt: &[TokenId], prefix: &[TokenId]) -> Result<Logits>;
}

/// Autoregressive generation under the contrastive rule. At every step the
/// model is queried twice with the same generated prefix, once per visual
/// branch; generation stops at the scorer's end token or at `max_len`.
#[allow(clippy::too_many_arguments)]
pub fn decode_sequence(
    model: &dyn NextTokenScorer,
    v: &Tensor,
    v_distorted: &Tensor,
    prompt: &[TokenId],
    params: &VcdParams,
    strategy: &SamplingStrategy,
    max_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TokenId>> {
    if max_len == 0 {
        return Err(VcdError::param("max-len", "must be >= 1"));
    }
    if model.vocab_size() == 0 {
        return Err(VcdError::Degenerate("empty vocabulary".into()));
    }
    let mut generated = Vec::new();
    for _ in 0..max_len {
        let logits_v = model.logits(v, prompt, &generated)?;
        let logits_vd = model.logits(v_distorted, prompt, &generated)?;
        let dist = vcd_distribution(&logits_v, &logits_vd, params)?;
        let token = sample(&dist, strategy, rng)?;
        generated.push(token);
        if Some(token) == model.eos_token() {
            break;
        }
    }
    Ok(generated)
}
