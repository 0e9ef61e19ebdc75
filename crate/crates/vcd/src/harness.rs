//! POPE-style evaluation of the toy model: balanced yes/no existence queries
//! with random, popular, and adversarial negatives, plus the noise, bias, and
//! hyperparameter sweeps built on top.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoding::{
    sample, softmax, vcd_distribution, SamplingStrategy, VcdParams,
};
use crate::distortion::{build_schedule, diffuse_to, NoiseSchedule};
use crate::metrics::{ConfusionCounts, EvalMetrics, MetricsSummary};
use crate::rng::{derive_seed, rng_from_seed};
use crate::toymodel::{logits_caption, logits_pope, render_scene, SceneSpec, ToyModelSpec};
use crate::{Result, VcdError};

// Stream tags keeping the scene, query, answer, and caption seed streams
// disjoint under one master seed.
const STREAM_SCENES: u64 = 1;
const STREAM_QUERIES: u64 = 2;
const STREAM_ANSWERS: u64 = 3;
const STREAM_CAPTIONS: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PopeSetting {
    Random,
    Popular,
    Adversarial,
}

impl PopeSetting {
    pub const ALL: [PopeSetting; 3] =
        [PopeSetting::Random, PopeSetting::Popular, PopeSetting::Adversarial];

    pub fn name(&self) -> &'static str {
        match self {
            PopeSetting::Random => "random",
            PopeSetting::Popular => "popular",
            PopeSetting::Adversarial => "adversarial",
        }
    }
}

impl std::str::FromStr for PopeSetting {
    type Err = VcdError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(PopeSetting::Random),
            "popular" => Ok(PopeSetting::Popular),
            "adversarial" => Ok(PopeSetting::Adversarial),
            other => Err(VcdError::param(
                "setting",
                format!("unknown setting {other:?} (expected random|popular|adversarial|all)"),
            )),
        }
    }
}

/// One balanced existence probe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopeQuery {
    pub scene_id: usize,
    pub query_object: usize,
    pub ground_truth: bool,
    pub setting: PopeSetting,
}

/// How a query is answered.
#[derive(Debug, Clone, PartialEq)]
pub enum DecodingMode {
    /// Direct sampling from the original-input softmax.
    Regular,
    Vcd(VcdParams),
}

impl DecodingMode {
    pub fn name(&self) -> &'static str {
        match self {
            DecodingMode::Regular => "regular",
            DecodingMode::Vcd(_) => "vcd",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodingConfig {
    pub mode: DecodingMode,
    pub strategy: SamplingStrategy,
    pub gamma: f64,
    /// Diffusion step applied to the model input itself before decoding.
    /// Zero means the clean input; used by the noise sweep.
    pub input_noise_t: usize,
}

impl DecodingConfig {
    pub fn regular(strategy: SamplingStrategy) -> Self {
        DecodingConfig {
            mode: DecodingMode::Regular,
            strategy,
            gamma: 0.1,
            input_noise_t: 0,
        }
    }

    pub fn vcd(params: VcdParams, strategy: SamplingStrategy) -> Self {
        DecodingConfig {
            mode: DecodingMode::Vcd(params),
            strategy,
            gamma: 0.1,
            input_noise_t: 0,
        }
    }

    fn schedule(&self) -> Result<NoiseSchedule> {
        let mut steps = self.input_noise_t;
        if let DecodingMode::Vcd(p) = &self.mode {
            steps = steps.max(p.noise_step_t);
        }
        build_schedule(self.gamma, steps.max(1))
    }
}

/// Samples scene annotations. Object presence is drawn without replacement,
/// weighted by prior frequency, so frequent objects appear in more scenes the
/// way they do in real annotation sets.
pub fn generate_scenes(
    num_scenes: usize,
    objects_per_scene: usize,
    spec: &ToyModelSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SceneSpec>> {
    let m = spec.num_objects();
    if objects_per_scene == 0 || objects_per_scene >= m {
        return Err(VcdError::param(
            "objects-per-scene",
            format!("must lie in 1..{m}, got {objects_per_scene}"),
        ));
    }
    let mut scenes = Vec::with_capacity(num_scenes);
    for _ in 0..num_scenes {
        let mut remaining: Vec<usize> = (0..m).collect();
        let mut present = Vec::new();
        for _ in 0..objects_per_scene {
            let total: f64 = remaining.iter().map(|&i| spec.prior_freq()[i]).sum();
            let mut u: f64 = rng.random::<f64>() * total;
            let mut chosen = remaining.len() - 1;
            for (idx, &obj) in remaining.iter().enumerate() {
                u -= spec.prior_freq()[obj];
                if u < 0.0 {
                    chosen = idx;
                    break;
                }
            }
            present.push(remaining.swap_remove(chosen));
        }
        scenes.push(SceneSpec::new(present));
    }
    Ok(scenes)
}

/// Seeded convenience wrapper for [`generate_scenes`].
pub fn generate_scenes_seeded(
    num_scenes: usize,
    objects_per_scene: usize,
    spec: &ToyModelSpec,
    seed: u64,
) -> Result<Vec<SceneSpec>> {
    let mut rng = rng_from_seed(derive_seed(seed, &[STREAM_SCENES]));
    generate_scenes(num_scenes, objects_per_scene, spec, &mut rng)
}

fn sample_without_replacement(
    pool: &[usize],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut remaining = pool.to_vec();
    let mut picked = Vec::with_capacity(count);
    for _ in 0..count {
        let idx = rng.random_range(0..remaining.len());
        picked.push(remaining.swap_remove(idx));
    }
    picked
}

/// Builds a balanced query set: per scene, half the queries probe present
/// objects and half probe absent objects chosen per setting. The negative
/// pool for the popular and adversarial settings is the top `ceil(m/4)`
/// candidates of the respective ranking, sampled uniformly within the pool.
pub fn build_pope_queries(
    scenes: &[SceneSpec],
    spec: &ToyModelSpec,
    setting: PopeSetting,
    queries_per_scene: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PopeQuery>> {
    if queries_per_scene == 0 || !queries_per_scene.is_multiple_of(2) {
        return Err(VcdError::param(
            "queries-per-scene",
            format!("must be a positive even number, got {queries_per_scene}"),
        ));
    }
    let half = queries_per_scene / 2;
    let m = spec.num_objects();
    let pool_size = m.div_ceil(4);
    let mut queries = Vec::with_capacity(scenes.len() * queries_per_scene);
    for (scene_id, scene) in scenes.iter().enumerate() {
        let present: Vec<usize> = scene.present.iter().copied().collect();
        let absent: Vec<usize> = (0..m).filter(|i| !scene.present.contains(i)).collect();
        if present.len() < half {
            return Err(VcdError::SceneConstruction {
                scene_id,
                message: format!("{} present objects, need {half}", present.len()),
            });
        }
        if absent.len() < half {
            return Err(VcdError::SceneConstruction {
                scene_id,
                message: format!("{} absent objects, need {half}", absent.len()),
            });
        }
        let positives = sample_without_replacement(&present, half, rng);
        let negatives = match setting {
            PopeSetting::Random => sample_without_replacement(&absent, half, rng),
            PopeSetting::Popular => {
                let mut ranked = absent.clone();
                ranked.sort_by(|&a, &b| {
                    spec.prior_freq()[b]
                        .partial_cmp(&spec.prior_freq()[a])
                        .unwrap()
                        .then(a.cmp(&b))
                });
                let pool = &ranked[..pool_size.min(ranked.len())];
                if pool.len() < half {
                    return Err(VcdError::SceneConstruction {
                        scene_id,
                        message: format!("popular pool has {} candidates, need {half}", pool.len()),
                    });
                }
                sample_without_replacement(pool, half, rng)
            }
            PopeSetting::Adversarial => {
                let max_cooc = |obj: usize| -> f64 {
                    present
                        .iter()
                        .map(|&p| spec.cooc(p, obj))
                        .fold(0.0, f64::max)
                };
                let mut ranked = absent.clone();
                ranked.sort_by(|&a, &b| {
                    max_cooc(b)
                        .partial_cmp(&max_cooc(a))
                        .unwrap()
                        .then(
                            spec.prior_freq()[b]
                                .partial_cmp(&spec.prior_freq()[a])
                                .unwrap(),
                        )
                        .then(a.cmp(&b))
                });
                let pool = &ranked[..pool_size.min(ranked.len())];
                if pool.len() < half {
                    return Err(VcdError::SceneConstruction {
                        scene_id,
                        message: format!(
                            "adversarial pool has {} candidates, need {half}",
                            pool.len()
                        ),
                    });
                }
                sample_without_replacement(pool, half, rng)
            }
        };
        for q in positives {
            queries.push(PopeQuery {
                scene_id,
                query_object: q,
                ground_truth: true,
                setting,
            });
        }
        for q in negatives {
            queries.push(PopeQuery {
                scene_id,
                query_object: q,
                ground_truth: false,
                setting,
            });
        }
    }
    Ok(queries)
}

/// Seeded wrapper deriving the query-stream seed from a master seed.
pub fn build_pope_queries_seeded(
    scenes: &[SceneSpec],
    spec: &ToyModelSpec,
    setting: PopeSetting,
    queries_per_scene: usize,
    master_seed: u64,
) -> Result<Vec<PopeQuery>> {
    let mut rng = rng_from_seed(derive_seed(master_seed, &[STREAM_QUERIES, setting as u64]));
    build_pope_queries(scenes, spec, setting, queries_per_scene, &mut rng)
}

/// Answers one query: renders the scene, optionally distorts the model input,
/// and samples YES/NO from either the plain or the contrastive distribution.
/// Returns true for YES.
///
/// The caller's generator is consumed only to derive a base seed; rendering,
/// distortion, and sampling each use their own split stream. Regular and VCD
/// mode therefore see identical render and sampling draws for the same input
/// stream, which makes the `alpha = 0` reduction exact answer-for-answer.
pub fn answer_query(
    spec: &ToyModelSpec,
    query: &PopeQuery,
    scenes: &[SceneSpec],
    config: &DecodingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<bool> {
    let scene = scenes.get(query.scene_id).ok_or_else(|| {
        VcdError::param("scene-id", format!("{} out of range", query.scene_id))
    })?;
    let base: u64 = rng.random();
    let mut render_rng = rng_from_seed(derive_seed(base, &[1]));
    let mut distort_rng = rng_from_seed(derive_seed(base, &[2]));
    let mut sample_rng = rng_from_seed(derive_seed(base, &[3]));
    let schedule = config.schedule()?;
    let v0 = render_scene(scene, spec, &mut render_rng)?;
    let v = if config.input_noise_t > 0 {
        diffuse_to(&v0, &schedule, config.input_noise_t, &mut distort_rng)?
    } else {
        v0
    };
    let logits_v = logits_pope(spec, &v, query.query_object)?;
    let dist = match &config.mode {
        DecodingMode::Regular => softmax(&logits_v)?,
        DecodingMode::Vcd(params) => {
            let v_distorted = diffuse_to(&v, &schedule, params.noise_step_t, &mut distort_rng)?;
            let logits_vd = logits_pope(spec, &v_distorted, query.query_object)?;
            vcd_distribution(&logits_v, &logits_vd, params)?
        }
    };
    let token = sample(&dist, &config.strategy, &mut sample_rng)?;
    Ok(token == spec.yes_token())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub per_run: Vec<EvalMetrics>,
    pub summary: MetricsSummary,
    /// Confusion counts summed over runs.
    pub total_counts: ConfusionCounts,
}

/// Runs the full query set `num_runs` times with seeds derived per
/// (run, scene, query). Queries within a run are evaluated in parallel; the
/// derived seeds make the outcome independent of worker count.
pub fn evaluate(
    spec: &ToyModelSpec,
    queries: &[PopeQuery],
    scenes: &[SceneSpec],
    config: &DecodingConfig,
    num_runs: usize,
    master_seed: u64,
) -> Result<EvalOutcome> {
    if queries.is_empty() {
        return Err(VcdError::param("queries", "empty query set"));
    }
    if num_runs == 0 {
        return Err(VcdError::param("runs", "must be >= 1"));
    }
    config.strategy.validate()?;
    if let DecodingMode::Vcd(p) = &config.mode {
        p.validate()?;
    }
    let mut per_run = Vec::with_capacity(num_runs);
    let mut total_counts = ConfusionCounts::default();
    for run in 0..num_runs {
        let answers: Vec<(bool, bool)> = queries
            .par_iter()
            .enumerate()
            .map(|(query_index, q)| {
                let seed = derive_seed(
                    master_seed,
                    &[
                        STREAM_ANSWERS,
                        run as u64,
                        q.scene_id as u64,
                        query_index as u64,
                    ],
                );
                let mut rng = rng_from_seed(seed);
                answer_query(spec, q, scenes, config, &mut rng).map(|a| (q.ground_truth, a))
            })
            .collect::<Result<_>>()?;
        let counts = answers
            .par_iter()
            .fold(ConfusionCounts::default, |mut c, &(gt, pred)| {
                c.record(gt, pred);
                c
            })
            .reduce(ConfusionCounts::default, |a, b| ConfusionCounts {
                tp: a.tp + b.tp,
                fp: a.fp + b.fp,
                fn_: a.fn_ + b.fn_,
                tn: a.tn + b.tn,
            });
        // Cross-check the parallel fold against a sequential recount.
        let recount = ConfusionCounts::from_pairs(answers.iter().copied());
        debug_assert_eq!(counts, recount);
        if counts != recount {
            return Err(VcdError::Degenerate("confusion-matrix recount mismatch".into()));
        }
        total_counts.tp += counts.tp;
        total_counts.fp += counts.fp;
        total_counts.fn_ += counts.fn_;
        total_counts.tn += counts.tn;
        per_run.push(EvalMetrics::from_counts(counts));
    }
    let summary = MetricsSummary::over_runs(&per_run);
    Ok(EvalOutcome {
        per_run,
        summary,
        total_counts,
    })
}

/// Regular decoding where the model input itself is the step-`t` distorted
/// tensor, evaluated for each `t`. `t_values` must be sorted ascending.
pub fn noise_sweep(
    spec: &ToyModelSpec,
    queries: &[PopeQuery],
    scenes: &[SceneSpec],
    t_values: &[usize],
    config: &DecodingConfig,
    num_runs: usize,
    master_seed: u64,
) -> Result<Vec<(usize, EvalOutcome)>> {
    if t_values.is_empty() {
        return Err(VcdError::param("values", "empty t grid"));
    }
    if t_values.windows(2).any(|w| w[0] > w[1]) {
        return Err(VcdError::param("values", "t grid must be sorted ascending"));
    }
    let mut out = Vec::with_capacity(t_values.len());
    for &t in t_values {
        let cfg = DecodingConfig {
            input_noise_t: t,
            ..config.clone()
        };
        out.push((t, evaluate(spec, queries, scenes, &cfg, num_runs, master_seed)?));
    }
    Ok(out)
}

/// Per-object hallucination statistics from caption generation under a
/// distorted input.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectBiasRow {
    pub object: usize,
    pub prior_freq: f64,
    /// Mean co-occurrence mass with present objects, over the scenes where
    /// the object is absent.
    pub mean_cooc_mass: f64,
    pub hallucination_rate: f64,
    pub opportunities: usize,
    pub hallucinations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiasReport {
    pub noise_step_t: usize,
    pub captions_per_scene: usize,
    pub per_object: Vec<ObjectBiasRow>,
    /// Spearman correlation between prior frequency and hallucination rate.
    pub spearman_prior: f64,
    /// Spearman correlation between mean co-occurrence mass and rate.
    pub spearman_cooc: f64,
    /// Mean hallucination rate of coupled objects (lower-prior member of each
    /// co-occurrence pair) against unpaired objects of adjacent prior rank.
    /// The matched controls isolate the co-occurrence channel from the
    /// frequency prior.
    pub rate_high_cooc: Option<f64>,
    pub rate_matched_low_cooc: Option<f64>,
}

/// Generates captions with regular decoding under distorted inputs and counts
/// emitted-but-absent objects as hallucinations.
pub fn bias_study(
    spec: &ToyModelSpec,
    scenes: &[SceneSpec],
    t: usize,
    captions_per_scene: usize,
    gamma: f64,
    master_seed: u64,
) -> Result<BiasReport> {
    if t == 0 {
        return Err(VcdError::param("noise-step", "bias study requires t > 0"));
    }
    if captions_per_scene == 0 {
        return Err(VcdError::param("captions", "must be >= 1"));
    }
    let schedule = build_schedule(gamma, t)?;
    let m = spec.num_objects();
    let max_len = m + 1;

    struct Tally {
        opportunities: Vec<usize>,
        hallucinations: Vec<usize>,
    }

    let tally = scenes
        .par_iter()
        .enumerate()
        .map(|(scene_id, scene)| -> Result<Tally> {
            let mut t_local = Tally {
                opportunities: vec![0; m],
                hallucinations: vec![0; m],
            };
            for caption_idx in 0..captions_per_scene {
                let seed = derive_seed(
                    master_seed,
                    &[STREAM_CAPTIONS, scene_id as u64, caption_idx as u64],
                );
                let mut rng = rng_from_seed(seed);
                let v0 = render_scene(scene, spec, &mut rng)?;
                let vt = diffuse_to(&v0, &schedule, t, &mut rng)?;
                let mut caption: Vec<usize> = Vec::new();
                for _ in 0..max_len {
                    let logits = logits_caption(spec, &vt, &caption)?;
                    let dist = softmax(&logits)?;
                    let token = sample(&dist, &SamplingStrategy::Direct, &mut rng)?;
                    if token == spec.eos_token() {
                        break;
                    }
                    caption.push(token);
                }
                for y in 0..m {
                    if scene.present.contains(&y) {
                        continue;
                    }
                    t_local.opportunities[y] += 1;
                    if caption.contains(&y) {
                        t_local.hallucinations[y] += 1;
                    }
                }
            }
            Ok(t_local)
        })
        .try_reduce(
            || Tally {
                opportunities: vec![0; m],
                hallucinations: vec![0; m],
            },
            |mut a, b| {
                for y in 0..m {
                    a.opportunities[y] += b.opportunities[y];
                    a.hallucinations[y] += b.hallucinations[y];
                }
                Ok(a)
            },
        )?;

    let mut per_object = Vec::with_capacity(m);
    for y in 0..m {
        let absent_scene_masses: Vec<f64> = scenes
            .iter()
            .filter(|s| !s.present.contains(&y))
            .map(|s| s.present.iter().map(|&p| spec.cooc(p, y)).sum::<f64>())
            .collect();
        let mean_cooc_mass = if absent_scene_masses.is_empty() {
            0.0
        } else {
            absent_scene_masses.iter().sum::<f64>() / absent_scene_masses.len() as f64
        };
        let rate = if tally.opportunities[y] == 0 {
            0.0
        } else {
            tally.hallucinations[y] as f64 / tally.opportunities[y] as f64
        };
        per_object.push(ObjectBiasRow {
            object: y,
            prior_freq: spec.prior_freq()[y],
            mean_cooc_mass,
            hallucination_rate: rate,
            opportunities: tally.opportunities[y],
            hallucinations: tally.hallucinations[y],
        });
    }
    let rates: Vec<f64> = per_object.iter().map(|r| r.hallucination_rate).collect();
    let priors: Vec<f64> = per_object.iter().map(|r| r.prior_freq).collect();
    let masses: Vec<f64> = per_object.iter().map(|r| r.mean_cooc_mass).collect();
    // Coupled objects: the lower-prior member of each co-occurrence pair.
    // Their controls are the unpaired objects nearest in prior frequency.
    let unpaired: Vec<usize> = (0..m).filter(|&y| spec.partners(y).is_empty()).collect();
    let mut dragged: Vec<usize> = Vec::new();
    for y in 0..m {
        for p in spec.partners(y) {
            if y < p && spec.prior_freq()[y] != spec.prior_freq()[p] {
                let low = if spec.prior_freq()[y] < spec.prior_freq()[p] { y } else { p };
                dragged.push(low);
            }
        }
    }
    let (rate_high_cooc, rate_matched_low_cooc) = if dragged.is_empty() || unpaired.is_empty() {
        (None, None)
    } else {
        let high = dragged.iter().map(|&d| rates[d]).sum::<f64>() / dragged.len() as f64;
        let control = dragged
            .iter()
            .map(|&d| {
                let mut by_distance = unpaired.clone();
                by_distance.sort_by(|&a, &b| {
                    let da = (spec.prior_freq()[a] - spec.prior_freq()[d]).abs();
                    let db = (spec.prior_freq()[b] - spec.prior_freq()[d]).abs();
                    da.partial_cmp(&db).unwrap().then(a.cmp(&b))
                });
                let picked = &by_distance[..2.min(by_distance.len())];
                picked.iter().map(|&c| rates[c]).sum::<f64>() / picked.len() as f64
            })
            .sum::<f64>()
            / dragged.len() as f64;
        (Some(high), Some(control))
    };
    Ok(BiasReport {
        noise_step_t: t,
        captions_per_scene,
        per_object,
        spearman_prior: crate::metrics::spearman(&priors, &rates),
        spearman_cooc: crate::metrics::spearman(&masses, &rates),
        rate_high_cooc,
        rate_matched_low_cooc,
    })
}

/// One point of a hyperparameter ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub label: String,
    pub params: VcdParams,
    pub strategy: SamplingStrategy,
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub label: String,
    pub params: VcdParams,
    pub strategy: SamplingStrategy,
    pub outcome: EvalOutcome,
}

/// Evaluates every grid point in VCD mode against the shared scenes and
/// query set, with seeds derived from the same master seed.
pub fn ablation_sweep(
    spec: &ToyModelSpec,
    queries: &[PopeQuery],
    scenes: &[SceneSpec],
    points: &[SweepPoint],
    gamma: f64,
    num_runs: usize,
    master_seed: u64,
) -> Result<Vec<SweepRow>> {
    if points.is_empty() {
        return Err(VcdError::param("values", "empty sweep grid"));
    }
    let mut rows = Vec::with_capacity(points.len());
    for point in points {
        let config = DecodingConfig {
            mode: DecodingMode::Vcd(point.params),
            strategy: point.strategy.clone(),
            gamma,
            input_noise_t: 0,
        };
        let outcome = evaluate(spec, queries, scenes, &config, num_runs, master_seed)?;
        rows.push(SweepRow {
            label: point.label.clone(),
            params: point.params,
            strategy: point.strategy.clone(),
            outcome,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Report assembly
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeReport {
    pub metrics_mean: MeanBlock,
    pub metrics_std: MeanBlock,
    pub counts: ConfusionCounts,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanBlock {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRow {
    pub setting: String,
    pub mode: String,
    pub run: usize,
    #[serde(flatten)]
    pub metrics: EvalMetrics,
}

/// The JSON report written by the `pope` command: configuration echo,
/// per-setting mean/std for both decoding modes, and one row per run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PopeReport {
    pub config: serde_json::Value,
    pub per_setting: BTreeMap<String, BTreeMap<String, ModeReport>>,
    pub per_run: Vec<RunRow>,
}

impl PopeReport {
    pub fn new(config: serde_json::Value) -> Self {
        PopeReport {
            config,
            per_setting: BTreeMap::new(),
            per_run: Vec::new(),
        }
    }

    pub fn push_outcome(&mut self, setting: PopeSetting, mode: &str, outcome: &EvalOutcome) {
        let mean = MeanBlock {
            accuracy: outcome.summary.accuracy.mean,
            precision: outcome.summary.precision.mean,
            recall: outcome.summary.recall.mean,
            f1: outcome.summary.f1.mean,
        };
        let std = MeanBlock {
            accuracy: outcome.summary.accuracy.std,
            precision: outcome.summary.precision.std,
            recall: outcome.summary.recall.std,
            f1: outcome.summary.f1.std,
        };
        self.per_setting
            .entry(setting.name().to_string())
            .or_default()
            .insert(
                mode.to_string(),
                ModeReport {
                    metrics_mean: mean,
                    metrics_std: std,
                    counts: outcome.total_counts,
                },
            );
        for (run, metrics) in outcome.per_run.iter().enumerate() {
            self.per_run.push(RunRow {
                setting: setting.name().to_string(),
                mode: mode.to_string(),
                run,
                metrics: *metrics,
            });
        }
    }

    /// CSV mirror: one row per (setting, mode, run).
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "setting", "mode", "run", "tp", "fp", "fn", "tn", "accuracy", "precision", "recall",
            "f1",
        ])
        .map_err(|e| VcdError::Config(e.to_string()))?;
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for row in &self.per_run {
            let c = row.metrics.counts;
            w.write_record([
                row.setting.clone(),
                row.mode.clone(),
                row.run.to_string(),
                c.tp.to_string(),
                c.fp.to_string(),
                c.fn_.to_string(),
                c.tn.to_string(),
                fmt(row.metrics.accuracy),
                fmt(row.metrics.precision),
                fmt(row.metrics.recall),
                fmt(row.metrics.f1),
            ])
            .map_err(|e| VcdError::Config(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| VcdError::Config(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| VcdError::Config(e.to_string()))
    }
}
