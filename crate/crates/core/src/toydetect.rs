//! A minimal steerable detector: one free parameter vector per query (class
//! logits plus nine pre-activation box parameters), no input features.
//!
//! Training alternates Hungarian matching and a gradient step on the set
//! loss. Whether query `q` ends up bound to label `q` depends on the index
//! cost weight `λ_m`, which is what the binding ablation measures.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boxset::ImageMeta;
use crate::error::{Error, Result};
use crate::geometry::{denormalize_target, normalize_target, Pose9DoF};
use crate::loss::{loss_gradients, set_loss, LossBreakdown, LossOptions, RawPrediction};
use crate::matching::{
    build_index_cost, match_predictions, CostCoeffs, GroundTruth, IndexCostMatrix, Prediction,
};
use crate::rng::{self, Op};
use crate::synth::{gen_poses, Jitter, SceneConfig};
use crate::volume::VolumeMeta;

/// Trained queries plus the grid their normalized boxes refer to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryBank {
    pub num_classes: usize,
    pub image: ImageMeta,
    /// Query `q` is at position `q - 1`.
    pub queries: Vec<RawPrediction>,
    /// Binding measured at the end of training, if any.
    pub binding: Option<Binding>,
}

impl QueryBank {
    /// Small Gaussian parameters around zero, so every query starts out
    /// predicting the same uniform class distribution and centered box.
    pub fn init(num_classes: usize, image: ImageMeta, noise: f64, seed: u64) -> Result<Self> {
        if num_classes == 0 || num_classes > u16::MAX as usize {
            return Err(Error::Config(format!(
                "num_classes must be in 1..=65535, got {num_classes}"
            )));
        }
        let normal =
            Normal::new(0.0, noise).map_err(|e| Error::Config(format!("init noise: {e}")))?;
        let mut rng = rng::stream(seed, 0, Op::Init);
        let queries = (1..=num_classes as u16)
            .map(|q| RawPrediction {
                query_index: q,
                logits: (0..=num_classes).map(|_| normal.sample(&mut rng)).collect(),
                box_params: std::array::from_fn(|_| normal.sample(&mut rng)),
            })
            .collect();
        Ok(Self {
            num_classes,
            image,
            queries,
            binding: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.image.to_meta()?;
        if self.queries.len() != self.num_classes {
            return Err(Error::Config(format!(
                "bank holds {} queries for {} classes",
                self.queries.len(),
                self.num_classes
            )));
        }
        for (i, q) in self.queries.iter().enumerate() {
            if q.query_index as usize != i + 1 || q.logits.len() != self.num_classes + 1 {
                return Err(Error::Config(format!("query slot {} is malformed", i + 1)));
            }
            if q.logits.iter().chain(&q.box_params).any(|v| !v.is_finite()) {
                return Err(Error::Config(format!(
                    "query {} has non-finite parameters",
                    q.query_index
                )));
            }
        }
        Ok(())
    }

    pub fn predictions(&self) -> Vec<Prediction> {
        self.queries.iter().map(RawPrediction::activate).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bank: Self = serde_json::from_str(&text)?;
        bank.validate()?;
        Ok(bank)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Label matched to each query (position `q - 1`); 0 means background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    pub query_to_label: Vec<u16>,
}

impl Binding {
    pub fn is_identity(&self) -> bool {
        self.query_to_label
            .iter()
            .enumerate()
            .all(|(i, &l)| l == 0 || l as usize == i + 1)
    }

    /// `Σ |q − label|` over matched queries.
    pub fn displacement(&self) -> u64 {
        self.query_to_label
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != 0)
            .map(|(i, &l)| (i as i64 + 1 - l as i64).unsigned_abs())
            .sum()
    }
}

impl std::fmt::Display for Binding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.query_to_label.iter().map(u16::to_string).collect();
        f.write_str(&parts.join(" "))
    }
}

/// Ground truth of one training scene, normalized to its grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub meta: VolumeMeta,
    pub gts: Vec<GroundTruth>,
}

impl TrainSample {
    pub fn from_poses(meta: &VolumeMeta, poses: &[Pose9DoF]) -> Result<Self> {
        let gts = poses
            .iter()
            .map(|p| {
                Ok(GroundTruth {
                    label: p.label,
                    target: normalize_target(p, meta)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            meta: meta.clone(),
            gts,
        })
    }
}

fn match_binding(
    preds: &[Prediction],
    gts: &[GroundTruth],
    num_classes: usize,
    coeffs: &CostCoeffs,
    index_cost: &IndexCostMatrix,
) -> Result<Binding> {
    let a = match_predictions(preds, gts, coeffs, index_cost)?;
    let mut query_to_label = vec![0u16; num_classes];
    for (q, label) in a.bindings(preds, gts) {
        query_to_label[q as usize - 1] = label;
    }
    Ok(Binding { query_to_label })
}

/// Query→label map under the optimal matching of the bank's predictions to
/// `gts` with `coeffs`.
pub fn binding_permutation(
    bank: &QueryBank,
    gts: &[GroundTruth],
    coeffs: &CostCoeffs,
) -> Result<Binding> {
    bank.validate()?;
    let index_cost = build_index_cost(bank.num_classes)?;
    match_binding(
        &bank.predictions(),
        gts,
        bank.num_classes,
        coeffs,
        &index_cost,
    )
}

/// Scenes used for training: `count` seeds of one scene configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub scene: SceneConfig,
    /// Scene `i` uses seed `scene.seed + i`.
    pub count: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig {
                jitter: Jitter {
                    translation_mm: 1.0,
                    scale_fraction: 0.02,
                    rotation_deg: 1.0,
                },
                ..SceneConfig::default()
            },
            count: 4,
        }
    }
}

impl DatasetConfig {
    pub fn samples(&self) -> Result<Vec<TrainSample>> {
        if self.count == 0 {
            return Err(Error::Config("dataset count must be >= 1".into()));
        }
        (0..self.count as u64)
            .map(|i| {
                let cfg = SceneConfig {
                    seed: self.scene.seed.wrapping_add(i),
                    ..self.scene.clone()
                };
                let (meta, poses) = gen_poses(&cfg)?;
                TrainSample::from_poses(&meta, &poses)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub coeffs: CostCoeffs,
    pub loss: LossOptions,
    /// Standard deviation of the initial query parameters.
    pub init_noise: f64,
    pub seed: u64,
    pub dataset: DatasetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            learning_rate: 0.05,
            coeffs: CostCoeffs::default(),
            loss: LossOptions::default(),
            init_noise: 1e-3,
            seed: 0,
            dataset: DatasetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.init_noise >= 0.0) {
            return Err(Error::Config(format!(
                "init_noise must be >= 0, got {}",
                self.init_noise
            )));
        }
        self.coeffs.validate()
    }
}

/// Per-epoch training record; losses are averaged over the scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub learning_rate: f64,
    pub total: f64,
    pub classification: f64,
    pub position: f64,
    pub scale: f64,
    pub angle: f64,
    pub displacement: u64,
    /// Labels of queries `1..=Q`, space separated, measured on the first scene.
    pub binding: String,
}

pub fn write_log_csv(log: &[LogRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for row in log {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub bank: QueryBank,
    pub log: Vec<LogRow>,
}

/// Losses and assignments of `queries` on every sample, parts averaged.
struct Evaluation {
    mean: LossBreakdown,
    assignments: Vec<crate::matching::MatchAssignment>,
}

fn evaluate(
    queries: &[RawPrediction],
    samples: &[TrainSample],
    config: &TrainConfig,
    index_cost: &IndexCostMatrix,
) -> Result<Evaluation> {
    let preds: Vec<Prediction> = queries.iter().map(RawPrediction::activate).collect();
    let s = samples.len() as f64;
    let mut mean = LossBreakdown {
        total: 0.0,
        classification: 0.0,
        position: 0.0,
        scale: 0.0,
        angle: 0.0,
        background: 0.0,
        per_gt: Vec::new(),
        clamped: false,
    };
    let mut assignments = Vec::with_capacity(samples.len());
    for sample in samples {
        let a = match_predictions(&preds, &sample.gts, &config.coeffs, index_cost)?;
        let l = set_loss(&preds, &sample.gts, &a, &config.coeffs, &config.loss)?;
        mean.total += l.total / s;
        mean.classification += l.classification / s;
        mean.position += l.position / s;
        mean.scale += l.scale / s;
        mean.angle += l.angle / s;
        mean.background += l.background / s;
        mean.clamped |= l.clamped;
        assignments.push(a);
    }
    Ok(Evaluation { mean, assignments })
}

/// Step-size halvings allowed per block and epoch before the block stays put.
const MAX_HALVINGS: usize = 30;

/// What one query is asked to predict in one scene, with the scene's share
/// of the mean loss.
struct Role {
    weight: f64,
    class: u16,
    target: Option<[f64; 9]>,
}

/// Per-query roles under fixed assignments. The loss is a sum over queries,
/// and within a query the box part is a sum over the nine components.
fn roles(
    samples: &[TrainSample],
    assignments: &[crate::matching::MatchAssignment],
    num_queries: usize,
    options: &LossOptions,
) -> Vec<Vec<Role>> {
    let mut out: Vec<Vec<Role>> = (0..num_queries).map(|_| Vec::new()).collect();
    let s = samples.len() as f64;
    for (sample, a) in samples.iter().zip(assignments) {
        let w = 1.0 / (sample.gts.len().max(1) as f64 * s);
        for (gt, &slot) in sample.gts.iter().zip(&a.gt_to_slot) {
            out[slot].push(Role {
                weight: w,
                class: gt.label,
                target: Some(gt.target.0),
            });
        }
        for slot in a.background_slots(num_queries) {
            out[slot].push(Role {
                weight: w * options.background_weight,
                class: 0,
                target: None,
            });
        }
    }
    out
}

fn class_block_loss(logits: &[f64], roles: &[Role], coeffs: &CostCoeffs) -> f64 {
    let p = crate::loss::softmax(logits);
    roles
        .iter()
        .map(|r| r.weight * coeffs.class * -p[r.class as usize].max(crate::loss::PROB_CLAMP).ln())
        .sum()
}

fn box_block_loss(k: usize, param: f64, roles: &[Role], coeffs: &CostCoeffs) -> f64 {
    let lambda = [coeffs.position, coeffs.scale, coeffs.angle][k / 3];
    let x = crate::loss::sigmoid(param);
    roles
        .iter()
        .filter_map(|r| r.target.map(|t| r.weight * lambda * (x - t[k]).abs()))
        .sum()
}

/// Backtracking along `-grad` for one block: the largest step `lr / 2^j`
/// that does not raise `f`, or no move at all.
fn backtrack<P: Clone>(
    current: &P,
    f: impl Fn(&P) -> f64,
    step: impl Fn(&P, f64) -> P,
    lr: f64,
) -> P {
    let base = f(current);
    let mut h = lr;
    for _ in 0..=MAX_HALVINGS {
        let trial = step(current, h);
        if f(&trial) <= base {
            return trial;
        }
        h /= 2.0;
    }
    current.clone()
}

/// Gradient descent on the mean set loss with re-matching every epoch.
///
/// Under the epoch's fixed matching the loss splits into independent blocks
/// (the logits of each query and each of its nine box parameters). Each
/// block backtracks from the configured learning rate until its own loss
/// does not rise. If re-matching then raises the total, the whole update is
/// halved until it does not, so the logged loss never increases.
pub fn train_on(config: &TrainConfig, samples: &[TrainSample]) -> Result<TrainOutcome> {
    config.validate()?;
    let first = samples
        .first()
        .ok_or_else(|| Error::Config("empty training set".into()))?;
    if samples.iter().any(|s| s.meta != first.meta) {
        return Err(Error::Config(
            "training scenes must share one image grid".into(),
        ));
    }
    let num_classes = samples
        .iter()
        .flat_map(|s| s.gts.iter().map(|g| g.label as usize))
        .max()
        .ok_or(Error::EmptyGroundTruth)?;
    let index_cost = build_index_cost(num_classes)?;
    let unbiased = config.coeffs.without_index_cost();

    let mut bank = QueryBank::init(
        num_classes,
        (&first.meta).into(),
        config.init_noise,
        config.seed,
    )?;
    // Every query starts from the same box, the logit of the mean target, so
    // the noise alone breaks the symmetry between queries.
    let all: Vec<&GroundTruth> = samples.iter().flat_map(|s| &s.gts).collect();
    let bias: [f64; 9] = std::array::from_fn(|k| {
        let m = all.iter().map(|g| g.target.0[k]).sum::<f64>() / all.len() as f64;
        let m = m.clamp(1e-6, 1.0 - 1e-6);
        (m / (1.0 - m)).ln()
    });
    for q in &mut bank.queries {
        for (b, add) in q.box_params.iter_mut().zip(bias) {
            *b += add;
        }
    }
    let mut current = evaluate(&bank.queries, samples, config, &index_cost)?;
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let mut grads: Vec<_> = bank
            .queries
            .iter()
            .map(|q| crate::loss::PredictionGrad::zeros(q.logits.len()))
            .collect();
        for (sample, a) in samples.iter().zip(&current.assignments) {
            let g = loss_gradients(&bank.queries, &sample.gts, a, &config.coeffs, &config.loss)?;
            for (acc, gi) in grads.iter_mut().zip(&g) {
                acc.add_scaled(gi, 1.0 / samples.len() as f64);
            }
        }
        let roles = roles(samples, &current.assignments, num_classes, &config.loss);
        let lr = config.learning_rate;
        let proposal: Vec<RawPrediction> = bank
            .queries
            .iter()
            .zip(&grads)
            .zip(&roles)
            .map(|((q, g), r)| {
                let logits = backtrack(
                    &q.logits,
                    |l| class_block_loss(l, r, &config.coeffs),
                    |l, h| l.iter().zip(&g.logits).map(|(p, d)| p - h * d).collect(),
                    lr,
                );
                let box_params = std::array::from_fn(|k| {
                    backtrack(
                        &q.box_params[k],
                        |&x| box_block_loss(k, x, r, &config.coeffs),
                        |&x, h| x - h * g.box_params[k],
                        lr,
                    )
                });
                RawPrediction {
                    query_index: q.query_index,
                    logits,
                    box_params,
                }
            })
            .collect();

        let mut fraction = 1.0;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<RawPrediction> = bank
                .queries
                .iter()
                .zip(&proposal)
                .map(|(q, p)| RawPrediction {
                    query_index: q.query_index,
                    logits: q
                        .logits
                        .iter()
                        .zip(&p.logits)
                        .map(|(a, b)| a + fraction * (b - a))
                        .collect(),
                    box_params: std::array::from_fn(|k| {
                        q.box_params[k] + fraction * (p.box_params[k] - q.box_params[k])
                    }),
                })
                .collect();
            let eval = evaluate(&trial, samples, config, &index_cost)?;
            if !eval.mean.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: eval.mean.total,
                });
            }
            if eval.mean.total <= current.mean.total {
                bank.queries = trial;
                current = eval;
                break;
            }
            fraction /= 2.0;
        }
        let lr = lr * fraction;
        let binding = match_binding(
            &bank.predictions(),
            &first.gts,
            num_classes,
            &unbiased,
            &index_cost,
        )?;
        let m = &current.mean;
        log.push(LogRow {
            epoch,
            learning_rate: lr,
            total: m.total,
            classification: m.classification,
            position: m.position,
            scale: m.scale,
            angle: m.angle,
            displacement: binding.displacement(),
            binding: binding.to_string(),
        });
        if epoch == config.epochs {
            bank.binding = Some(binding);
        }
        log::debug!("epoch {epoch}: loss {:.6} lr {lr:.3e}", m.total);
    }
    log::info!(
        "trained {} epochs, final loss {:.6}",
        config.epochs,
        current.mean.total
    );
    Ok(TrainOutcome { bank, log })
}

/// Generates the configured dataset and trains on it.
pub fn train_toy(config: &TrainConfig) -> Result<TrainOutcome> {
    let samples = config.dataset.samples()?;
    train_on(config, &samples)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    /// Boxes in ascending label order.
    pub boxes: Vec<Pose9DoF>,
    /// Scalar outputs decoded (class probabilities plus box parameters).
    pub work: usize,
}

/// Decodes only the queries of `requested`, which are bound one to one to
/// labels. Refuses banks whose binding is not the identity.
pub fn steerable_infer(
    bank: &QueryBank,
    requested: &BTreeSet<u16>,
    meta: &VolumeMeta,
) -> Result<Inference> {
    bank.validate()?;
    match &bank.binding {
        None => return Err(Error::NotSteerable("no binding recorded".into())),
        Some(b) if !b.is_identity() => {
            return Err(Error::NotSteerable(format!(
                "binding is {b}, displacement {}",
                b.displacement()
            )))
        }
        Some(_) => {}
    }
    let mut work = 0;
    let boxes = requested
        .iter()
        .map(|&label| {
            if label == 0 || label as usize > bank.num_classes {
                return Err(Error::UnknownLabel(label));
            }
            let pred = bank.queries[label as usize - 1].activate();
            work += pred.class_probs.len() + pred.target.0.len();
            Ok(denormalize_target(&pred.target, label, meta))
        })
        .collect::<Result<_>>()?;
    Ok(Inference { boxes, work })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub lambda_m: f64,
    pub seed: u64,
    pub displacement: u64,
    pub identity: bool,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub lambda_m: f64,
    pub runs: usize,
    pub identity_fraction: f64,
    pub mean_displacement: f64,
}

/// Trains one run per `(λ_m, seed)` pair in parallel; results come back in
/// input order.
pub fn ablate_lambda_m(
    config: &TrainConfig,
    lambdas: &[f64],
    seeds: &[u64],
) -> Result<(Vec<AblationRun>, Vec<AblationPoint>)> {
    let samples = config.dataset.samples()?;
    let jobs: Vec<(f64, u64)> = lambdas
        .iter()
        .flat_map(|&l| seeds.iter().map(move |&s| (l, s)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(lambda_m, seed)| {
            let cfg = TrainConfig {
                coeffs: config.coeffs.with_index(lambda_m),
                seed,
                ..config.clone()
            };
            let out = train_on(&cfg, &samples)?;
            let b = out
                .bank
                .binding
                .expect("binding recorded on the last epoch");
            Ok(AblationRun {
                lambda_m,
                seed,
                displacement: b.displacement(),
                identity: b.is_identity(),
                final_loss: out.log.last().map_or(f64::NAN, |r| r.total),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let points = lambdas
        .iter()
        .map(|&l| {
            let sel: Vec<&AblationRun> = runs.iter().filter(|r| r.lambda_m == l).collect();
            let n = sel.len().max(1) as f64;
            AblationPoint {
                lambda_m: l,
                runs: sel.len(),
                identity_fraction: sel.iter().filter(|r| r.identity).count() as f64 / n,
                mean_displacement: sel.iter().map(|r| r.displacement as f64).sum::<f64>() / n,
            }
        })
        .collect();
    Ok((runs, points))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(lambda_m: f64, seed: u64, epochs: usize, jitter: Jitter) -> TrainConfig {
        TrainConfig {
            epochs,
            coeffs: CostCoeffs::default().with_index(lambda_m),
            seed,
            dataset: DatasetConfig {
                scene: SceneConfig {
                    jitter,
                    ..SceneConfig::default()
                },
                count: 2,
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn index_cost_yields_identity_binding() {
        let out = train_toy(&quick(4.0, 3, 300, Jitter::default())).unwrap();
        assert!(out.bank.binding.as_ref().unwrap().is_identity());
        assert!(out.log.windows(2).all(|w| w[1].total <= w[0].total));
    }

    #[test]
    fn training_is_deterministic() {
        let a = train_toy(&quick(0.0, 5, 50, Jitter::default())).unwrap();
        let b = train_toy(&quick(0.0, 5, 50, Jitter::default())).unwrap();
        assert_eq!(a.bank, b.bank);
        assert_eq!(a.log, b.log);
    }

    fn identity_bank(c: usize) -> QueryBank {
        let meta = VolumeMeta::axis_aligned([10, 10, 10], [1.0; 3]).unwrap();
        let mut bank = QueryBank::init(c, (&meta).into(), 0.0, 0).unwrap();
        for (i, q) in bank.queries.iter_mut().enumerate() {
            q.logits[i + 1] = 10.0;
            q.box_params = [(i as f64 - c as f64 / 2.0) / c as f64; 9];
        }
        bank.binding = Some(Binding {
            query_to_label: (1..=c as u16).collect(),
        });
        bank
    }

    fn bank_targets(bank: &QueryBank) -> Vec<GroundTruth> {
        bank.predictions()
            .iter()
            .map(|p| GroundTruth {
                label: p.query_index,
                target: p.target,
            })
            .collect()
    }

    #[test]
    fn binding_examples() {
        let bank = identity_bank(6);
        let gts = bank_targets(&bank);
        let coeffs = CostCoeffs::default().without_index_cost();
        assert!(binding_permutation(&bank, &gts, &coeffs)
            .unwrap()
            .is_identity());

        let mut swapped = bank.clone();
        swapped.queries.swap(0, 1);
        swapped.queries[0].query_index = 1;
        swapped.queries[1].query_index = 2;
        let b = binding_permutation(&swapped, &gts, &coeffs).unwrap();
        assert_eq!(b.query_to_label, vec![2, 1, 3, 4, 5, 6]);
        assert_eq!(b.displacement(), 2);
    }

    #[test]
    fn steering_examples() {
        let bank = identity_bank(24);
        let meta = bank.image.to_meta().unwrap();
        let subset = BTreeSet::from([1, 5, 9]);
        let few = steerable_infer(&bank, &subset, &meta).unwrap();
        assert_eq!(
            few.boxes.iter().map(|b| b.label).collect::<Vec<_>>(),
            vec![1, 5, 9]
        );
        let all = steerable_infer(&bank, &(1..=24).collect(), &meta).unwrap();
        let restricted: Vec<Pose9DoF> = all
            .boxes
            .iter()
            .filter(|b| subset.contains(&b.label))
            .copied()
            .collect();
        assert_eq!(few.boxes, restricted);
        let four = steerable_infer(&bank, &(1..=4).collect(), &meta).unwrap();
        assert!(four.work < all.work);
        assert_eq!(all.work, 6 * four.work);

        assert!(matches!(
            steerable_infer(&bank, &BTreeSet::from([25]), &meta),
            Err(Error::UnknownLabel(25))
        ));
        let mut unbound = bank.clone();
        unbound.binding = Some(Binding {
            query_to_label: {
                let mut v: Vec<u16> = (1..=24).collect();
                v.swap(0, 1);
                v
            },
        });
        assert!(matches!(
            steerable_infer(&unbound, &subset, &meta),
            Err(Error::NotSteerable(_))
        ));
    }

    #[test]
    fn bank_json_round_trip() {
        let bank = identity_bank(5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.json");
        bank.save(&path).unwrap();
        assert_eq!(QueryBank::load(&path).unwrap(), bank);
    }
}
