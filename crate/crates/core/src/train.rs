//! Cross-validation splits, SGD training, MAE evaluation and a synthetic
//! crowd generator for small-scale experiments.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::augment::PatchRecord;
use crate::density::{AnnotationSet, Point};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::model::{count_from_density, predict_density, Network, Preset};
use crate::tensor::{LossNorm, Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Vec<String>>,
}

impl FoldPlan {
    pub fn validation(&self, fold: usize) -> Result<&[String]> {
        self.folds
            .get(fold)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid("FoldPlan::validation", format!("fold {fold} out of range 0..{}", self.k)))
    }

    /// Every id outside `fold`, in fold order.
    pub fn training(&self, fold: usize) -> Result<Vec<String>> {
        self.validation(fold)?;
        Ok(self
            .folds
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != fold)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect())
    }
}

/// Seeded shuffle, then round-robin assignment to `k` folds.
pub fn kfold_split(image_ids: &[String], k: usize, seed: u64) -> Result<FoldPlan> {
    if k == 0 || k > image_ids.len() {
        return Err(Error::invalid(
            "kfold_split",
            format!("k must be in 1..={}, got {k}", image_ids.len()),
        ));
    }
    let mut ids = image_ids.to_vec();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (i, id) in ids.into_iter().enumerate() {
        folds[i % k].push(id);
    }
    Ok(FoldPlan { k, seed, folds })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub preset: Preset,
    pub lr: f32,
    pub momentum: f32,
    pub batch_size: usize,
    pub iterations: usize,
    /// Log (and validate, when a validation set is given) every this many
    /// iterations.
    pub eval_interval: usize,
    pub seed: u64,
    pub loss_norm: LossNorm,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::paper()
    }
}

impl TrainConfig {
    pub fn paper() -> Self {
        TrainConfig {
            preset: Preset::Paper,
            lr: 1e-7,
            momentum: 0.9,
            batch_size: 16,
            iterations: 100_000,
            eval_interval: 1000,
            seed: 0,
            loss_norm: LossNorm::Batch,
        }
    }

    pub fn toy() -> Self {
        TrainConfig {
            preset: Preset::Toy,
            lr: TOY_LR,
            momentum: 0.9,
            batch_size: 16,
            iterations: 3000,
            eval_interval: 100,
            seed: 0,
            loss_norm: LossNorm::Batch,
        }
    }

    pub fn for_preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => TrainConfig::paper(),
            Preset::Toy => TrainConfig::toy(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("training.lr must be finite and >= 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("training.momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("training.batch_size must be at least 1".into()));
        }
        if self.eval_interval == 0 {
            return Err(Error::Config("training.eval_interval must be at least 1".into()));
        }
        Ok(())
    }
}

const TOY_LR: f32 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub iteration: usize,
    /// Mean training loss over the iterations since the previous row.
    pub train_loss: f64,
    pub val_mae: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<TrainLogRow>,
}

/// An image to count, with its reference annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSample {
    pub image: GrayImage,
    pub annotations: AnnotationSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub image_id: String,
    pub actual: f64,
    pub predicted: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub mae: f64,
    pub rows: Vec<EvalRow>,
}

#[derive(Clone, Debug)]
pub struct BestModel {
    pub network: Network,
    pub iteration: usize,
    pub mae: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters after the last iteration.
    pub network: Network,
    /// Lowest validation MAE seen at a log point, when validating.
    pub best: Option<BestModel>,
    pub log: TrainLog,
}

/// Stacks patches into `(B, 1, 225, 225)` image and target tensors.
pub fn batch_tensors(records: &[&PatchRecord]) -> Result<(Tensor, Tensor)> {
    let first = records.first().ok_or(Error::Empty { what: "batch" })?;
    let (h, w) = (first.image.height, first.image.width);
    let shape = Shape::new(records.len(), 1, h, w);
    let mut images = Vec::with_capacity(shape.len());
    let mut targets = Vec::with_capacity(shape.len());
    for r in records {
        if (r.image.height, r.image.width) != (h, w) || (r.gt.height, r.gt.width) != (h, w) {
            return Err(Error::invalid("batch_tensors", "patches in a batch differ in size"));
        }
        images.extend(r.image.pixels.iter().map(|&p| p as f32));
        targets.extend_from_slice(&r.gt.values);
    }
    Ok((Tensor::from_vec(shape, images)?, Tensor::from_vec(shape, targets)?))
}

/// Mean loss of `net` over all records, evaluated in batches.
pub fn dataset_loss(net: &Network, records: &[PatchRecord], batch: usize, norm: LossNorm) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty { what: "patch set" });
    }
    let mut total = 0.0;
    for chunk in records.chunks(batch.max(1)) {
        let refs: Vec<&PatchRecord> = chunk.iter().collect();
        let (x, y) = batch_tensors(&refs)?;
        total += net.loss(&x, &y, norm)? * chunk.len() as f64;
    }
    Ok(total / records.len() as f64)
}

/// Samples record indices without replacement, reshuffling each epoch.
struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl EpochSampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        EpochSampler { order, pos: 0, rng }
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

pub fn train(
    net: Network,
    records: &[PatchRecord],
    cfg: &TrainConfig,
    validation: Option<&[EvalSample]>,
) -> Result<TrainOutcome> {
    train_with(net, records, cfg, validation, |_| {})
}

/// [`train`] with a callback invoked for every log row as it is produced.
pub fn train_with(
    mut net: Network,
    records: &[PatchRecord],
    cfg: &TrainConfig,
    validation: Option<&[EvalSample]>,
    mut on_row: impl FnMut(&TrainLogRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::Empty { what: "patch set" });
    }
    let start = Instant::now();
    let mut sampler = EpochSampler::new(records.len(), cfg.seed);
    let mut log = TrainLog::default();
    let mut best: Option<BestModel> = None;
    let (mut loss_sum, mut loss_n) = (0.0f64, 0usize);

    net.zero_grad();
    for it in 1..=cfg.iterations {
        let batch: Vec<&PatchRecord> = (0..cfg.batch_size).map(|_| &records[sampler.next()]).collect();
        let (x, y) = batch_tensors(&batch)?;
        let loss = net.accumulate_gradients(&x, &y, cfg.loss_norm)?;
        let max_grad = net.max_abs_grad();
        if !loss.is_finite() || !max_grad.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: it,
                loss,
                max_grad,
            });
        }
        net.sgd_step(cfg.lr, cfg.momentum)?;
        loss_sum += loss;
        loss_n += 1;

        if it % cfg.eval_interval == 0 || it == cfg.iterations {
            let val_mae = match validation {
                Some(v) => Some(evaluate_mae(&net, v)?.mae),
                None => None,
            };
            if let Some(mae) = val_mae {
                if best.as_ref().is_none_or(|b| mae < b.mae) {
                    best = Some(BestModel {
                        network: net.clone(),
                        iteration: it,
                        mae,
                    });
                }
            }
            let row = TrainLogRow {
                iteration: it,
                train_loss: loss_sum / loss_n as f64,
                val_mae,
                wall_time_s: start.elapsed().as_secs_f64(),
            };
            on_row(&row);
            log.rows.push(row);
            (loss_sum, loss_n) = (0.0, 0);
        }
    }
    Ok(TrainOutcome {
        network: net,
        best,
        log,
    })
}

/// Predicted versus annotated count for every image, and their mean
/// absolute difference.
pub fn evaluate_mae(net: &Network, samples: &[EvalSample]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Empty { what: "evaluation set" });
    }
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        let density = predict_density(net, &s.image.to_tensor())?;
        rows.push(EvalRow {
            image_id: s.annotations.image_id.clone(),
            actual: s.annotations.count() as f64,
            predicted: count_from_density(&density),
        });
    }
    Ok(Evaluation {
        mae: mae_of(&rows),
        rows,
    })
}

pub fn mae_of(rows: &[EvalRow]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().map(|r| (r.predicted - r.actual).abs()).sum::<f64>() / rows.len() as f64
}

/// MAE of always predicting `mean_count`.
pub fn constant_baseline_mae(mean_count: f64, samples: &[EvalSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| (s.annotations.count() as f64 - mean_count).abs()).sum::<f64>() / samples.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub images: usize,
    pub min_count: usize,
    pub max_count: usize,
    pub width: usize,
    pub height: usize,
    /// Minimum distance between two planted heads, in pixels.
    pub min_separation: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            images: 50,
            min_count: 20,
            max_count: 200,
            width: 256,
            height: 256,
            min_separation: 3.0,
            seed: 0,
        }
    }
}

const SYNTH_MAX_COUNT: usize = 5000;
const PLACEMENT_ATTEMPTS: usize = 10_000;

/// Random crowds: heads are bright blobs with jittered radius on a noisy
/// background, and the returned annotations are the exact blob centres.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Vec<EvalSample>> {
    if cfg.min_count > cfg.max_count || cfg.max_count > SYNTH_MAX_COUNT {
        return Err(Error::Config(format!(
            "count range {}..={} must be ordered and within 0..={SYNTH_MAX_COUNT}",
            cfg.min_count, cfg.max_count
        )));
    }
    if cfg.width < 225 || cfg.height < 225 {
        return Err(Error::Config(format!(
            "synthetic images must be at least 225x225, got {}x{}",
            cfg.width, cfg.height
        )));
    }
    let sep = cfg.min_separation.max(0.0);
    if cfg.max_count as f64 * sep * sep > (cfg.width * cfg.height) as f64 {
        return Err(Error::InfeasibleDensity {
            count: cfg.max_count,
            separation: sep as f32,
            width: cfg.width,
            height: cfg.height,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let width_digits = cfg.images.max(1).to_string().len();
    (0..cfg.images)
        .map(|i| {
            let count = rng.random_range(cfg.min_count..=cfg.max_count);
            let points = place_points(&mut rng, count, cfg)?;
            let image = render_crowd(&mut rng, &points, cfg.width, cfg.height);
            Ok(EvalSample {
                image,
                annotations: AnnotationSet::new(format!("synth_{i:0width_digits$}"), points),
            })
        })
        .collect()
}

fn place_points(rng: &mut ChaCha8Rng, count: usize, cfg: &SynthConfig) -> Result<Vec<Point>> {
    let sep2 = cfg.min_separation * cfg.min_separation;
    let mut points: Vec<Point> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let p = Point::new(
                rng.random_range(0.0..cfg.width as f64),
                rng.random_range(0.0..cfg.height as f64),
            );
            if points.iter().all(|q| (q.x - p.x).powi(2) + (q.y - p.y).powi(2) >= sep2) {
                points.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InfeasibleDensity {
                count,
                separation: cfg.min_separation as f32,
                width: cfg.width,
                height: cfg.height,
            });
        }
    }
    Ok(points)
}

fn render_crowd(rng: &mut ChaCha8Rng, points: &[Point], width: usize, height: usize) -> GrayImage {
    let noise = Normal::new(0.0, 8.0).expect("positive std");
    let background = rng.random_range(40.0..80.0);
    let mut canvas: Vec<f64> = (0..width * height).map(|_| background + noise.sample(rng)).collect();
    for p in points {
        let radius: f64 = rng.random_range(1.2..2.2);
        let amplitude: f64 = rng.random_range(110.0..170.0);
        let reach = (3.0 * radius).ceil() as isize;
        let (cx, cy) = (p.x.floor() as isize, p.y.floor() as isize);
        for y in (cy - reach).max(0)..(cy + reach + 1).min(height as isize) {
            for x in (cx - reach).max(0)..(cx + reach + 1).min(width as isize) {
                let dx = x as f64 + 0.5 - p.x;
                let dy = y as f64 + 0.5 - p.y;
                canvas[y as usize * width + x as usize] +=
                    amplitude * (-(dx * dx + dy * dy) / (2.0 * radius * radius)).exp();
            }
        }
    }
    GrayImage {
        width,
        height,
        pixels: canvas.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect(),
    }
}
