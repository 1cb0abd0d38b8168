//! Training loop, evaluation, tiled restoration and the ablation sweep.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::checkpoint::{config_hash, save_checkpoint};
use super::config::TrainConfig;
use super::optim::{adamw_step, cosine_anneal_lr, OptimState};
use crate::error::{Error, Result};
use crate::losses::{image_metrics, total_loss, MetricsReport, SsimConfig};
use crate::params::ParamStore;
use crate::srtransformer::{build_model, Model, ModelConfig};
use crate::synthdata::{dims, rng_for, splitmix64, Augmenter, Dataset, Image, ImagePair, Split};
use crate::tensor::{Float, Tape, Tensor};

pub const LOSS_LOG_HEADER: &str = "step,lr,mse,ssim,total";
pub const LOSS_LOG_FILE: &str = "loss_log.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

const STREAM_SHUFFLE: u64 = 10;

/// Loss values of one optimization step, measured before the update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    /// 1-based step index.
    pub step: usize,
    pub lr: f64,
    pub mse: f64,
    /// `1 − SSIM`.
    pub ssim: f64,
    pub total: f64,
}

impl LossRecord {
    pub fn to_line(&self) -> String {
        format!("{},{:?},{:?},{:?},{:?}", self.step, self.lr, self.mse, self.ssim, self.total)
    }
}

/// The CSV text of a loss log.
pub fn loss_log_text(log: &[LossRecord]) -> String {
    let mut s = format!("{LOSS_LOG_HEADER}\n");
    for r in log {
        s.push_str(&r.to_line());
        s.push('\n');
    }
    s
}

pub struct TrainOutcome {
    pub model: Model,
    pub store: ParamStore<f32>,
    pub optim: OptimState<f32>,
    pub log: Vec<LossRecord>,
}

/// Runs `f` on a pool capped at `threads` workers, or the global pool.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Stacks `[3,H,W]` images into a `[B,3,H,W]` batch.
pub fn stack<T: Float>(images: &[&Image]) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let (h, w) = dims(first)?;
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if img.shape() != first.shape() {
            return Err(Error::shape("stack", img.shape(), first.shape()));
        }
        data.extend(img.data().iter().map(|&v| T::of(v)));
    }
    Tensor::new(&[images.len(), 3, h, w], data)
}

/// Seeded epoch-wise sampling without replacement.
struct BatchSampler {
    seed: u64,
    len: usize,
    epoch: usize,
    order: Vec<usize>,
}

impl BatchSampler {
    fn new(seed: u64, len: usize) -> Self {
        let mut s = BatchSampler {
            seed,
            len,
            epoch: 0,
            order: Vec::new(),
        };
        s.shuffle(0);
        s
    }

    fn shuffle(&mut self, epoch: usize) {
        self.epoch = epoch;
        self.order = (0..self.len).collect();
        self.order
            .shuffle(&mut rng_for(splitmix64(self.seed ^ splitmix64(epoch as u64)), STREAM_SHUFFLE));
    }

    /// Pair index of the `k`-th sample drawn over the whole run.
    fn index(&mut self, k: usize) -> usize {
        let epoch = k / self.len;
        if epoch != self.epoch {
            self.shuffle(epoch);
        }
        self.order[k % self.len]
    }
}

/// Trains on in-memory pairs. `on_step` sees every record as it is produced.
pub fn train_on(
    cfg: &TrainConfig,
    pairs: &[ImagePair],
    mut on_step: impl FnMut(&LossRecord, &ParamStore<f32>, &OptimState<f32>) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if pairs.len() < cfg.batch_size {
        return Err(Error::Data(format!(
            "{} training pairs, fewer than batch size {}",
            pairs.len(),
            cfg.batch_size
        )));
    }
    let (model, mut store) = build_model::<f32>(&cfg.model, cfg.seed)?;
    let mut optim = OptimState::new(&store, cfg.optimizer);
    let augmenter = Augmenter {
        crop: cfg.train_resolution,
        mixup_alpha: cfg.mixup_alpha,
        mixup_prob: cfg.mixup_prob,
    };
    let ssim_cfg = SsimConfig::default();
    let mut sampler = BatchSampler::new(cfg.seed, pairs.len());
    let mut log = Vec::with_capacity(cfg.total_steps);
    for step in 0..cfg.total_steps {
        let lr = cosine_anneal_lr(step, cfg.total_steps, cfg.lr_max, cfg.lr_min)?;
        let picks: Vec<(usize, u64)> = (0..cfg.batch_size)
            .map(|i| {
                let k = step * cfg.batch_size + i;
                (sampler.index(k), splitmix64(cfg.seed ^ splitmix64(k as u64 ^ 0xA5A5)))
            })
            .collect();
        let batch = picks
            .par_iter()
            .map(|&(idx, seed)| augmenter.sample(pairs, idx, seed))
            .collect::<Result<Vec<_>>>()?;
        let stained = stack::<f32>(&batch.iter().map(|p| &p.stained).collect::<Vec<_>>())?;
        let clean = stack::<f32>(&batch.iter().map(|p| &p.clean).collect::<Vec<_>>())?;

        let tape = Tape::new();
        let bound = store.bind(&tape)?;
        let x = tape.constant(stained)?;
        let y = tape.constant(clean)?;
        let restored = model.forward(&bound, x)?;
        let terms = total_loss(restored, y, cfg.alpha, &ssim_cfg)?;
        let record = LossRecord {
            step: step + 1,
            lr,
            mse: terms.mse.item().as_f64(),
            ssim: terms.ssim.item().as_f64(),
            total: terms.total.item().as_f64(),
        };
        if !record.total.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at step {} (mse {}, ssim loss {})",
                record.step, record.mse, record.ssim
            )));
        }
        let grads = tape.backward(terms.total)?;
        store.absorb(&bound, grads);
        drop(bound);
        drop(tape);
        adamw_step(&mut store, &mut optim, lr)?;
        store.zero_grads();
        if store.iter().any(|p| !p.value.is_finite()) {
            return Err(Error::Numeric(format!("non-finite parameter after step {}", record.step)));
        }
        log.push(record);
        on_step(&record, &store, &optim)?;
    }
    Ok(TrainOutcome {
        model,
        store,
        optim,
        log,
    })
}

/// Trains on the training split of `cfg.dataset`. With `cfg.out_dir` set,
/// writes the config, the loss log, interval checkpoints and `final.ckpt`.
pub fn train(cfg: &TrainConfig, mut progress: impl FnMut(&LossRecord) + Send) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dataset = Dataset::open(&cfg.dataset)?;
    with_threads(cfg.threads, || -> Result<TrainOutcome> {
        let pairs = dataset.load(Split::Train)?;
        if let Some(dir) = &cfg.out_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("config.txt");
            fs::write(&path, cfg.to_text()).map_err(|e| Error::io(path, e))?;
        }
        let outcome = train_on(cfg, &pairs, |record, store, optim| {
            progress(record);
            if let Some(dir) = &cfg.out_dir {
                if cfg.checkpoint_interval > 0 && record.step % cfg.checkpoint_interval == 0 {
                    let path = dir.join(format!("step_{:06}.ckpt", record.step));
                    save_checkpoint(&path, &cfg.model, store, Some(optim), record.step as u64)?;
                }
            }
            Ok(())
        })?;
        if let Some(dir) = &cfg.out_dir {
            let path = dir.join(LOSS_LOG_FILE);
            fs::write(&path, loss_log_text(&outcome.log)).map_err(|e| Error::io(path, e))?;
            save_checkpoint(
                &dir.join(FINAL_CHECKPOINT),
                &cfg.model,
                &outcome.store,
                Some(&outcome.optim),
                outcome.log.len() as u64,
            )?;
        }
        Ok(outcome)
    })?
}

/// Extends `img` to `ph × pw` by repeating its last row and column.
pub fn pad_replicate(img: &Image, ph: usize, pw: usize) -> Result<Image> {
    let (h, w) = dims(img)?;
    if ph < h || pw < w {
        return Err(Error::InvalidArgument(format!("cannot pad {h}x{w} down to {ph}x{pw}")));
    }
    let src = img.data();
    Ok(Tensor::from_fn(&[3, ph, pw], |i| {
        let (c, y, x) = (i / (ph * pw), i / pw % ph, i % pw);
        src[c * h * w + y.min(h - 1) * w + x.min(w - 1)]
    }))
}

/// Top-left `h × w` region of `img`.
fn crop_to(img: &Image, h: usize, w: usize) -> Result<Image> {
    crate::synthdata::crop_rect(img, 0, 0, h, w)
}

/// Model output for one image of any size: padded to the size multiple,
/// restored in a single pass, cropped back and clamped to `[0,1]`.
pub fn restore_single<T: Float>(model: &Model, store: &ParamStore<T>, img: &Image) -> Result<Image> {
    let (h, w) = dims(img)?;
    let m = model.config.size_multiple();
    let (ph, pw) = (h.next_multiple_of(m), w.next_multiple_of(m));
    let padded = pad_replicate(img, ph, pw)?;
    let out = model.restore(store, &stack::<T>(&[&padded])?)?;
    let out = Tensor::new(&[3, ph, pw], out.to_f64_vec())?;
    crop_to(&out, h, w)
}

/// Start offsets of tiles of side `tile` covering `len`, `overlap` apart.
fn tile_starts(len: usize, tile: usize, overlap: usize) -> Vec<usize> {
    if len <= tile {
        return vec![0];
    }
    let stride = tile - overlap;
    let mut starts: Vec<usize> = (0..).map(|k| k * stride).take_while(|&s| s + tile < len).collect();
    starts.push(len - tile);
    starts
}

/// Feathering weights of one tile along an axis: linear ramps of width
/// `overlap` on sides that border another tile, `1` elsewhere.
fn feather(tile: usize, overlap: usize, ramp_in: bool, ramp_out: bool) -> Vec<f64> {
    let band = (overlap + 1) as f64;
    (0..tile)
        .map(|i| {
            let mut w: f64 = 1.0;
            if ramp_in {
                w = w.min((i + 1) as f64 / band);
            }
            if ramp_out {
                w = w.min((tile - i) as f64 / band);
            }
            w
        })
        .collect()
}

/// Restores `img`, splitting it into overlapping `tile × tile` pieces when
/// it is larger than `tile`. Overlaps are blended with feathered weights as
/// a running weighted mean, so identical tile values reproduce exactly.
pub fn restore_image<T: Float>(
    model: &Model,
    store: &ParamStore<T>,
    img: &Image,
    tile: usize,
    overlap: usize,
) -> Result<Image> {
    let (h, w) = dims(img)?;
    let m = model.config.size_multiple();
    if tile == 0 || !tile.is_multiple_of(m) {
        return Err(Error::Config(format!("tile {tile} must be a positive multiple of {m}")));
    }
    if 2 * overlap >= tile {
        return Err(Error::Config(format!("overlap {overlap} must be below half the tile {tile}")));
    }
    if h <= tile && w <= tile {
        return restore_single(model, store, img);
    }
    // Axes shorter than a tile are padded to the size multiple and use one tile.
    let (th, tw) = (tile.min(h.next_multiple_of(m)), tile.min(w.next_multiple_of(m)));
    let (ph, pw) = (h.max(th), w.max(tw));
    let padded = pad_replicate(img, ph, pw)?;
    let (ys, xs) = (tile_starts(ph, th, overlap), tile_starts(pw, tw, overlap));
    let mut acc = vec![0.0f64; 3 * ph * pw];
    let mut wsum = vec![0.0f64; ph * pw];
    for (iy, &y0) in ys.iter().enumerate() {
        let wy = feather(th, overlap, iy > 0, iy + 1 < ys.len());
        for (ix, &x0) in xs.iter().enumerate() {
            let wx = feather(tw, overlap, ix > 0, ix + 1 < xs.len());
            let piece = crate::synthdata::crop_rect(&padded, y0, x0, th, tw)?;
            let out = restore_single(model, store, &piece)?;
            let od = out.data();
            for y in 0..th {
                for x in 0..tw {
                    let p = (y0 + y) * pw + x0 + x;
                    let wgt = wy[y] * wx[x];
                    wsum[p] += wgt;
                    let share = wgt / wsum[p];
                    for c in 0..3 {
                        let a = &mut acc[c * ph * pw + p];
                        *a += share * (od[c * th * tw + y * tw + x] - *a);
                    }
                }
            }
        }
    }
    crop_to(&Tensor::new(&[3, ph, pw], acc)?, h, w)
}

/// Restored-vs-clean metrics and the stained-vs-clean baseline.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub restored: MetricsReport,
    pub input: MetricsReport,
}

/// Evaluates `store` on `pairs` in double precision; `ids` name the images.
pub fn evaluate(
    model: &Model,
    store: &ParamStore<f32>,
    pairs: &[ImagePair],
    ids: &[String],
    tile: usize,
    overlap: usize,
    label: &str,
) -> Result<Evaluation> {
    if ids.len() != pairs.len() {
        return Err(Error::InvalidArgument("one id per pair required".into()));
    }
    let store64: ParamStore<f64> = store.cast();
    let hash = config_hash(&model.config);
    let rows = pairs
        .par_iter()
        .zip(ids)
        .map(|(pair, id)| {
            let out = restore_image(model, &store64, &pair.stained, tile, overlap)?;
            Ok((
                image_metrics(id.clone(), &out, &pair.clean)?,
                image_metrics(id.clone(), &pair.stained, &pair.clean)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut restored = MetricsReport::new(label, hash.clone());
    let mut input = MetricsReport::new("Input", hash);
    for (r, i) in rows {
        restored.images.push(r);
        input.images.push(i);
    }
    Ok(Evaluation { restored, input })
}

/// Evaluates on one split of a dataset directory.
pub fn evaluate_split(
    model: &Model,
    store: &ParamStore<f32>,
    dataset: &Dataset,
    split: Split,
    tile: usize,
    overlap: usize,
    label: &str,
) -> Result<Evaluation> {
    let entries = dataset.split(split);
    let pairs = dataset.load(split)?;
    let ids: Vec<String> = entries.iter().map(|e| format!("{:06}", e.id)).collect();
    evaluate(model, store, &pairs, &ids, tile, overlap, label)
}

/// One row of the module ablation.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub label: String,
    pub docmemory: bool,
    pub srtransformer: bool,
    pub final_loss: f64,
    pub evaluation: Evaluation,
}

/// The four module toggles, in table order.
pub fn ablation_configs(base: &ModelConfig) -> Vec<(String, ModelConfig)> {
    [(false, false), (true, false), (false, true), (true, true)]
        .into_iter()
        .map(|(dm, srt)| {
            let label = match (dm, srt) {
                (false, false) => "neither",
                (true, false) => "docmemory",
                (false, true) => "srtransformer",
                (true, true) => "both",
            };
            let cfg = ModelConfig {
                enable_docmemory: dm,
                enable_srtransformer: srt,
                ..base.clone()
            };
            (label.to_string(), cfg)
        })
        .collect()
}

/// Trains and evaluates every ablation configuration on the same data.
pub fn ablate(cfg: &TrainConfig, mut progress: impl FnMut(&str, &LossRecord) + Send) -> Result<Vec<AblationRow>> {
    let dataset = Dataset::open(&cfg.dataset)?;
    with_threads(cfg.threads, || -> Result<Vec<AblationRow>> {
        let pairs = dataset.load(Split::Train)?;
        let mut rows = Vec::new();
        for (label, model_cfg) in ablation_configs(&cfg.model) {
            let run = TrainConfig {
                model: model_cfg.clone(),
                out_dir: None,
                ..cfg.clone()
            };
            let outcome = train_on(&run, &pairs, |r, _, _| {
                progress(&label, r);
                Ok(())
            })?;
            let evaluation = evaluate_split(
                &outcome.model,
                &outcome.store,
                &dataset,
                Split::Test,
                cfg.eval_resolution,
                cfg.eval_overlap,
                &label,
            )?;
            rows.push(AblationRow {
                label: label.clone(),
                docmemory: model_cfg.enable_docmemory,
                srtransformer: model_cfg.enable_srtransformer,
                final_loss: outcome.log.last().map_or(f64::NAN, |r| r.total),
                evaluation,
            });
        }
        Ok(rows)
    })?
}

/// Plain-text comparison table of an ablation.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = format!(
        "{:<14} {:>9} {:>13} {:>9} {:>7} {:>7} {:>10}\n",
        "config", "docmemory", "srtransformer", "psnr", "ssim", "mae", "final_loss"
    );
    if let Some(first) = rows.first() {
        let i = first.evaluation.input.summary();
        s.push_str(&format!(
            "{:<14} {:>9} {:>13} {:>9.3} {:>7.4} {:>7.3} {:>10}\n",
            "Input", "-", "-", i.psnr, i.ssim, i.mae, "-"
        ));
    }
    for r in rows {
        let m = r.evaluation.restored.summary();
        let mark = |b: bool| if b { "on" } else { "off" };
        s.push_str(&format!(
            "{:<14} {:>9} {:>13} {:>9.3} {:>7.4} {:>7.3} {:>10.5}\n",
            r.label,
            mark(r.docmemory),
            mark(r.srtransformer),
            m.psnr,
            m.ssim,
            m.mae,
            r.final_loss
        ));
    }
    s
}

/// Reads a checkpoint and returns the model it describes with its weights.
pub fn load_model(path: &Path) -> Result<(Model, ParamStore<f32>, super::checkpoint::Checkpoint)> {
    let ck = super::checkpoint::read_checkpoint(path)?;
    let (model, mut store) = build_model::<f32>(&ck.config, 0)?;
    ck.load_into(&ck.config, &mut store)?;
    Ok((model, store, ck))
}
