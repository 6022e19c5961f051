//! Adaptive fusion, the composite loss and the staged training loop.

use graphsent_autograd::{Adam, Graph, Schedule, Tensor, Var};

use crate::dataset::{shuffled, Dataset};
use crate::features::SplitPart;
use crate::nodeformer::{Model, Variant};
use crate::{Error, Result};

/// Binary cross-entropy probability clamp.
pub const P_CLAMP: f64 = 1e-7;
/// Cross-sections with a smaller standard deviation are skipped in the
/// correlation term.
pub const CORR_MIN_STD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub mse: f64,
    pub direction: f64,
    pub corr: f64,
    pub reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mse: 1.0,
            direction: 0.5,
            corr: 0.2,
            reg: 1e-4,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.mse > 0.0) || self.direction < 0.0 || self.corr < 0.0 || self.reg < 0.0 {
            return Err(Error::Config(format!("invalid loss weights {self:?}")));
        }
        Ok(())
    }
}

/// `alpha = sigmoid(w . [v1, v2, v3, mean|S|] + b)` for one day.
pub fn compute_gate(vols: [f64; 3], mean_abs_sent: f64, w: &[f64; 4], b: f64) -> f64 {
    let z = w[0] * vols[0] + w[1] * vols[1] + w[2] * vols[2] + w[3] * mean_abs_sent + b;
    graphsent_autograd::sigmoid(z)
}

/// `alpha * y_node + (1 - alpha) * y_sent`.
pub fn fuse(y_node: f64, y_sent: f64, alpha: f64) -> f64 {
    alpha * y_node + (1.0 - alpha) * y_sent
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub mse: f64,
    pub bce: f64,
    pub corr: f64,
    pub reg: f64,
    /// Cross-sections skipped in the correlation term.
    pub skipped: usize,
}

/// Composite loss over `[B, N, H]` predictions. `ret_scale` (`[N]`) maps the
/// first horizon's normalized returns back to returns for the correlation
/// term; `params` enter the L2 penalty.
#[allow(clippy::too_many_arguments)]
pub fn composite_loss(
    g: &mut Graph,
    pred: Var,
    p_up: Var,
    z: Var,
    up: Var,
    ret_scale: &[f64],
    params: &[Var],
    w: &LossWeights,
) -> Result<(Var, LossParts)> {
    let sp = g.shape(pred).to_vec();
    if g.shape(z) != sp.as_slice() || g.shape(p_up) != sp.as_slice() || g.shape(up) != sp.as_slice() {
        return Err(Error::Input(format!(
            "prediction shape {sp:?} does not match targets {:?}",
            g.shape(z)
        )));
    }
    let (b, n) = (sp[0], sp[1]);
    let diff = g.sub(pred, z)?;
    let sq = g.square(diff);
    let mse = g.mean(sq);
    let mut total = g.scale(mse, w.mse);
    let mut parts = LossParts {
        mse: g.value(mse).item(),
        ..Default::default()
    };

    if w.direction > 0.0 {
        let p = g.clamp(p_up, P_CLAMP, 1.0 - P_CLAMP);
        let lp = g.log(p);
        let a = g.mul(up, lp)?;
        let q = g.neg(p);
        let q = g.add_scalar(q, 1.0);
        let lq = g.log(q);
        let not_up = g.neg(up);
        let not_up = g.add_scalar(not_up, 1.0);
        let bb = g.mul(not_up, lq)?;
        let s = g.add(a, bb)?;
        let m = g.mean(s);
        let bce = g.neg(m);
        parts.bce = g.value(bce).item();
        let t = g.scale(bce, w.direction);
        total = g.add(total, t)?;
    }

    if w.corr > 0.0 {
        let scale = g.constant(Tensor::new(&[n], ret_scale.to_vec())?);
        let first = |g: &mut Graph, v: Var| -> Result<Var> {
            let s = g.slice(v, 2, 0, 1)?;
            let s = g.reshape(s, &[b, n])?;
            Ok(g.mul(s, scale)?)
        };
        let pr = first(g, pred)?;
        let ar = first(g, z)?;
        let std = |row: &[f64]| {
            let m = row.iter().sum::<f64>() / row.len() as f64;
            (row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / row.len() as f64).sqrt()
        };
        let keep: Vec<usize> = (0..b)
            .filter(|&r| {
                let pv = &g.value(pr).data()[r * n..(r + 1) * n];
                let av = &g.value(ar).data()[r * n..(r + 1) * n];
                std(pv) >= CORR_MIN_STD && std(av) >= CORR_MIN_STD
            })
            .collect();
        parts.skipped = b - keep.len();
        if !keep.is_empty() {
            let pk = g.index_select(pr, &keep)?;
            let ak = g.index_select(ar, &keep)?;
            let rho = g.pearson_rows(pk, ak)?;
            let mr = g.mean(rho);
            let l = g.neg(mr);
            let l = g.add_scalar(l, 1.0);
            parts.corr = g.value(l).item();
            let t = g.scale(l, w.corr);
            total = g.add(total, t)?;
        }
    }

    if w.reg > 0.0 && !params.is_empty() {
        let mut acc: Option<Var> = None;
        for &p in params {
            let s = g.square(p);
            let s = g.sum(s);
            acc = Some(match acc {
                Some(a) => g.add(a, s)?,
                None => s,
            });
        }
        let reg = acc.expect("non-empty");
        parts.reg = g.value(reg).item();
        let t = g.scale(reg, w.reg);
        total = g.add(total, t)?;
    }
    parts.total = g.value(total).item();
    Ok((total, parts))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageConfig {
    pub epochs: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub stages: [StageConfig; 3],
    /// Layers unfrozen (from the top) in the second stage.
    pub top_layers: usize,
    pub batch_size: usize,
    pub accum_steps: usize,
    pub warmup_steps: u64,
    pub weights: LossWeights,
    /// Use at most this many training windows (0 = all).
    pub max_train_windows: usize,
    pub seed: u64,
    /// Restore the parameters with the best validation MAPE at the end.
    pub keep_best: bool,
}

impl TrainConfig {
    pub fn total_epochs(&self) -> usize {
        self.stages.iter().map(|s| s.epochs).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: usize,
    pub loss: LossParts,
    pub val_mape: f64,
    pub val_da: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochLog>,
    /// Training-set MSE (normalized targets, eval mode) before any update.
    pub initial_train_mse: f64,
    pub final_train_mse: f64,
    pub best_epoch: usize,
    pub best_val_mape: f64,
    pub steps: u64,
}

/// One forecast of one stock at one horizon from one origin day.
#[derive(Clone, Debug, PartialEq)]
pub struct Forecast {
    pub stock: usize,
    pub origin: usize,
    pub horizon: usize,
    /// Normalized-return prediction.
    pub z_pred: f64,
    pub y_pred: f64,
    pub y_true: f64,
    pub y_prior: f64,
    pub p_up: f64,
}

const EVAL_CHUNK: usize = 64;

/// Eval-mode forecasts for windows ending at `ends`.
pub fn predict(model: &Model, ds: &Dataset, ends: &[usize], variant: &Variant) -> Result<Vec<Forecast>> {
    let variant = &ds.effective_variant(variant);
    let t = model.cfg.seq_len;
    let nh = ds.horizons.len();
    let mut out = Vec::with_capacity(ends.len() * ds.n_stocks() * nh);
    for chunk in ends.chunks(EVAL_CHUNK) {
        let inp = ds.inputs(chunk, t)?;
        let mut g = Graph::new();
        let v = model.params.register(&mut g);
        let o = model.forward(&mut g, &v, &inp, variant)?;
        let pred = g.value(o.pred).data();
        let pu = g.value(o.p_up).data();
        for (bi, &origin) in chunk.iter().enumerate() {
            for i in 0..ds.n_stocks() {
                for (hi, &h) in ds.horizons.iter().enumerate() {
                    let k = (bi * ds.n_stocks() + i) * nh + hi;
                    let prior = ds.close[i][origin];
                    let zp = pred[k];
                    out.push(Forecast {
                        stock: i,
                        origin,
                        horizon: h,
                        z_pred: zp,
                        y_pred: prior * (1.0 + ds.target_scale[i][hi] * zp),
                        y_true: ds.close[i].get(origin + h).copied().unwrap_or(f64::NAN),
                        y_prior: prior,
                        p_up: pu[k],
                    });
                }
            }
        }
    }
    if out.iter().any(|f| !f.y_pred.is_finite()) {
        return Err(Error::Numeric("non-finite prediction".into()));
    }
    Ok(out)
}

/// MAPE (percent) and directional accuracy of first-horizon forecasts.
pub fn quick_metrics(fc: &[Forecast], horizon: usize) -> (f64, f64) {
    let sel: Vec<&Forecast> = fc.iter().filter(|f| f.horizon == horizon).collect();
    if sel.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mape = 100.0 * sel.iter().map(|f| ((f.y_true - f.y_pred) / f.y_true).abs()).sum::<f64>() / sel.len() as f64;
    let hits = sel
        .iter()
        .filter(|f| crate::dataset::is_up(f.y_prior, f.y_pred) == crate::dataset::is_up(f.y_prior, f.y_true))
        .count();
    (mape, hits as f64 / sel.len() as f64)
}

/// Mean squared error of normalized-return predictions over `ends`.
pub fn mse_on(model: &Model, ds: &Dataset, ends: &[usize], variant: &Variant) -> Result<f64> {
    let fc = predict(model, ds, ends, variant)?;
    let mut s = 0.0;
    for f in &fc {
        let hi = ds.horizons.iter().position(|&h| h == f.horizon).expect("known horizon");
        let d = f.z_pred - ds.target(f.stock, f.origin, hi);
        s += d * d;
    }
    Ok(s / fc.len().max(1) as f64)
}

/// Loss and gradients for one micro-batch.
pub fn batch_gradients(
    model: &Model,
    ds: &Dataset,
    ends: &[usize],
    variant: &Variant,
    weights: &LossWeights,
    dropout_seed: Option<u64>,
) -> Result<(LossParts, Vec<Tensor>)> {
    let variant = &ds.effective_variant(variant);
    let inp = ds.inputs(ends, model.cfg.seq_len)?;
    let (z, up) = ds.targets(ends)?;
    let mut g = match dropout_seed {
        Some(s) => Graph::training(s),
        None => Graph::new(),
    };
    let v = model.params.register(&mut g);
    let o = model.forward(&mut g, &v, &inp, variant)?;
    let zv = g.constant(z);
    let uv = g.constant(up);
    let scale: Vec<f64> = ds.target_scale.iter().map(|s| s[0]).collect();
    let (loss, parts) = composite_loss(&mut g, o.pred, o.p_up, zv, uv, &scale, &v, weights)?;
    if !parts.total.is_finite() {
        return Err(Error::Training(format!("non-finite loss: {parts:?}")));
    }
    let grads = g.backward(loss)?;
    Ok((parts, v.iter().map(|&p| grads.get(p)).collect()))
}

/// Three-stage training: heads and fusion first, then the top layers, then
/// everything. Frozen parameters are never modified.
pub fn train(model: &mut Model, ds: &Dataset, cfg: &TrainConfig, variant: &Variant) -> Result<TrainReport> {
    cfg.weights.validate()?;
    if cfg.batch_size == 0 || cfg.accum_steps == 0 {
        return Err(Error::Config("batch_size and accum_steps must be positive".into()));
    }
    let t = model.cfg.seq_len;
    let mut train_ends = ds.windows(SplitPart::Train, t)?;
    if cfg.max_train_windows > 0 && train_ends.len() > cfg.max_train_windows {
        train_ends.truncate(cfg.max_train_windows);
    }
    if train_ends.is_empty() {
        return Err(Error::Config("no training windows".into()));
    }
    let val_ends = ds.windows(SplitPart::Val, t).unwrap_or_default();
    let micro = train_ends.len().div_ceil(cfg.batch_size);
    let steps_per_epoch = micro.div_ceil(cfg.accum_steps) as u64;
    let total_steps = steps_per_epoch * cfg.total_epochs() as u64;
    let sched = Schedule {
        peak: 1.0,
        warmup: cfg.warmup_steps.min(total_steps),
        total: total_steps + 1,
    };
    let initial_train_mse = mse_on(model, ds, &train_ends, variant)?;
    let mut adam = Adam::new(&model.params.tensors);
    let mut history = Vec::new();
    let mut step: u64 = 0;
    let mut epoch = 0;
    let mut best = (f64::INFINITY, 0usize, model.params.clone());
    let e0 = model.e0_index();
    for (si, stage) in cfg.stages.iter().enumerate() {
        let mask = match si {
            0 => model.stage_mask(0, false),
            1 => model.stage_mask(cfg.top_layers, false),
            _ => model.stage_mask(model.cfg.layers, true),
        };
        for _ in 0..stage.epochs {
            epoch += 1;
            let order = shuffled(&train_ends, cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let mut sum = LossParts::default();
            let mut batches = 0usize;
            for group in order.chunks(cfg.batch_size * cfg.accum_steps) {
                let mut acc: Option<Vec<Tensor>> = None;
                let mut count = 0usize;
                for mb in group.chunks(cfg.batch_size) {
                    let seed = cfg.seed.wrapping_add(step.wrapping_mul(1_000_003)).wrapping_add(count as u64);
                    let (parts, grads) = batch_gradients(model, ds, mb, variant, &cfg.weights, Some(seed))
                        .map_err(|e| match e {
                            Error::Training(m) => Error::Training(format!(
                                "epoch {epoch} (stage {}), step {step}: {m}; parameter norm {:.4e}",
                                si + 1,
                                model.params.tensors.iter().map(|p| p.sum_sq()).sum::<f64>().sqrt()
                            )),
                            other => other,
                        })?;
                    sum.total += parts.total;
                    sum.mse += parts.mse;
                    sum.bce += parts.bce;
                    sum.corr += parts.corr;
                    sum.reg += parts.reg;
                    sum.skipped += parts.skipped;
                    batches += 1;
                    count += 1;
                    acc = Some(match acc {
                        None => grads,
                        Some(mut a) => {
                            for (x, y) in a.iter_mut().zip(&grads) {
                                for (p, q) in x.data_mut().iter_mut().zip(y.data()) {
                                    *p += q;
                                }
                            }
                            a
                        }
                    });
                }
                let mut grads = acc.expect("non-empty group");
                let inv = 1.0 / count as f64;
                for gt in grads.iter_mut() {
                    gt.data_mut().iter_mut().for_each(|v| *v *= inv);
                }
                step += 1;
                let lr = stage.lr * sched.factor(step);
                adam.step(&mut model.params.tensors, &grads, lr, &mask)
                    .map_err(|e| Error::Training(format!("epoch {epoch}, step {step}: {e}")))?;
                if mask[e0] {
                    model.project();
                }
            }
            let k = batches.max(1) as f64;
            let loss = LossParts {
                total: sum.total / k,
                mse: sum.mse / k,
                bce: sum.bce / k,
                corr: sum.corr / k,
                reg: sum.reg / k,
                skipped: sum.skipped,
            };
            let (val_mape, val_da) = if val_ends.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                quick_metrics(&predict(model, ds, &val_ends, variant)?, ds.horizons[0])
            };
            if val_mape < best.0 {
                best = (val_mape, epoch, model.params.clone());
            }
            history.push(EpochLog {
                epoch,
                stage: si + 1,
                loss,
                val_mape,
                val_da,
            });
        }
    }
    let (best_val_mape, best_epoch) = (best.0, best.1);
    if cfg.keep_best && best_val_mape.is_finite() {
        model.params = best.2;
    }
    let final_train_mse = mse_on(model, ds, &train_ends, variant)?;
    Ok(TrainReport {
        history,
        initial_train_mse,
        final_train_mse,
        best_epoch,
        best_val_mape,
        steps: step,
    })
}

/// Edge matrix applied in cross-sectional attention, averaged over layers
/// and over the windows ending at `ends` (row-major `N x N`).
pub fn mean_edges(model: &Model, ds: &Dataset, ends: &[usize], variant: &Variant) -> Result<Vec<f64>> {
    let variant = &ds.effective_variant(variant);
    let n = ds.n_stocks();
    let mut acc = vec![0.0; n * n];
    let mut count = 0.0;
    for chunk in ends.chunks(EVAL_CHUNK) {
        let inp = ds.inputs(chunk, model.cfg.seq_len)?;
        let mut g = Graph::new();
        let v = model.params.register(&mut g);
        let o = model.forward(&mut g, &v, &inp, variant)?;
        for e in &o.edges {
            let vals = g.value(*e).data();
            let reps = if vals.len() == n * n { chunk.len() } else { 1 };
            for block in vals.chunks(n * n) {
                for (a, b) in acc.iter_mut().zip(block) {
                    *a += b * reps as f64;
                }
            }
        }
        count += (chunk.len() * o.edges.len()) as f64;
    }
    if count == 0.0 {
        return Err(Error::Input("no windows".into()));
    }
    acc.iter_mut().for_each(|a| *a /= count);
    Ok(acc)
}

/// Mean off-diagonal weight of same-sector and cross-sector pairs.
pub fn sector_edge_means(edges: &[f64], sectors: &[usize]) -> (f64, f64) {
    let n = sectors.len();
    let (mut s, mut ns, mut c, mut nc) = (0.0, 0, 0.0, 0);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if sectors[i] == sectors[j] {
                s += edges[i * n + j];
                ns += 1;
            } else {
                c += edges[i * n + j];
                nc += 1;
            }
        }
    }
    (s / ns.max(1) as f64, c / nc.max(1) as f64)
}

/// Finite-difference check of the full composite loss through every
/// component (gating, both attention stages, edge refinement, sentiment key
/// scaling, the sentiment branch and fusion) on a random batch. Returns the
/// worst normwise relative error over parameters.
pub fn model_gradcheck(cfg: &crate::nodeformer::ModelConfig, batch: usize, seed: u64, h: f64, max_coords: usize) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.n_stocks;
    let (t, nh) = (cfg.seq_len, cfg.horizons.len());
    let mut e0 = vec![1.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = rng.gen_range(0.1..0.9);
            e0[i * n + j] = v;
            e0[j * n + i] = v;
        }
    }
    let model = Model::new(cfg.clone(), &e0, seed)?;
    let mut params = model.params.tensors.clone();
    for (k, p) in params.iter_mut().enumerate() {
        if k != model.e0_index() {
            p.data_mut().iter_mut().for_each(|x| *x += rng.gen_range(-0.05..0.05));
        }
    }
    let mut rand_tensor = |shape: &[usize], lo: f64, hi: f64| -> Result<Tensor> {
        let len = shape.iter().product();
        Ok(Tensor::new(shape, (0..len).map(|_| rng.gen_range(lo..hi)).collect())?)
    };
    let inp = crate::nodeformer::Inputs {
        x: rand_tensor(&[batch, t, n, crate::features::N_FEATURES], -1.5, 1.5)?,
        s1: rand_tensor(&[batch, n, t], -1.0, 1.0)?,
        sent_in: rand_tensor(&[batch, n, 4], -1.0, 1.0)?,
        fusion_in: rand_tensor(&[batch, 4], 0.0, 1.0)?,
    };
    let z = rand_tensor(&[batch, n, nh], -1.0, 1.0)?;
    let up = Tensor::new(&[batch, n, nh], z.data().iter().map(|v| f64::from(*v > 0.0)).collect())?;
    let scale = rand_tensor(&[n], 0.5, 1.5)?.data().to_vec();
    let variant = Variant::default();
    let weights = LossWeights::default();
    let f = |g: &mut Graph, v: &[Var]| -> graphsent_autograd::Result<Var> {
        let o = model.forward(g, v, &inp, &variant)?;
        let zv = g.constant(z.clone());
        let uv = g.constant(up.clone());
        let (loss, _) = composite_loss(g, o.pred, o.p_up, zv, uv, &scale, v, &weights)?;
        Ok(loss)
    };
    Ok(graphsent_autograd::grad_check(f, &params, h, max_coords)?)
}
