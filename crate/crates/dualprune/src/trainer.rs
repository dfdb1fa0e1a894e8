//! Small differentiable classifier: softmax regression, optionally with one
//! ReLU hidden layer. Gradients are written out by hand; cross-entropy goes
//! through the log-sum-exp shift so saturated logits stay finite.

use std::fs;
use std::io::{BufWriter, Cursor, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, softmax, Mat};

pub const DPMD_MAGIC: &[u8; 4] = b"DPMD";
pub const DPMD_VERSION: u32 = 1;

/// Counters for the work a run performs. One forward pass is one sample
/// pushed through the model for a loss; one backward update is one gradient
/// step over a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CostCounters {
    pub forward_passes: u64,
    pub backward_updates: u64,
}

/// Classifier parameters. `w_hidden`/`b_hidden` are present exactly when
/// `hidden` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub hidden: Option<usize>,
    pub w_hidden: Option<Mat>,
    pub b_hidden: Option<Vec<f64>>,
    pub w_out: Mat,
    pub b_out: Vec<f64>,
}

/// Mean-over-batch gradient, shaped like the model it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub hidden: Option<usize>,
    pub w_hidden: Option<Mat>,
    pub b_hidden: Option<Vec<f64>>,
    pub w_out: Mat,
    pub b_out: Vec<f64>,
}

impl ClassifierModel {
    fn shape_matches(&self, grad: &BatchGradient) -> bool {
        self.feature_dim == grad.feature_dim
            && self.num_classes == grad.num_classes
            && self.hidden == grad.hidden
    }

    /// Raw logits for one feature vector.
    pub fn logits(&self, features: &[f32]) -> Vec<f64> {
        match (&self.w_hidden, &self.b_hidden) {
            (Some(w_h), Some(b_h)) => {
                let mut pre = w_h.matvec_f32(features);
                for (p, b) in pre.iter_mut().zip(b_h) {
                    *p = (*p + b).max(0.0);
                }
                let mut out = self.w_out.matvec(&pre);
                for (o, b) in out.iter_mut().zip(&self.b_out) {
                    *o += b;
                }
                out
            }
            _ => {
                let mut out = self.w_out.matvec_f32(features);
                for (o, b) in out.iter_mut().zip(&self.b_out) {
                    *o += b;
                }
                out
            }
        }
    }

    /// Cross-entropy of one sample against the given label.
    pub fn sample_loss(&self, features: &[f32], label: usize) -> f64 {
        let logits = self.logits(features);
        log_sum_exp(&logits) - logits[label]
    }
}

/// Fresh model with weights drawn from a zero-mean uniform distribution
/// scaled by `init_scale` and biases at zero. `init_scale == 0` produces the
/// all-zero model whose every per-sample loss is `ln C`.
pub fn init_model(
    feature_dim: usize,
    num_classes: usize,
    hidden: Option<usize>,
    init_scale: f64,
    rng_seed: u64,
) -> Result<ClassifierModel> {
    if feature_dim < 1 {
        return Err(Error::validation("feature_dim must be at least 1"));
    }
    if num_classes < 2 {
        return Err(Error::validation("num_classes must be at least 2"));
    }
    if let Some(h) = hidden {
        if h < 1 {
            return Err(Error::validation("hidden width must be at least 1"));
        }
    }
    if !(init_scale >= 0.0 && init_scale.is_finite()) {
        return Err(Error::validation("init_scale must be nonnegative"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut draw = |rows: usize, cols: usize| -> Mat {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-1.0..1.0) * init_scale)
            .collect();
        Mat::from_vec(rows, cols, data)
    };
    let (w_hidden, b_hidden, out_in) = match hidden {
        Some(h) => (Some(draw(h, feature_dim)), Some(vec![0.0; h]), h),
        None => (None, None, feature_dim),
    };
    let w_out = draw(num_classes, out_in);
    Ok(ClassifierModel {
        feature_dim,
        num_classes,
        hidden,
        w_hidden,
        b_hidden,
        w_out,
        b_out: vec![0.0; num_classes],
    })
}

fn check_ids(ds: &Dataset, ids: &[usize]) -> Result<()> {
    if let Some(&bad) = ids.iter().find(|&&i| i >= ds.len()) {
        return Err(Error::validation(format!(
            "sample id {bad} out of range for dataset of {}",
            ds.len()
        )));
    }
    Ok(())
}

fn check_dims(model: &ClassifierModel, ds: &Dataset) -> Result<()> {
    if model.feature_dim != ds.feature_dim() || model.num_classes != ds.num_classes() {
        return Err(Error::validation(format!(
            "model is {}x{} but dataset is {}x{}",
            model.feature_dim,
            model.num_classes,
            ds.feature_dim(),
            ds.num_classes()
        )));
    }
    Ok(())
}

/// Cross-entropy losses for the given ids, in id order. Each evaluated
/// sample is one forward pass in `counters`.
pub fn per_sample_losses(
    model: &ClassifierModel,
    ds: &Dataset,
    ids: &[usize],
    counters: &mut CostCounters,
) -> Result<Vec<f64>> {
    check_dims(model, ds)?;
    check_ids(ds, ids)?;
    counters.forward_passes += ids.len() as u64;
    Ok(ids
        .iter()
        .map(|&i| model.sample_loss(ds.features(i), ds.observed_label(i)))
        .collect())
}

/// Analytic gradient of mean cross-entropy over the batch, against observed
/// labels.
pub fn batch_gradient(
    model: &ClassifierModel,
    ds: &Dataset,
    ids: &[usize],
) -> Result<BatchGradient> {
    check_dims(model, ds)?;
    check_ids(ds, ids)?;
    if ids.is_empty() {
        return Err(Error::validation("batch_gradient over an empty batch"));
    }

    let out_in = model.hidden.unwrap_or(model.feature_dim);
    let mut gw_out = Mat::zeros(model.num_classes, out_in);
    let mut gb_out = vec![0.0; model.num_classes];
    let mut gw_hidden = model.hidden.map(|h| Mat::zeros(h, model.feature_dim));
    let mut gb_hidden = model.hidden.map(|h| vec![0.0; h]);

    for &id in ids {
        let x = ds.features(id);
        let label = ds.observed_label(id);
        match (&model.w_hidden, &model.b_hidden) {
            (Some(w_h), Some(b_h)) => {
                let mut pre = w_h.matvec_f32(x);
                for (p, b) in pre.iter_mut().zip(b_h) {
                    *p += b;
                }
                let act: Vec<f64> = pre.iter().map(|&p| p.max(0.0)).collect();
                let mut logits = model.w_out.matvec(&act);
                for (l, b) in logits.iter_mut().zip(&model.b_out) {
                    *l += b;
                }
                let mut delta_out = softmax(&logits);
                delta_out[label] -= 1.0;

                for (c, &d) in delta_out.iter().enumerate() {
                    for (j, &a) in act.iter().enumerate() {
                        let cur = gw_out.get(c, j);
                        gw_out.set(c, j, cur + d * a);
                    }
                    gb_out[c] += d;
                }

                let gw_h = gw_hidden.as_mut().unwrap();
                let gb_h = gb_hidden.as_mut().unwrap();
                for (j, &p) in pre.iter().enumerate() {
                    if p <= 0.0 {
                        continue;
                    }
                    let mut back = 0.0;
                    for (c, &d) in delta_out.iter().enumerate() {
                        back += d * model.w_out.get(c, j);
                    }
                    for (f, &xf) in x.iter().enumerate() {
                        let cur = gw_h.get(j, f);
                        gw_h.set(j, f, cur + back * f64::from(xf));
                    }
                    gb_h[j] += back;
                }
            }
            _ => {
                let logits = model.logits(x);
                let mut delta_out = softmax(&logits);
                delta_out[label] -= 1.0;
                for (c, &d) in delta_out.iter().enumerate() {
                    for (f, &xf) in x.iter().enumerate() {
                        let cur = gw_out.get(c, f);
                        gw_out.set(c, f, cur + d * f64::from(xf));
                    }
                    gb_out[c] += d;
                }
            }
        }
    }

    let scale = 1.0 / ids.len() as f64;
    for v in gw_out.data_mut() {
        *v *= scale;
    }
    for v in &mut gb_out {
        *v *= scale;
    }
    if let Some(m) = gw_hidden.as_mut() {
        for v in m.data_mut() {
            *v *= scale;
        }
    }
    if let Some(b) = gb_hidden.as_mut() {
        for v in b.iter_mut() {
            *v *= scale;
        }
    }

    Ok(BatchGradient {
        feature_dim: model.feature_dim,
        num_classes: model.num_classes,
        hidden: model.hidden,
        w_hidden: gw_hidden,
        b_hidden: gb_hidden,
        w_out: gw_out,
        b_out: gb_out,
    })
}

/// One plain gradient-descent update: every parameter moves by
/// `-learn_rate` times its gradient entry.
pub fn sgd_step(
    model: &ClassifierModel,
    grad: &BatchGradient,
    learn_rate: f64,
) -> Result<ClassifierModel> {
    if !model.shape_matches(grad) {
        return Err(Error::validation(
            "gradient shape does not match model shape",
        ));
    }
    let mut next = model.clone();
    next.w_out.add_scaled(&grad.w_out, -learn_rate);
    for (p, g) in next.b_out.iter_mut().zip(&grad.b_out) {
        *p -= learn_rate * g;
    }
    if let (Some(w), Some(gw)) = (next.w_hidden.as_mut(), grad.w_hidden.as_ref()) {
        w.add_scaled(gw, -learn_rate);
    }
    if let (Some(b), Some(gb)) = (next.b_hidden.as_mut(), grad.b_hidden.as_ref()) {
        for (p, g) in b.iter_mut().zip(gb) {
            *p -= learn_rate * g;
        }
    }
    Ok(next)
}

/// Fraction of samples whose argmax logit hits the chosen label column.
/// Argmax ties go to the lowest class index.
pub fn evaluate(model: &ClassifierModel, ds: &Dataset, use_true_labels: bool) -> Result<f64> {
    check_dims(model, ds)?;
    let mut correct = 0usize;
    for s in ds.samples() {
        let logits = model.logits(&s.features);
        let mut best = 0usize;
        for (c, &l) in logits.iter().enumerate().skip(1) {
            if l > logits[best] {
                best = c;
            }
        }
        let target = if use_true_labels {
            s.true_label
        } else {
            s.observed_label
        };
        if best == target {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Snapshots the model as DPMD: magic, u32 version, u32 d, u32 C, u32 h
/// (0 = no hidden layer), then the parameter arrays in declaration order as
/// little-endian f32.
pub fn save_model(model: &ClassifierModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<fs::File>| -> std::io::Result<()> {
        binio::write_magic(w, DPMD_MAGIC)?;
        binio::write_u32(w, DPMD_VERSION)?;
        binio::write_u32(w, model.feature_dim as u32)?;
        binio::write_u32(w, model.num_classes as u32)?;
        binio::write_u32(w, model.hidden.unwrap_or(0) as u32)?;
        if let (Some(wh), Some(bh)) = (&model.w_hidden, &model.b_hidden) {
            for &v in wh.data() {
                binio::write_f32(w, v as f32)?;
            }
            for &v in bh {
                binio::write_f32(w, v as f32)?;
            }
        }
        for &v in model.w_out.data() {
            binio::write_f32(w, v as f32)?;
        }
        for &v in &model.b_out {
            binio::write_f32(w, v as f32)?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ClassifierModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_dpmd(&bytes).map_err(|e| e.with_context(&path.display().to_string()))
}

fn parse_dpmd(bytes: &[u8]) -> Result<ClassifierModel> {
    let mut r = Cursor::new(bytes);
    let truncated = |_| Error::format("truncated DPMD file");
    let magic = binio::read_magic(&mut r).map_err(truncated)?;
    if &magic != DPMD_MAGIC {
        return Err(Error::format("missing DPMD magic"));
    }
    let version = binio::read_u32(&mut r).map_err(truncated)?;
    if version != DPMD_VERSION {
        return Err(Error::format(format!(
            "unsupported DPMD version {version}"
        )));
    }
    let d = binio::read_u32(&mut r).map_err(truncated)? as usize;
    let c = binio::read_u32(&mut r).map_err(truncated)? as usize;
    let h = binio::read_u32(&mut r).map_err(truncated)? as usize;
    let to_f64 = |v: Vec<f32>| v.into_iter().map(f64::from).collect::<Vec<f64>>();
    let (w_hidden, b_hidden, hidden, out_in) = if h > 0 {
        let wh = to_f64(binio::read_f32_vec(&mut r, h * d).map_err(truncated)?);
        let bh = to_f64(binio::read_f32_vec(&mut r, h).map_err(truncated)?);
        (Some(Mat::from_vec(h, d, wh)), Some(bh), Some(h), h)
    } else {
        (None, None, None, d)
    };
    let wo = to_f64(binio::read_f32_vec(&mut r, c * out_in).map_err(truncated)?);
    let bo = to_f64(binio::read_f32_vec(&mut r, c).map_err(truncated)?);
    Ok(ClassifierModel {
        feature_dim: d,
        num_classes: c,
        hidden,
        w_hidden,
        b_hidden,
        w_out: Mat::from_vec(c, out_in, wo),
        b_out: bo,
    })
}
