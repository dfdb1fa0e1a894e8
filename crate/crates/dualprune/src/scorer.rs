//! The learnable per-sample selection score.
//!
//! Each sample carries one real score, initialized to 1 so no sample starts
//! preferred. Scores descend on a multi-objective loss that pays for task
//! difficulty and earns for semantic consistency:
//!
//! ```text
//! L(s) = (1/‖s‖₀) · Σᵢ sᵢ · (λ·s_C[i] − s_T[i])
//! ```
//!
//! where `s_T` is the cached per-sample task loss, `s_C` the fixed
//! consistency signal, and `‖s‖₀` the count of entries with |sᵢ| > 1e-12
//! (treated as a constant under differentiation). Both signals are
//! z-normalized before entering the loss so one λ works across datasets.
//! A descent step moves a high-difficulty, low-consistency sample's score
//! up and an easy, well-aligned sample's score down; both kinds drift away
//! from the score median and out of the selected band.
//!
//! Selection takes the k scores nearest the median, ties broken by ascending
//! sample index.

use std::fs;
use std::io::{BufWriter, Cursor, Write};
use std::path::Path;

use crate::binio;
use crate::error::{Error, Result};

pub const DPSC_MAGIC: &[u8; 4] = b"DPSC";
pub const DPSC_VERSION: u32 = 1;

/// Threshold below which a score entry counts as zero for `‖s‖₀`.
const SUPPORT_EPS: f64 = 1e-12;

/// Epoch tag meaning "this sample's loss has never been observed".
pub const NEVER_UPDATED: i32 = -1;

/// Learnable scores plus the two supervision signals and their optimizer
/// settings. One instance lives for a whole run; `s_c` never changes after
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreState {
    s: Vec<f64>,
    s_t_cache: Vec<f64>,
    last_updated_epoch: Vec<i32>,
    s_c: Vec<f64>,
    lambda: f64,
    score_learn_rate: f64,
    steps_per_epoch: usize,
}

impl ScoreState {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.s
    }

    pub fn task_loss_cache(&self) -> &[f64] {
        &self.s_t_cache
    }

    pub fn consistency(&self) -> &[f64] {
        &self.s_c
    }

    pub fn last_updated(&self) -> &[i32] {
        &self.last_updated_epoch
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn score_learn_rate(&self) -> f64 {
        self.score_learn_rate
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.steps_per_epoch
    }

    /// Records a freshly observed task loss for one sample.
    pub fn record_loss(&mut self, id: usize, loss: f64, epoch: i32) {
        self.s_t_cache[id] = loss;
        self.last_updated_epoch[id] = epoch;
    }

    /// Overwrites the whole task-loss cache, tagging every entry with
    /// `epoch`. Lengths must match.
    pub fn fill_cache(&mut self, losses: &[f64], epoch: i32) -> Result<()> {
        if losses.len() != self.s_t_cache.len() {
            return Err(Error::validation(format!(
                "cache fill with {} losses, state holds {}",
                losses.len(),
                self.s_t_cache.len()
            )));
        }
        self.s_t_cache.copy_from_slice(losses);
        self.last_updated_epoch.fill(epoch);
        Ok(())
    }
}

/// The outcome of one epoch's subset selection.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub epoch: usize,
    pub selected_ids: Vec<usize>,
    pub median_value: f64,
    pub k: usize,
}

/// Fresh state: scores all ones, loss cache zeroed and tagged never-seen.
pub fn init_scores(
    n: usize,
    s_c: Vec<f64>,
    lambda: f64,
    score_learn_rate: f64,
    steps_per_epoch: usize,
) -> Result<ScoreState> {
    if n == 0 {
        return Err(Error::validation("score state needs at least one sample"));
    }
    if s_c.len() != n {
        return Err(Error::validation(format!(
            "consistency vector has length {}, expected {n}",
            s_c.len()
        )));
    }
    if !lambda.is_finite() {
        return Err(Error::validation("lambda must be finite"));
    }
    if !(score_learn_rate >= 0.0 && score_learn_rate.is_finite()) {
        return Err(Error::validation("score_learn_rate must be nonnegative"));
    }
    if steps_per_epoch == 0 {
        return Err(Error::validation("steps_per_epoch must be at least 1"));
    }
    Ok(ScoreState {
        s: vec![1.0; n],
        s_t_cache: vec![0.0; n],
        last_updated_epoch: vec![NEVER_UPDATED; n],
        s_c,
        lambda,
        score_learn_rate,
        steps_per_epoch,
    })
}

/// Shifts to mean zero and scales to unit population standard deviation.
/// Inputs with (near-)zero spread map to the all-zero vector.
pub fn znormalize(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::validation("znormalize of an empty vector"));
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= 1e-12 {
        return Ok(vec![0.0; v.len()]);
    }
    Ok(v.iter().map(|x| (x - mean) / std).collect())
}

fn support_size(s: &[f64]) -> usize {
    s.iter().filter(|x| x.abs() > SUPPORT_EPS).count()
}

fn check_score_inputs(s: &[f64], s_t: &[f64], s_c: &[f64]) -> Result<usize> {
    if s.len() != s_t.len() || s.len() != s_c.len() {
        return Err(Error::validation(format!(
            "score vectors disagree in length: s={}, s_T={}, s_C={}",
            s.len(),
            s_t.len(),
            s_c.len()
        )));
    }
    let support = support_size(s);
    if support == 0 {
        return Err(Error::domain(
            "score vector has empty support (all entries within 1e-12 of zero)",
        ));
    }
    Ok(support)
}

/// The multi-objective score loss.
pub fn score_loss(s: &[f64], s_t: &[f64], s_c: &[f64], lambda: f64) -> Result<f64> {
    let support = check_score_inputs(s, s_t, s_c)?;
    let total: f64 = s
        .iter()
        .zip(s_c)
        .zip(s_t)
        .map(|((&si, &ci), &ti)| si * (lambda * ci - ti))
        .sum();
    Ok(total / support as f64)
}

/// Gradient of `score_loss` with respect to `s`, holding `‖s‖₀` constant.
pub fn score_gradient(s: &[f64], s_t: &[f64], s_c: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let support = check_score_inputs(s, s_t, s_c)?;
    Ok(s_c
        .iter()
        .zip(s_t)
        .map(|(&ci, &ti)| (lambda * ci - ti) / support as f64)
        .collect())
}

/// Runs `steps_per_epoch` descent steps on the scores, using the current
/// loss cache and consistency signal (each z-normalized once per call).
/// Every other field is carried over unchanged.
pub fn score_step(state: &ScoreState, current_epoch: usize) -> Result<ScoreState> {
    let z_task = znormalize(&state.s_t_cache)?;
    let z_consistency = znormalize(&state.s_c)?;
    let mut next = state.clone();
    for _ in 0..state.steps_per_epoch {
        let grad = score_gradient(&next.s, &z_task, &z_consistency, state.lambda)
            .map_err(|e| e.with_context(&format!("epoch {current_epoch} (score update)")))?;
        for (si, gi) in next.s.iter_mut().zip(&grad) {
            *si -= state.score_learn_rate * gi;
        }
    }
    Ok(next)
}

/// Median with the even-length convention of averaging the two middle order
/// statistics.
pub fn median(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::validation("median of an empty vector"));
    }
    let mut buf = v.to_vec();
    let mid = buf.len() / 2;
    let upper = *buf.select_nth_unstable_by(mid, f64::total_cmp).1;
    if buf.len() % 2 == 1 {
        Ok(upper)
    } else {
        // The lower middle is the maximum of the left partition.
        let lower = buf[..mid]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(0.5 * (lower + upper))
    }
}

/// Picks the k scores nearest the median.
///
/// Distance ties break toward the smaller sample index; the returned ids are
/// sorted ascending. The result depends only on the ranks of the distances,
/// so any positive affine rescaling of `s` selects the same ids.
pub fn select_median_band(s: &[f64], k: usize, epoch: usize) -> Result<SelectionResult> {
    if s.is_empty() {
        return Err(Error::validation("selection over an empty score vector"));
    }
    if k < 1 || k > s.len() {
        return Err(Error::validation(format!(
            "k must lie in [1, {}], got {k}",
            s.len()
        )));
    }
    let m = median(s)?;
    let mut by_distance: Vec<(f64, usize)> = s
        .iter()
        .enumerate()
        .map(|(i, &si)| ((si - m).abs(), i))
        .collect();
    by_distance.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut selected_ids: Vec<usize> = by_distance[..k].iter().map(|&(_, i)| i).collect();
    selected_ids.sort_unstable();
    Ok(SelectionResult {
        epoch,
        selected_ids,
        median_value: m,
        k,
    })
}

/// Snapshots the state as DPSC: magic, u32 version, u32 N, the three f32
/// vectors (s, s_T cache, s_C), N i32 last-updated tags, f32 lambda, f32
/// learn rate, u32 steps per epoch.
pub fn save_score_state(state: &ScoreState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<fs::File>| -> std::io::Result<()> {
        binio::write_magic(w, DPSC_MAGIC)?;
        binio::write_u32(w, DPSC_VERSION)?;
        binio::write_u32(w, state.len() as u32)?;
        for vec in [&state.s, &state.s_t_cache, &state.s_c] {
            for &v in vec.iter() {
                binio::write_f32(w, v as f32)?;
            }
        }
        for &e in &state.last_updated_epoch {
            binio::write_i32(w, e)?;
        }
        binio::write_f32(w, state.lambda as f32)?;
        binio::write_f32(w, state.score_learn_rate as f32)?;
        binio::write_u32(w, state.steps_per_epoch as u32)?;
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

pub fn load_score_state(path: impl AsRef<Path>) -> Result<ScoreState> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_dpsc(&bytes).map_err(|e| e.with_context(&path.display().to_string()))
}

fn parse_dpsc(bytes: &[u8]) -> Result<ScoreState> {
    let mut r = Cursor::new(bytes);
    let truncated = |_| Error::format("truncated DPSC file");
    let magic = binio::read_magic(&mut r).map_err(truncated)?;
    if &magic != DPSC_MAGIC {
        return Err(Error::format("missing DPSC magic"));
    }
    let version = binio::read_u32(&mut r).map_err(truncated)?;
    if version != DPSC_VERSION {
        return Err(Error::format(format!(
            "unsupported DPSC version {version}"
        )));
    }
    let n = binio::read_u32(&mut r).map_err(truncated)? as usize;
    let to_f64 = |v: Vec<f32>| v.into_iter().map(f64::from).collect::<Vec<f64>>();
    let s = to_f64(binio::read_f32_vec(&mut r, n).map_err(truncated)?);
    let s_t_cache = to_f64(binio::read_f32_vec(&mut r, n).map_err(truncated)?);
    let s_c = to_f64(binio::read_f32_vec(&mut r, n).map_err(truncated)?);
    let mut last_updated_epoch = Vec::with_capacity(n);
    for _ in 0..n {
        last_updated_epoch.push(binio::read_i32(&mut r).map_err(truncated)?);
    }
    let lambda = f64::from(binio::read_f32(&mut r).map_err(truncated)?);
    let score_learn_rate = f64::from(binio::read_f32(&mut r).map_err(truncated)?);
    let steps_per_epoch = binio::read_u32(&mut r).map_err(truncated)? as usize;
    Ok(ScoreState {
        s,
        s_t_cache,
        last_updated_epoch,
        s_c,
        lambda,
        score_learn_rate,
        steps_per_epoch,
    })
}
