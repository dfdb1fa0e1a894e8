//! Cross-modality consistency scoring and linear adapter fine-tuning.
//!
//! The consistency signal for sample `i` is the temperature-scaled cosine
//! similarity between its image embedding and the text embedding of its
//! observed label, computed after each side passes through a linear adapter.
//! Scoring against the observed label is deliberate: a mislabeled sample's
//! image aligns with some other class's text row, so its score drops.
//!
//! Adapters are plain square maps, initialized to the identity and trained
//! with a symmetric InfoNCE objective over in-batch image/text pairs. The
//! source embedding tables are frozen; only the two maps move.

use std::fs;
use std::io::{BufWriter, Cursor, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::binio;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

pub const DPAD_MAGIC: &[u8; 4] = b"DPAD";
pub const DPAD_VERSION: u32 = 1;

/// Scaling temperature applied to every cosine similarity.
pub fn tau() -> f64 {
    (1.0f64 / 0.07).ln()
}

/// A pair of square linear maps, one per modality.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterPair {
    image_map: Mat,
    text_map: Mat,
}

impl AdapterPair {
    /// Identity maps: adapter application is a no-op until trained.
    pub fn identity(embed_dim: usize) -> Self {
        AdapterPair {
            image_map: Mat::identity(embed_dim),
            text_map: Mat::identity(embed_dim),
        }
    }

    pub fn from_maps(image_map: Mat, text_map: Mat) -> Result<Self> {
        if image_map.rows() != image_map.cols()
            || text_map.rows() != text_map.cols()
            || image_map.rows() != text_map.rows()
        {
            return Err(Error::validation(
                "adapter maps must be square and share one dimension",
            ));
        }
        if !image_map.is_finite() || !text_map.is_finite() {
            return Err(Error::validation("adapter maps must be finite"));
        }
        Ok(AdapterPair {
            image_map,
            text_map,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.image_map.rows()
    }

    pub fn image_map(&self) -> &Mat {
        &self.image_map
    }

    pub fn text_map(&self) -> &Mat {
        &self.text_map
    }
}

/// Fixed per-sample consistency scores, bounded by the temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyScores {
    values: Vec<f64>,
    tau: f64,
}

impl ConsistencyScores {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

/// Temperature-scaled cosine similarity of two embedding vectors.
///
/// The raw cosine is clamped to `[-1, 1]` before scaling so that floating
/// point round-off can never push a score outside `[-tau, tau]`.
pub fn scaled_cosine(z_image: &[f64], z_text: &[f64]) -> Result<f64> {
    if z_image.len() != z_text.len() {
        return Err(Error::validation(format!(
            "embedding length mismatch: {} vs {}",
            z_image.len(),
            z_text.len()
        )));
    }
    let norm_i = linalg::norm(z_image);
    let norm_t = linalg::norm(z_text);
    if norm_i == 0.0 || norm_t == 0.0 {
        return Err(Error::domain("scaled_cosine received a zero-norm vector"));
    }
    let cos = (linalg::dot(z_image, z_text) / (norm_i * norm_t)).clamp(-1.0, 1.0);
    Ok(tau() * cos)
}

/// Applies `map` to every row.
pub fn apply_adapter(map: &Mat, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if map.rows() != map.cols() {
        return Err(Error::validation("adapter map must be square"));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != map.cols() {
            return Err(Error::validation(format!(
                "row {i} has length {}, adapter expects {}",
                row.len(),
                map.cols()
            )));
        }
    }
    Ok(rows.iter().map(|r| map.matvec(r)).collect())
}

/// Scores every sample against the text row of its observed label.
///
/// The result is computed once per run and then treated as fixed.
pub fn consistency_scores(
    table: &EmbeddingTable,
    observed_labels: &[usize],
    adapters: &AdapterPair,
) -> Result<ConsistencyScores> {
    if observed_labels.len() != table.num_samples() {
        return Err(Error::validation(format!(
            "{} labels for {} embedding rows",
            observed_labels.len(),
            table.num_samples()
        )));
    }
    if adapters.embed_dim() != table.embed_dim() {
        return Err(Error::validation(format!(
            "adapter dimension {} does not match embedding dimension {}",
            adapters.embed_dim(),
            table.embed_dim()
        )));
    }
    if let Some(bad) = observed_labels
        .iter()
        .position(|&l| l >= table.num_classes())
    {
        return Err(Error::validation(format!(
            "label at index {bad} is out of range"
        )));
    }

    let text_rows: Vec<Vec<f64>> = (0..table.num_classes())
        .map(|c| table.text_row_f64(c))
        .collect();
    let adapted_text = apply_adapter(&adapters.text_map, &text_rows)?;

    let mut values = Vec::with_capacity(table.num_samples());
    for (i, &label) in observed_labels.iter().enumerate() {
        let image = adapters.image_map.matvec(&table.image_row_f64(i));
        values.push(scaled_cosine(&image, &adapted_text[label])?);
    }
    Ok(ConsistencyScores {
        values,
        tau: tau(),
    })
}

/// Symmetric contrastive loss over a batch of matched image/text rows.
///
/// Row `a` of the similarity matrix is a softmax classification of image `a`
/// over the batch's texts, and column `b` the reverse; the loss averages the
/// two directions' cross-entropies.
pub fn infonce_loss(image_batch: &[Vec<f64>], text_batch: &[Vec<f64>]) -> Result<f64> {
    let b = image_batch.len();
    if b == 0 || text_batch.len() != b {
        return Err(Error::validation(
            "infonce_loss needs equal, nonempty image and text batches",
        ));
    }
    let sims = similarity_matrix(image_batch, text_batch)?;
    Ok(symmetric_cross_entropy(&sims, b))
}

fn similarity_matrix(images: &[Vec<f64>], texts: &[Vec<f64>]) -> Result<Mat> {
    let b = images.len();
    let mut sims = Mat::zeros(b, b);
    for (a, img) in images.iter().enumerate() {
        for (t, txt) in texts.iter().enumerate() {
            sims.set(a, t, scaled_cosine(img, txt)?);
        }
    }
    Ok(sims)
}

fn symmetric_cross_entropy(sims: &Mat, b: usize) -> f64 {
    let mut row_ce = 0.0;
    let mut col_ce = 0.0;
    for a in 0..b {
        row_ce += linalg::log_sum_exp(sims.row(a)) - sims.get(a, a);
        let col: Vec<f64> = (0..b).map(|r| sims.get(r, a)).collect();
        col_ce += linalg::log_sum_exp(&col) - sims.get(a, a);
    }
    0.5 * (row_ce / b as f64 + col_ce / b as f64)
}

/// InfoNCE loss of a batch of raw rows routed through the two maps, plus the
/// analytic gradient of that loss with respect to each map.
pub fn infonce_grad(
    raw_images: &[Vec<f64>],
    raw_texts: &[Vec<f64>],
    image_map: &Mat,
    text_map: &Mat,
) -> Result<(f64, Mat, Mat)> {
    let b = raw_images.len();
    if b == 0 || raw_texts.len() != b {
        return Err(Error::validation(
            "infonce_grad needs equal, nonempty image and text batches",
        ));
    }
    let dim = image_map.rows();
    let adapted_images = apply_adapter(image_map, raw_images)?;
    let adapted_texts = apply_adapter(text_map, raw_texts)?;

    let norms_u: Vec<f64> = adapted_images.iter().map(|u| linalg::norm(u)).collect();
    let norms_v: Vec<f64> = adapted_texts.iter().map(|v| linalg::norm(v)).collect();
    if norms_u.iter().chain(&norms_v).any(|&n| n == 0.0) {
        return Err(Error::domain("adapted embedding row has zero norm"));
    }

    let t = tau();
    let mut cos = Mat::zeros(b, b);
    let mut sims = Mat::zeros(b, b);
    for a in 0..b {
        for v in 0..b {
            let c = (linalg::dot(&adapted_images[a], &adapted_texts[v])
                / (norms_u[a] * norms_v[v]))
                .clamp(-1.0, 1.0);
            cos.set(a, v, c);
            sims.set(a, v, t * c);
        }
    }
    let loss = symmetric_cross_entropy(&sims, b);

    // d(loss)/d(sims[a][v]): softmax probabilities minus the matched-pair
    // indicator, averaged over the two classification directions.
    let mut grad_sims = Mat::zeros(b, b);
    for a in 0..b {
        let p_row = linalg::softmax(sims.row(a));
        for v in 0..b {
            grad_sims.set(a, v, p_row[v] - if a == v { 1.0 } else { 0.0 });
        }
    }
    for v in 0..b {
        let col: Vec<f64> = (0..b).map(|r| sims.get(r, v)).collect();
        let p_col = linalg::softmax(&col);
        for a in 0..b {
            let extra = p_col[a] - if a == v { 1.0 } else { 0.0 };
            grad_sims.set(a, v, (grad_sims.get(a, v) + extra) / (2.0 * b as f64));
        }
    }

    let mut grad_image_map = Mat::zeros(dim, dim);
    let mut grad_text_map = Mat::zeros(dim, dim);
    for a in 0..b {
        // Accumulate d(loss)/d(u_a), then push through u_a = W_I · x_a.
        let mut du = vec![0.0; dim];
        for v in 0..b {
            let g = grad_sims.get(a, v) * t / norms_u[a];
            let c = cos.get(a, v);
            for i in 0..dim {
                let v_hat = adapted_texts[v][i] / norms_v[v];
                let u_hat = adapted_images[a][i] / norms_u[a];
                du[i] += g * (v_hat - c * u_hat);
            }
        }
        for i in 0..dim {
            for j in 0..dim {
                let cur = grad_image_map.get(i, j);
                grad_image_map.set(i, j, cur + du[i] * raw_images[a][j]);
            }
        }
    }
    for v in 0..b {
        let mut dv = vec![0.0; dim];
        for a in 0..b {
            let g = grad_sims.get(a, v) * t / norms_v[v];
            let c = cos.get(a, v);
            for i in 0..dim {
                let u_hat = adapted_images[a][i] / norms_u[a];
                let v_hat = adapted_texts[v][i] / norms_v[v];
                dv[i] += g * (u_hat - c * v_hat);
            }
        }
        for i in 0..dim {
            for j in 0..dim {
                let cur = grad_text_map.get(i, j);
                grad_text_map.set(i, j, cur + dv[i] * raw_texts[v][j]);
            }
        }
    }
    Ok((loss, grad_image_map, grad_text_map))
}

/// Fine-tunes an adapter pair on (image row, observed label's text row)
/// pairs by mini-batch gradient descent on the InfoNCE loss. The embedding
/// table itself is frozen. Batches are drawn by a seeded shuffle each epoch,
/// without replacement; `epochs == 0` returns the identity pair.
pub fn train_adapters(
    table: &EmbeddingTable,
    observed_labels: &[usize],
    epochs: usize,
    batch_size: usize,
    learn_rate: f64,
    rng_seed: u64,
) -> Result<AdapterPair> {
    if batch_size < 2 {
        return Err(Error::validation(
            "batch_size must be at least 2 for a contrastive signal",
        ));
    }
    if !(learn_rate > 0.0 && learn_rate.is_finite()) {
        return Err(Error::validation("learn_rate must be positive"));
    }
    if observed_labels.len() != table.num_samples() {
        return Err(Error::validation(format!(
            "{} labels for {} embedding rows",
            observed_labels.len(),
            table.num_samples()
        )));
    }
    if let Some(bad) = observed_labels
        .iter()
        .position(|&l| l >= table.num_classes())
    {
        return Err(Error::validation(format!(
            "label at index {bad} is out of range"
        )));
    }

    let dim = table.embed_dim();
    let mut adapters = AdapterPair::identity(dim);
    if epochs == 0 {
        return Ok(adapters);
    }

    let image_rows: Vec<Vec<f64>> = (0..table.num_samples())
        .map(|i| table.image_row_f64(i))
        .collect();
    let text_rows: Vec<Vec<f64>> = (0..table.num_classes())
        .map(|c| table.text_row_f64(c))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut order: Vec<usize> = (0..table.num_samples()).collect();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(batch_size) {
            let images: Vec<Vec<f64>> = batch.iter().map(|&i| image_rows[i].clone()).collect();
            let texts: Vec<Vec<f64>> = batch
                .iter()
                .map(|&i| text_rows[observed_labels[i]].clone())
                .collect();
            let (_, grad_img, grad_txt) =
                infonce_grad(&images, &texts, &adapters.image_map, &adapters.text_map)?;
            adapters.image_map.add_scaled(&grad_img, -learn_rate);
            adapters.text_map.add_scaled(&grad_txt, -learn_rate);
        }
    }
    Ok(adapters)
}

/// Writes the pair as DPAD: magic, u32 version, u32 d_e, then both maps
/// row-major as little-endian f32 (image first).
pub fn save_adapters(adapters: &AdapterPair, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<fs::File>| -> std::io::Result<()> {
        binio::write_magic(w, DPAD_MAGIC)?;
        binio::write_u32(w, DPAD_VERSION)?;
        binio::write_u32(w, adapters.embed_dim() as u32)?;
        for m in [&adapters.image_map, &adapters.text_map] {
            for &v in m.data() {
                binio::write_f32(w, v as f32)?;
            }
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

pub fn load_adapters(path: impl AsRef<Path>) -> Result<AdapterPair> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_dpad(&bytes).map_err(|e| e.with_context(&path.display().to_string()))
}

fn parse_dpad(bytes: &[u8]) -> Result<AdapterPair> {
    let mut r = Cursor::new(bytes);
    let truncated = |_| Error::format("truncated DPAD file");
    let magic = binio::read_magic(&mut r).map_err(truncated)?;
    if &magic != DPAD_MAGIC {
        return Err(Error::format("missing DPAD magic"));
    }
    let version = binio::read_u32(&mut r).map_err(truncated)?;
    if version != DPAD_VERSION {
        return Err(Error::format(format!(
            "unsupported DPAD version {version}"
        )));
    }
    let dim = binio::read_u32(&mut r).map_err(truncated)? as usize;
    let image = binio::read_f32_vec(&mut r, dim * dim).map_err(truncated)?;
    let text = binio::read_f32_vec(&mut r, dim * dim).map_err(truncated)?;
    AdapterPair::from_maps(
        Mat::from_vec(dim, dim, image.into_iter().map(f64::from).collect()),
        Mat::from_vec(dim, dim, text.into_iter().map(f64::from).collect()),
    )
}
