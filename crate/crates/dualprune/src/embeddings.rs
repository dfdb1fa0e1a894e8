//! Per-sample image embeddings and per-class text embeddings.
//!
//! DPEM binary layout: magic `DPEM`, u32 version (=1), u32 N, u32 d_e, then
//! N·d_e little-endian f32. DPTE is identical with magic `DPTE` and C rows.
//!
//! Tables normally arrive precomputed from an external encoder; the
//! synthesizer below builds a stand-in table whose text rows are orthonormal
//! anchors and whose image rows sit on the anchor of each sample's
//! ground-truth class. A mislabeled sample therefore aligns with its true
//! class's anchor rather than its observed label's, which is what lets
//! consistency scoring surface label noise.

use std::fs;
use std::io::{BufWriter, Cursor, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::binio;
use crate::dataset::Dataset;
use crate::error::{Error, Result};

pub const DPEM_MAGIC: &[u8; 4] = b"DPEM";
pub const DPTE_MAGIC: &[u8; 4] = b"DPTE";
pub const EMBED_VERSION: u32 = 1;

/// N image rows and C text rows, all of width `embed_dim`, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    image: Vec<f32>,
    text: Vec<f32>,
    num_samples: usize,
    num_classes: usize,
    embed_dim: usize,
}

impl EmbeddingTable {
    pub fn new(
        image: Vec<f32>,
        text: Vec<f32>,
        num_samples: usize,
        num_classes: usize,
        embed_dim: usize,
    ) -> Result<Self> {
        if embed_dim == 0 {
            return Err(Error::validation("embed_dim must be positive"));
        }
        if image.len() != num_samples * embed_dim {
            return Err(Error::validation(format!(
                "image embedding buffer holds {} values, expected {}",
                image.len(),
                num_samples * embed_dim
            )));
        }
        if text.len() != num_classes * embed_dim {
            return Err(Error::validation(format!(
                "text embedding buffer holds {} values, expected {}",
                text.len(),
                num_classes * embed_dim
            )));
        }
        let table = EmbeddingTable {
            image,
            text,
            num_samples,
            num_classes,
            embed_dim,
        };
        table.check_rows(&table.image, "image")?;
        table.check_rows(&table.text, "text")?;
        Ok(table)
    }

    fn check_rows(&self, buf: &[f32], kind: &str) -> Result<()> {
        for (row, chunk) in buf.chunks(self.embed_dim).enumerate() {
            if let Some(j) = chunk.iter().position(|v| !v.is_finite()) {
                return Err(Error::validation(format!(
                    "{kind} embedding row {row}, entry {j} is not finite"
                )));
            }
            let sq: f64 = chunk.iter().map(|&v| f64::from(v) * f64::from(v)).sum();
            if sq <= 0.0 {
                return Err(Error::validation(format!(
                    "{kind} embedding row {row} has zero norm"
                )));
            }
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn image_row(&self, i: usize) -> &[f32] {
        &self.image[i * self.embed_dim..(i + 1) * self.embed_dim]
    }

    pub fn text_row(&self, c: usize) -> &[f32] {
        &self.text[c * self.embed_dim..(c + 1) * self.embed_dim]
    }

    pub fn image_row_f64(&self, i: usize) -> Vec<f64> {
        self.image_row(i).iter().map(|&v| f64::from(v)).collect()
    }

    pub fn text_row_f64(&self, c: usize) -> Vec<f64> {
        self.text_row(c).iter().map(|&v| f64::from(v)).collect()
    }
}

/// Loads a DPEM image table and a DPTE text table, checking that row counts
/// match the owning dataset and that the two files agree on `embed_dim`.
pub fn load_embeddings(
    image_path: impl AsRef<Path>,
    text_path: impl AsRef<Path>,
    expected_n: usize,
    expected_c: usize,
) -> Result<EmbeddingTable> {
    let image_path = image_path.as_ref();
    let text_path = text_path.as_ref();

    let image_bytes = fs::read(image_path).map_err(|e| Error::io(image_path, e))?;
    let (n, d_img, image) = parse_embed_file(&image_bytes, DPEM_MAGIC)
        .map_err(|e| e.with_context(&image_path.display().to_string()))?;
    let text_bytes = fs::read(text_path).map_err(|e| Error::io(text_path, e))?;
    let (c, d_txt, text) = parse_embed_file(&text_bytes, DPTE_MAGIC)
        .map_err(|e| e.with_context(&text_path.display().to_string()))?;

    if n != expected_n {
        return Err(Error::validation(format!(
            "image embedding file has {n} rows, dataset has {expected_n} samples"
        )));
    }
    if c != expected_c {
        return Err(Error::validation(format!(
            "text embedding file has {c} rows, dataset has {expected_c} classes"
        )));
    }
    if d_img != d_txt {
        return Err(Error::validation(format!(
            "embedding dimension mismatch: image rows are {d_img}-wide, text rows {d_txt}-wide"
        )));
    }
    EmbeddingTable::new(image, text, n, c, d_img)
}

fn parse_embed_file(bytes: &[u8], magic: &[u8; 4]) -> Result<(usize, usize, Vec<f32>)> {
    let mut r = Cursor::new(bytes);
    let truncated = |_| Error::format("truncated embedding file");
    let found = binio::read_magic(&mut r).map_err(truncated)?;
    if &found != magic {
        return Err(Error::format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&found)
        )));
    }
    let version = binio::read_u32(&mut r).map_err(truncated)?;
    if version != EMBED_VERSION {
        return Err(Error::format(format!(
            "unsupported embedding file version {version}"
        )));
    }
    let rows = binio::read_u32(&mut r).map_err(truncated)? as usize;
    let dim = binio::read_u32(&mut r).map_err(truncated)? as usize;
    let data = binio::read_f32_vec(&mut r, rows * dim).map_err(truncated)?;
    Ok((rows, dim, data))
}

/// Writes the image rows as DPEM and the text rows as DPTE.
pub fn save_embeddings(
    table: &EmbeddingTable,
    image_path: impl AsRef<Path>,
    text_path: impl AsRef<Path>,
) -> Result<()> {
    write_embed_file(
        image_path.as_ref(),
        DPEM_MAGIC,
        table.num_samples,
        table.embed_dim,
        &table.image,
    )?;
    write_embed_file(
        text_path.as_ref(),
        DPTE_MAGIC,
        table.num_classes,
        table.embed_dim,
        &table.text,
    )
}

fn write_embed_file(
    path: &Path,
    magic: &[u8; 4],
    rows: usize,
    dim: usize,
    data: &[f32],
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<fs::File>| -> std::io::Result<()> {
        binio::write_magic(w, magic)?;
        binio::write_u32(w, EMBED_VERSION)?;
        binio::write_u32(w, rows as u32)?;
        binio::write_u32(w, dim as u32)?;
        binio::write_f32_slice(w, data)?;
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

/// Builds a synthetic table for `ds`. Text rows are the first C rows of a
/// seeded random orthonormal basis, scaled by `anchor_scale`; image row `i`
/// is the anchor of sample i's ground-truth class plus Gaussian jitter.
pub fn synthesize_embeddings(
    ds: &Dataset,
    embed_dim: usize,
    anchor_scale: f64,
    jitter_std: f64,
    rng_seed: u64,
) -> Result<EmbeddingTable> {
    let c = ds.num_classes();
    if embed_dim < c {
        return Err(Error::validation(format!(
            "embed_dim ({embed_dim}) must be >= num_classes ({c}) to fit orthogonal anchors"
        )));
    }
    if !(anchor_scale > 0.0 && anchor_scale.is_finite()) {
        return Err(Error::validation("anchor_scale must be positive"));
    }
    if !(jitter_std >= 0.0 && jitter_std.is_finite()) {
        return Err(Error::validation("jitter_std must be nonnegative"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let anchors = random_orthonormal_rows(c, embed_dim, &mut rng);

    let mut text = Vec::with_capacity(c * embed_dim);
    for anchor in &anchors {
        for &v in anchor {
            text.push((v * anchor_scale) as f32);
        }
    }

    let mut image = Vec::with_capacity(ds.len() * embed_dim);
    for s in ds.samples() {
        let anchor = &anchors[s.true_label];
        for &v in anchor {
            let jitter: f64 = rng.sample(StandardNormal);
            image.push((v * anchor_scale + jitter_std * jitter) as f32);
        }
    }
    EmbeddingTable::new(image, text, ds.len(), c, embed_dim)
}

/// First `rows` rows of an orthonormal basis obtained by Gram-Schmidt over
/// seeded Gaussian draws. Rows are redrawn in the (measure-zero) event of a
/// near-dependent draw, so the result is always full rank.
fn random_orthonormal_rows(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rows);
    while basis.len() < rows {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for prev in &basis {
            let proj: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (x, p) in v.iter_mut().zip(prev) {
                *x -= proj * p;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        for x in &mut v {
            *x /= norm;
        }
        basis.push(v);
    }
    basis
}
