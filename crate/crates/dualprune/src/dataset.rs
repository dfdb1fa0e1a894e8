//! In-memory dataset, synthetic generation, label-noise injection, and the
//! DPDS / CSV encodings.
//!
//! DPDS binary layout: magic `DPDS`, u32 version (=1), u32 N, u32 d, u32 C,
//! then N·d little-endian f32 features row-major, then N u32 observed labels,
//! then N u32 ground-truth labels.
//!
//! CSV layout: header `f0,...,f{d-1},label,true_label`, one row per sample.
//! `num_classes` is inferred as `1 + max(label column values)`.
//!
//! Ground-truth labels travel inside the dataset so that noise-filtering
//! metrics need no side files. They are instrumentation only: the training
//! and scoring paths read observed labels exclusively.

use std::fs;
use std::io::{BufWriter, Cursor, Write};
use std::path::Path;

use rand::seq::index::sample as index_sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::binio;
use crate::error::{Error, Result};

pub const DPDS_MAGIC: &[u8; 4] = b"DPDS";
pub const DPDS_VERSION: u32 = 1;

/// One training sample. `is_noisy` holds exactly when the observed label
/// disagrees with the ground-truth label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub features: Vec<f32>,
    pub observed_label: usize,
    pub true_label: usize,
    pub is_noisy: bool,
}

/// An immutable, validated collection of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    num_classes: usize,
    feature_dim: usize,
}

impl Dataset {
    /// Validates every invariant: ids are `0..N` in order, feature lengths
    /// agree, labels are in range, features are finite, and the noise flag
    /// matches the label columns.
    pub fn new(samples: Vec<Sample>, num_classes: usize, feature_dim: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::validation("dataset must contain at least one sample"));
        }
        if num_classes < 2 {
            return Err(Error::validation(format!(
                "num_classes must be at least 2, got {num_classes}"
            )));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.id != i {
                return Err(Error::validation(format!(
                    "sample at position {i} has id {}; ids must be 0..N in order",
                    s.id
                )));
            }
            if s.features.len() != feature_dim {
                return Err(Error::validation(format!(
                    "row {i}: feature length {} does not match feature_dim {feature_dim}",
                    s.features.len()
                )));
            }
            if s.observed_label >= num_classes {
                return Err(Error::validation(format!(
                    "row {i}: observed label {} is out of range for {num_classes} classes",
                    s.observed_label
                )));
            }
            if s.true_label >= num_classes {
                return Err(Error::validation(format!(
                    "row {i}: true label {} is out of range for {num_classes} classes",
                    s.true_label
                )));
            }
            if let Some(j) = s.features.iter().position(|f| !f.is_finite()) {
                return Err(Error::validation(format!(
                    "row {i}: feature {j} is not finite"
                )));
            }
            if s.is_noisy != (s.observed_label != s.true_label) {
                return Err(Error::validation(format!(
                    "row {i}: is_noisy flag disagrees with the label columns"
                )));
            }
        }
        Ok(Dataset {
            samples,
            num_classes,
            feature_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, id: usize) -> &Sample {
        &self.samples[id]
    }

    pub fn features(&self, id: usize) -> &[f32] {
        &self.samples[id].features
    }

    pub fn observed_label(&self, id: usize) -> usize {
        self.samples[id].observed_label
    }

    pub fn true_label(&self, id: usize) -> usize {
        self.samples[id].true_label
    }

    pub fn observed_labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.observed_label).collect()
    }

    pub fn noisy_count(&self) -> usize {
        self.samples.iter().filter(|s| s.is_noisy).count()
    }
}

/// Draws `n_per_class` samples per class around pairwise-separated means.
///
/// Class `c`'s mean is `class_separation · e_c` (the c-th coordinate axis),
/// which keeps every pair of means at distance `√2 · class_separation`.
/// This placement needs `feature_dim >= num_classes`. Labels start clean:
/// `observed == true` for every sample.
pub fn generate_gaussian_blobs(
    n_per_class: usize,
    num_classes: usize,
    feature_dim: usize,
    class_separation: f64,
    noise_std: f64,
    rng_seed: u64,
) -> Result<Dataset> {
    if n_per_class < 1 {
        return Err(Error::validation("n_per_class must be at least 1"));
    }
    if num_classes < 2 {
        return Err(Error::validation("num_classes must be at least 2"));
    }
    if feature_dim < 1 {
        return Err(Error::validation("feature_dim must be at least 1"));
    }
    if feature_dim < num_classes {
        return Err(Error::validation(format!(
            "feature_dim ({feature_dim}) must be >= num_classes ({num_classes}) \
             so class means can be placed on distinct axes"
        )));
    }
    if !(class_separation > 0.0 && class_separation.is_finite()) {
        return Err(Error::validation("class_separation must be positive"));
    }
    if !(noise_std > 0.0 && noise_std.is_finite()) {
        return Err(Error::validation("noise_std must be positive"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut samples = Vec::with_capacity(n_per_class * num_classes);
    for class in 0..num_classes {
        for _ in 0..n_per_class {
            let mut features = vec![0.0f32; feature_dim];
            for (dim, slot) in features.iter_mut().enumerate() {
                let mean = if dim == class { class_separation } else { 0.0 };
                let jitter: f64 = rng.sample(StandardNormal);
                *slot = (mean + noise_std * jitter) as f32;
            }
            let id = samples.len();
            samples.push(Sample {
                id,
                features,
                observed_label: class,
                true_label: class,
                is_noisy: false,
            });
        }
    }
    Dataset::new(samples, num_classes, feature_dim)
}

/// Flips the observed label of exactly `round(rate · N)` samples, chosen
/// uniformly without replacement. Each flipped label is resampled uniformly
/// from the other `C-1` classes, so a flipped sample is always noisy.
/// Ground-truth labels and features are untouched.
pub fn inject_label_noise(ds: &Dataset, rate: f64, rng_seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&rate) || !rate.is_finite() {
        return Err(Error::validation(format!(
            "noise rate must lie in [0, 1], got {rate}"
        )));
    }
    let n = ds.len();
    let flip_count = (rate * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let chosen = index_sample(&mut rng, n, flip_count);

    let mut samples = ds.samples.clone();
    for idx in chosen.iter() {
        let s = &mut samples[idx];
        // Uniform over the C-1 classes other than the true label.
        let draw = rng.gen_range(0..ds.num_classes - 1);
        s.observed_label = if draw >= s.true_label { draw + 1 } else { draw };
    }
    for s in &mut samples {
        s.is_noisy = s.observed_label != s.true_label;
    }
    Dataset::new(samples, ds.num_classes, ds.feature_dim)
}

/// Reads a dataset from `path`, accepting either encoding. Files beginning
/// with the `DPDS` magic parse as binary; anything else parses as CSV.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(DPDS_MAGIC) {
        parse_dpds(&bytes).map_err(|e| e.with_context(&path.display().to_string()))
    } else {
        parse_csv(&bytes).map_err(|e| e.with_context(&path.display().to_string()))
    }
}

/// Writes `ds` to `path`. A `.csv` extension selects the CSV encoding;
/// everything else gets DPDS binary.
pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let is_csv = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("csv"))
        .unwrap_or(false);
    let result = if is_csv {
        write_csv(ds, &mut w)
    } else {
        write_dpds(ds, &mut w)
    };
    result
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn write_dpds(ds: &Dataset, w: &mut impl Write) -> std::io::Result<()> {
    binio::write_magic(w, DPDS_MAGIC)?;
    binio::write_u32(w, DPDS_VERSION)?;
    binio::write_u32(w, ds.len() as u32)?;
    binio::write_u32(w, ds.feature_dim as u32)?;
    binio::write_u32(w, ds.num_classes as u32)?;
    for s in &ds.samples {
        binio::write_f32_slice(w, &s.features)?;
    }
    for s in &ds.samples {
        binio::write_u32(w, s.observed_label as u32)?;
    }
    for s in &ds.samples {
        binio::write_u32(w, s.true_label as u32)?;
    }
    Ok(())
}

fn parse_dpds(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Cursor::new(bytes);
    let truncated = |_| Error::format("truncated DPDS file");
    let magic = binio::read_magic(&mut r).map_err(truncated)?;
    if &magic != DPDS_MAGIC {
        return Err(Error::format("missing DPDS magic"));
    }
    let version = binio::read_u32(&mut r).map_err(truncated)?;
    if version != DPDS_VERSION {
        return Err(Error::format(format!(
            "unsupported DPDS version {version} (expected {DPDS_VERSION})"
        )));
    }
    let n = binio::read_u32(&mut r).map_err(truncated)? as usize;
    let d = binio::read_u32(&mut r).map_err(truncated)? as usize;
    let c = binio::read_u32(&mut r).map_err(truncated)? as usize;

    let mut features = Vec::with_capacity(n);
    for _ in 0..n {
        features.push(binio::read_f32_vec(&mut r, d).map_err(truncated)?);
    }
    let mut observed = Vec::with_capacity(n);
    for _ in 0..n {
        observed.push(binio::read_u32(&mut r).map_err(truncated)? as usize);
    }
    let mut truth = Vec::with_capacity(n);
    for _ in 0..n {
        truth.push(binio::read_u32(&mut r).map_err(truncated)? as usize);
    }

    let samples = features
        .into_iter()
        .zip(observed)
        .zip(truth)
        .enumerate()
        .map(|(id, ((features, observed_label), true_label))| Sample {
            id,
            features,
            observed_label,
            true_label,
            is_noisy: observed_label != true_label,
        })
        .collect();
    Dataset::new(samples, c, d)
}

fn write_csv(ds: &Dataset, w: &mut impl Write) -> std::io::Result<()> {
    let header: Vec<String> = (0..ds.feature_dim)
        .map(|i| format!("f{i}"))
        .chain(["label".to_string(), "true_label".to_string()])
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for s in &ds.samples {
        for f in &s.features {
            write!(w, "{f},")?;
        }
        writeln!(w, "{},{}", s.observed_label, s.true_label)?;
    }
    Ok(())
}

fn parse_csv(bytes: &[u8]) -> Result<Dataset> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::format("CSV file is not valid UTF-8"))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format("empty CSV file"))?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.len() < 3
        || columns[columns.len() - 2] != "label"
        || columns[columns.len() - 1] != "true_label"
    {
        return Err(Error::format(
            "CSV header must be f0,...,f{d-1},label,true_label",
        ));
    }
    let d = columns.len() - 2;
    for (i, col) in columns[..d].iter().enumerate() {
        if *col != format!("f{i}") {
            return Err(Error::format(format!(
                "CSV header column {i} is {col:?}, expected \"f{i}\""
            )));
        }
    }

    let mut samples = Vec::new();
    let mut max_label = 0usize;
    for (row, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 2 {
            return Err(Error::format(format!(
                "row {row}: expected {} fields, found {}",
                d + 2,
                fields.len()
            )));
        }
        let mut features = Vec::with_capacity(d);
        for (j, field) in fields[..d].iter().enumerate() {
            let value: f32 = field.parse().map_err(|_| {
                Error::format(format!("row {row}: feature {j} ({field:?}) is not a number"))
            })?;
            features.push(value);
        }
        let observed_label: usize = fields[d]
            .parse()
            .map_err(|_| Error::format(format!("row {row}: bad label {:?}", fields[d])))?;
        let true_label: usize = fields[d + 1]
            .parse()
            .map_err(|_| Error::format(format!("row {row}: bad true_label {:?}", fields[d + 1])))?;
        max_label = max_label.max(observed_label).max(true_label);
        samples.push(Sample {
            id: row,
            features,
            observed_label,
            true_label,
            is_noisy: observed_label != true_label,
        });
    }
    Dataset::new(samples, max_label + 1, d)
}
