//! C ABI over the dualprune engine.
//!
//! Conventions:
//! - Every fallible function returns a [`DpStatus`]; `DP_STATUS_OK` is zero.
//!   On failure, [`dp_last_error_message`] returns a thread-local message
//!   that stays valid until the next dualprune call on the same thread.
//! - Objects are opaque handles created through `dp_*` constructors and
//!   released with the matching `dp_*_free`. Passing a handle to any other
//!   `free` function, double-freeing, or using a freed handle is undefined
//!   behavior, as with any C object API.
//! - Paths are NUL-terminated UTF-8 strings.
//! - Read-only accessors tolerate NULL and return zero.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::path::Path;

use libc::c_char;

use dualprune::dataset::{generate_gaussian_blobs, inject_label_noise, load_dataset, save_dataset};
use dualprune::embeddings::{load_embeddings, save_embeddings, synthesize_embeddings};
use dualprune::error::Error;
use dualprune::harness::{run_experiment, write_jsonl, RunReport, Strategy, TrainConfig};
use dualprune::xmodal::{load_adapters, save_adapters, train_adapters};
use dualprune::{AdapterPair, Dataset, EmbeddingTable};

/// Result of a dualprune call. Nonzero values match the CLI's exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpStatus {
    Ok = 0,
    /// An argument or input value violates a precondition.
    InvalidArgument = 1,
    /// File I/O failed or a file's contents are malformed.
    IoError = 2,
    /// A computation left its mathematical domain.
    DomainError = 3,
    /// A required pointer argument was NULL (or a string was not UTF-8).
    NullPointer = 4,
}

/// Subset-selection strategy, mirroring the CLI's `--strategy` values.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpStrategy {
    Dual = 0,
    LossOnly = 1,
    RandomDynamic = 2,
    FullData = 3,
}

impl From<DpStrategy> for Strategy {
    fn from(s: DpStrategy) -> Strategy {
        match s {
            DpStrategy::Dual => Strategy::Dual,
            DpStrategy::LossOnly => Strategy::LossOnly,
            DpStrategy::RandomDynamic => Strategy::RandomDynamic,
            DpStrategy::FullData => Strategy::FullData,
        }
    }
}

/// Experiment configuration. `hidden == 0` selects plain softmax regression.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DpRunConfig {
    pub selection_ratio: f64,
    pub epochs: u32,
    pub batch_size: u32,
    pub learn_rate: f64,
    pub lr_decay: f64,
    pub lambda: f64,
    pub score_learn_rate: f64,
    pub steps_per_epoch: u32,
    pub refresh_every: u32,
    pub warmup_epochs: u32,
    pub strategy: DpStrategy,
    pub hidden: u32,
    pub init_scale: f64,
    pub rng_seed: u64,
}

impl From<&DpRunConfig> for TrainConfig {
    fn from(c: &DpRunConfig) -> TrainConfig {
        TrainConfig {
            selection_ratio: c.selection_ratio,
            epochs: c.epochs as usize,
            batch_size: c.batch_size as usize,
            learn_rate: c.learn_rate,
            lr_decay: c.lr_decay,
            lambda: c.lambda,
            score_learn_rate: c.score_learn_rate,
            steps_per_epoch: c.steps_per_epoch as usize,
            refresh_every: c.refresh_every as usize,
            warmup_epochs: c.warmup_epochs as usize,
            strategy: c.strategy.into(),
            hidden: if c.hidden == 0 {
                None
            } else {
                Some(c.hidden as usize)
            },
            init_scale: c.init_scale,
            rng_seed: c.rng_seed,
        }
    }
}

/// Opaque dataset handle.
pub struct DpDataset(Dataset);
/// Opaque embedding-table handle.
pub struct DpEmbeddingTable(EmbeddingTable);
/// Opaque adapter-pair handle.
pub struct DpAdapterPair(AdapterPair);
/// Opaque run-report handle.
pub struct DpRunReport(RunReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn clear_error() {
    LAST_ERROR.with(|e| e.borrow_mut().take());
}

fn set_error(message: String, status: DpStatus) -> DpStatus {
    let message = CString::new(message)
        .unwrap_or_else(|_| CString::new("error message contained NUL").unwrap());
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(message));
    status
}

fn set_engine_error(err: Error) -> DpStatus {
    let status = match err.exit_code() {
        1 => DpStatus::InvalidArgument,
        2 => DpStatus::IoError,
        _ => DpStatus::DomainError,
    };
    set_error(err.to_string(), status)
}

fn null_arg(name: &str) -> DpStatus {
    set_error(format!("{name} must not be NULL"), DpStatus::NullPointer)
}

/// Last error message for this thread, or NULL when the previous call
/// succeeded. The pointer is invalidated by the next dualprune call on the
/// same thread.
#[no_mangle]
pub extern "C" fn dp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| {
        e.borrow()
            .as_ref()
            .map(|s| s.as_ptr())
            .unwrap_or(std::ptr::null())
    })
}

unsafe fn path_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a Path, DpStatus> {
    if ptr.is_null() {
        return Err(null_arg(name));
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => Err(set_error(
            format!("{name} is not valid UTF-8"),
            DpStatus::NullPointer,
        )),
    }
}

unsafe fn write_handle<T>(
    out: *mut *mut T,
    result: dualprune::Result<T>,
) -> DpStatus {
    match result {
        Ok(value) => {
            *out = Box::into_raw(Box::new(value));
            DpStatus::Ok
        }
        Err(e) => {
            *out = std::ptr::null_mut();
            set_engine_error(e)
        }
    }
}

/// Fills `config` with the engine defaults (dual strategy, ratio 0.5,
/// 30 epochs).
///
/// # Safety
/// `config` must point to writable memory for one `DpRunConfig`.
#[no_mangle]
pub unsafe extern "C" fn dp_run_config_default(config: *mut DpRunConfig) -> DpStatus {
    clear_error();
    if config.is_null() {
        return null_arg("config");
    }
    let d = TrainConfig::default();
    *config = DpRunConfig {
        selection_ratio: d.selection_ratio,
        epochs: d.epochs as u32,
        batch_size: d.batch_size as u32,
        learn_rate: d.learn_rate,
        lr_decay: d.lr_decay,
        lambda: d.lambda,
        score_learn_rate: d.score_learn_rate,
        steps_per_epoch: d.steps_per_epoch as u32,
        refresh_every: d.refresh_every as u32,
        warmup_epochs: d.warmup_epochs as u32,
        strategy: DpStrategy::Dual,
        hidden: 0,
        init_scale: d.init_scale,
        rng_seed: d.rng_seed,
    };
    DpStatus::Ok
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// Generates separable Gaussian blobs with clean labels.
///
/// # Safety
/// `out` must point to writable memory for one pointer.
#[no_mangle]
pub unsafe extern "C" fn dp_dataset_generate(
    n_per_class: u32,
    num_classes: u32,
    feature_dim: u32,
    class_separation: f64,
    noise_std: f64,
    rng_seed: u64,
    out: *mut *mut DpDataset,
) -> DpStatus {
    clear_error();
    if out.is_null() {
        return null_arg("out");
    }
    write_handle(
        out,
        generate_gaussian_blobs(
            n_per_class as usize,
            num_classes as usize,
            feature_dim as usize,
            class_separation,
            noise_std,
            rng_seed,
        )
        .map(DpDataset),
    )
}

/// Loads a DPDS or CSV dataset file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dp_dataset_load(
    path: *const c_char,
    out: *mut *mut DpDataset,
) -> DpStatus {
    clear_error();
    if out.is_null() {
        return null_arg("out");
    }
    let path = match path_arg(path, "path") {
        Ok(p) => p,
        Err(status) => return status,
    };
    write_handle(out, load_dataset(path).map(DpDataset))
}

/// Writes the dataset to `path` (CSV when the extension is `.csv`,
/// DPDS binary otherwise).
///
/// # Safety
/// `ds` must be a live dataset handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dp_dataset_save(
    ds: *const DpDataset,
    path: *const c_char,
) -> DpStatus {
    clear_error();
    let Some(ds) = ds.as_ref() else {
        return null_arg("ds");
    };
    let path = match path_arg(path, "path") {
        Ok(p) => p,
        Err(status) => return status,
    };
    match save_dataset(&ds.0, path) {
        Ok(()) => DpStatus::Ok,
        Err(e) => set_engine_error(e),
    }
}

/// Returns a new dataset with `round(rate · N)` observed labels flipped.
///
/// # Safety
/// `ds` must be a live dataset handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dp_dataset_inject_label_noise(
    ds: *const DpDataset,
    rate: f64,
    rng_seed: u64,
    out: *mut *mut DpDataset,
) -> DpStatus {
    clear_error();
    if out.is_null() {
        return null_arg("out");
    }
    let Some(ds) = ds.as_ref() else {
        return null_arg("ds");
    };
    write_handle(out, inject_label_noise(&ds.0, rate, rng_seed).map(DpDataset))
}

/// # Safety
/// `ds` must be NULL or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn dp_dataset_num_samples(ds: *const DpDataset) -> u32 {
    ds.as_ref().map(|d| d.0.len() as u32).unwrap_or(0)
}

/// # Safety
/// `ds` must be NULL or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn dp_dataset_num_classes(ds: *const DpDataset) -> u32 {
    ds.as_ref().map(|d| d.0.num_classes() as u32).unwrap_or(0)
}

/// # Safety
/// `ds` must be NULL or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn dp_dataset_feature_dim(ds: *const DpDataset) -> u32 {
    ds.as_ref().map(|d| d.0.feature_dim() as u32).unwrap_or(0)
}

/// Number of samples whose observed label disagrees with ground truth.
///
/// # Safety
/// `ds` must be NULL or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn dp_dataset_noisy_count(ds: *const DpDataset) -> u32 {
    ds.as_ref().map(|d| d.0.noisy_count() as u32).unwrap_or(0)
}

/// # Safety
/// `ds` must be NULL or an owned dataset handle; it is freed here.
#[no_mangle]
pub unsafe extern "C" fn dp_dataset_free(ds: *mut DpDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

// ---------------------------------------------------------------------------
// Embedding tables
// ---------------------------------------------------------------------------

/// Loads a DPEM image table and DPTE text table.
///
/// # Safety
/// Both paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dp_embeddings_load(
    image_path: *const c_char,
    text_path: *const c_char,
    expected_n: u32,
    expected_c: u32,
    out: *mut *mut DpEmbeddingTable,
) -> DpStatus {
    clear_error();
    if out.is_null() {
        return null_arg("out");
    }
    let image_path = match path_arg(image_path, "image_path") {
        Ok(p) => p,
        Err(status) => return status,
    };
    let text_path = match path_arg(text_path, "text_path") {
        Ok(p) => p,
        Err(status) => return status,
    };
    write_handle(
        out,
        load_embeddings(
            image_path,
            text_path,
            expected_n as usize,
            expected_c as usize,
        )
        .map(DpEmbeddingTable),
    )
}

/// Builds a synthetic anchored embedding table for `ds`.
///
/// # Safety
/// `ds` must be a live dataset handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dp_embeddings_synthesize(
    ds: *const DpDataset,
    embed_dim: u32,
    anchor_scale: f64,
    jitter_std: f64,
    rng_seed: u64,
    out: *mut *mut DpEmbeddingTable,
) -> DpStatus {
    clear_error();
    if out.is_null() {
        return null_arg("out");
    }
    let Some(ds) = ds.as_ref() else {
        return null_arg("ds");
    };
    write_handle(
        out,
        synthesize_embeddings(&ds.0, embed_dim as usize, anchor_scale, jitter_std, rng_seed)
            .map(DpEmbeddingTable),
    )
}

/// Writes the table as a DPEM file plus a DPTE file.
///
/// # Safety
/// `table` must be a live handle; both paths NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn dp_embeddings_save(
    table: *const DpEmbeddingTable,
    image_path: *const c_char,
    text_path: *const c_char,
) -> DpStatus {
    clear_error();
    let Some(table) = table.as_ref() else {
        return null_arg("table");
    };
    let image_path = match path_arg(image_path, "image_path") {
        Ok(p) => p,
        Err(status) => return status,
    };
    let text_path = match path_arg(text_path, "text_path") {
        Ok(p) => p,
        Err(status) => return status,
    };
    match save_embeddings(&table.0, image_path, text_path) {
        Ok(()) => DpStatus::Ok,
        Err(e) => set_engine_error(e),
    }
}

/// # Safety
/// `table` must be NULL or a live embedding-table handle.
#[no_mangle]
pub unsafe extern "C" fn dp_embeddings_dim(table: *const DpEmbeddingTable) -> u32 {
    table.as_ref().map(|t| t.0.embed_dim() as u32).unwrap_or(0)
}

/// # Safety
/// `table` must be NULL or an owned handle; it is freed here.
#[no_mangle]
pub unsafe extern "C" fn dp_embeddings_free(table: *mut DpEmbeddingTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

// ---------------------------------------------------------------------------
// Adapters
// ---------------------------------------------------------------------------

/// Identity adapter pair of the given dimension.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dp_adapters_identity(
    embed_dim: u32,
    out: *mut *mut DpAdapterPair,
) -> DpStatus {
    clear_error();
    if out.is_null() {
        return null_arg("out");
    }
    if embed_dim == 0 {
        *out = std::ptr::null_mut();
        return set_error(
            "embed_dim must be positive".to_string(),
            DpStatus::InvalidArgument,
        );
    }
    write_handle(out, Ok(DpAdapterPair(AdapterPair::identity(embed_dim as usize))))
}

/// Fine-tunes adapters on the table's (image, observed-label text) pairs.
///
/// # Safety
/// `table` and `ds` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dp_adapters_train(
    table: *const DpEmbeddingTable,
    ds: *const DpDataset,
    epochs: u32,
    batch_size: u32,
    learn_rate: f64,
    rng_seed: u64,
    out: *mut *mut DpAdapterPair,
) -> DpStatus {
    clear_error();
    if out.is_null() {
        return null_arg("out");
    }
    let Some(table) = table.as_ref() else {
        return null_arg("table");
    };
    let Some(ds) = ds.as_ref() else {
        return null_arg("ds");
    };
    write_handle(
        out,
        train_adapters(
            &table.0,
            &ds.0.observed_labels(),
            epochs as usize,
            batch_size as usize,
            learn_rate,
            rng_seed,
        )
        .map(DpAdapterPair),
    )
}

/// Loads a DPAD adapter file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dp_adapters_load(
    path: *const c_char,
    out: *mut *mut DpAdapterPair,
) -> DpStatus {
    clear_error();
    if out.is_null() {
        return null_arg("out");
    }
    let path = match path_arg(path, "path") {
        Ok(p) => p,
        Err(status) => return status,
    };
    write_handle(out, load_adapters(path).map(DpAdapterPair))
}

/// Writes the pair as a DPAD file.
///
/// # Safety
/// `adapters` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dp_adapters_save(
    adapters: *const DpAdapterPair,
    path: *const c_char,
) -> DpStatus {
    clear_error();
    let Some(adapters) = adapters.as_ref() else {
        return null_arg("adapters");
    };
    let path = match path_arg(path, "path") {
        Ok(p) => p,
        Err(status) => return status,
    };
    match save_adapters(&adapters.0, path) {
        Ok(()) => DpStatus::Ok,
        Err(e) => set_engine_error(e),
    }
}

/// # Safety
/// `adapters` must be NULL or an owned handle; it is freed here.
#[no_mangle]
pub unsafe extern "C" fn dp_adapters_free(adapters: *mut DpAdapterPair) {
    if !adapters.is_null() {
        drop(Box::from_raw(adapters));
    }
}

// ---------------------------------------------------------------------------
// Experiment runs
// ---------------------------------------------------------------------------

/// Runs the pruning loop and returns a report handle.
///
/// # Safety
/// `config`, `ds`, `table`, and `adapters` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dp_run_experiment(
    config: *const DpRunConfig,
    ds: *const DpDataset,
    table: *const DpEmbeddingTable,
    adapters: *const DpAdapterPair,
    out: *mut *mut DpRunReport,
) -> DpStatus {
    clear_error();
    if out.is_null() {
        return null_arg("out");
    }
    let Some(config) = config.as_ref() else {
        return null_arg("config");
    };
    let Some(ds) = ds.as_ref() else {
        return null_arg("ds");
    };
    let Some(table) = table.as_ref() else {
        return null_arg("table");
    };
    let Some(adapters) = adapters.as_ref() else {
        return null_arg("adapters");
    };
    let train_config: TrainConfig = config.into();
    write_handle(
        out,
        run_experiment(&train_config, &ds.0, &table.0, &adapters.0).map(DpRunReport),
    )
}

/// # Safety
/// `report` must be NULL or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn dp_report_num_epochs(report: *const DpRunReport) -> u32 {
    report.as_ref().map(|r| r.0.epochs.len() as u32).unwrap_or(0)
}

/// Final ground-truth accuracy of the run (0 for NULL).
///
/// # Safety
/// `report` must be NULL or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn dp_report_final_accuracy(report: *const DpRunReport) -> f64 {
    report
        .as_ref()
        .map(|r| r.0.summary.final_accuracy)
        .unwrap_or(0.0)
}

/// # Safety
/// `report` must be NULL or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn dp_report_total_forward_passes(report: *const DpRunReport) -> u64 {
    report
        .as_ref()
        .map(|r| r.0.summary.total_forward_passes)
        .unwrap_or(0)
}

/// # Safety
/// `report` must be NULL or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn dp_report_total_backward_updates(report: *const DpRunReport) -> u64 {
    report
        .as_ref()
        .map(|r| r.0.summary.total_backward_updates)
        .unwrap_or(0)
}

/// Fraction of noisy samples selected in the given epoch (0 when out of
/// range).
///
/// # Safety
/// `report` must be NULL or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn dp_report_epoch_noisy_fraction(
    report: *const DpRunReport,
    epoch: u32,
) -> f64 {
    report
        .as_ref()
        .and_then(|r| r.0.epochs.get(epoch as usize))
        .map(|m| m.selected_noisy_fraction)
        .unwrap_or(0.0)
}

/// Mean selected-noisy fraction over the post-warmup epochs.
///
/// # Safety
/// `report` must be NULL or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn dp_report_mean_post_warmup_noisy_fraction(
    report: *const DpRunReport,
) -> f64 {
    report
        .as_ref()
        .map(|r| r.0.mean_post_warmup_noisy_fraction())
        .unwrap_or(0.0)
}

/// Writes the report's JSONL metrics stream to `path`.
///
/// # Safety
/// `report` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dp_report_write_jsonl(
    report: *const DpRunReport,
    path: *const c_char,
) -> DpStatus {
    clear_error();
    let Some(report) = report.as_ref() else {
        return null_arg("report");
    };
    let path = match path_arg(path, "path") {
        Ok(p) => p,
        Err(status) => return status,
    };
    match write_jsonl(&report.0, path) {
        Ok(()) => DpStatus::Ok,
        Err(e) => set_engine_error(e),
    }
}

/// # Safety
/// `report` must be NULL or an owned handle; it is freed here.
#[no_mangle]
pub unsafe extern "C" fn dp_report_free(report: *mut DpRunReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}
