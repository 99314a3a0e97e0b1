//! Datasets, preprocessing and file formats.

mod binary;
mod idx;
mod pca;
mod synthetic;
mod trace;

pub use binary::{
    load_dataset, load_params, read_records, save_dataset, save_params, write_records, ParamsBundle,
    PARAMS_MAGIC,
};
pub use idx::{load_idx, read_idx, write_idx, IdxKind, IdxTensor};
pub use pca::{pca_project, Pca};
pub use synthetic::gen_synthetic;
pub use trace::{read_trace, trace_from_str, trace_to_string, write_trace, TRACE_HEADER};
