//! Response-matrix ingestion and the model/item screening pipeline.

mod filter;
mod matrix;

pub use filter::{
    filter_items_discrimination, filter_items_variance, filter_models, point_biserial, preprocess, FilterConfig,
    FilterReport,
};
pub use matrix::{load_matrix, ResponseMatrix};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("malformed header: {0}")]
    Header(String),
    #[error("line {line}: expected {expected} cells, found {found}")]
    RowLength { line: usize, expected: usize, found: usize },
    #[error("line {line} (model `{model}`, item `{item}`): non-binary cell `{value}`")]
    Cell { line: usize, model: String, item: String, value: String },
    #[error("duplicate {kind} identifier `{id}`")]
    DuplicateId { kind: &'static str, id: String },
    #[error("matrix shape mismatch: {models} models × {items} items but {cells} cells")]
    Shape { models: usize, items: usize, cells: usize },
    #[error("csv: {0}")]
    Csv(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid filter configuration: {0}")]
    Config(String),
    #[error("every model was removed by the model filters")]
    EmptyPopulation,
    #[error("every item was removed by the item filters")]
    EmptyBank,
    #[error("point-biserial undefined: {0}")]
    UndefinedCorrelation(&'static str),
}
