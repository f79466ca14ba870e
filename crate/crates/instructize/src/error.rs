use thiserror::Error;

use crate::types::{Granularity, Task};

#[derive(Debug, Error)]
pub enum InstructizeError {
    #[error("template needs slot {slot:?} but the {dataset} record does not carry it")]
    MissingSlot { slot: String, dataset: String },
    #[error("slot {slot:?} holds an invalid box {bbox:?}: coordinates must be normalized with ordered corners")]
    BadBBox { slot: String, bbox: [f64; 4] },
    #[error("malformed template: {0}")]
    BadTemplate(String),
    #[error("no template covers dataset {dataset:?} (task {task:?}) at {granularity:?} granularity")]
    EmptyScope {
        dataset: String,
        task: Task,
        granularity: Granularity,
    },
    #[error("task {task:?} has no input/target swap")]
    NotInvertible { task: Task },
    #[error("cannot build an example from zero records")]
    NoRecords,
    #[error("records span images {a:?} and {b:?}; one example covers one image")]
    MixedImages { a: String, b: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
