//! Synthetic scenes, question-answer pairs and transfer tasks with
//! ground-truth answers from a symbolic oracle.

mod features;
mod oracle;
mod qa;
mod records;
mod scene;
mod transfer;


use thiserror::Error;

pub use features::{
    learnable_registry, oracle_registry, SceneFeatureProvider, BINARY_DIM, TERNARY_DIM, UNARY_DIM,
};
pub use oracle::{OracleValue, SymbolicOracle};
pub use qa::{article, gen_qa, relation_text, Desc, QaConfig, QaItem, QaTemplate};
pub use records::{
    evaluate_transfer, gen_qa_split, read_jsonl, to_dataset, transfer_records, write_jsonl,
    QaRecord, SplitConfig, TaskReport, TransferRecord, SCHEMA_VERSION,
};
pub use scene::{
    gen_scene, relation_holds, view_frame, view_relation_holds, Attribute, AttributeVocab, Entity,
    Scene, SceneConfig, MAX_REJECTIONS, RELATIONS, VIEW_RELATIONS,
};
pub use transfer::{gen_puzzle, gen_ref, gen_rpm, gen_transfer_set, TransferExample, TransferTask};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("configuration infeasible: {0}")]
    ConfigInfeasible(String),
    #[error("oracle: {0}")]
    Oracle(String),
    #[error("expected exactly one matching entity, found {0}")]
    NotUnique(usize),
    #[error("io: {0}")]
    Io(String),
    #[error("malformed record: {0}")]
    Record(String),
}

impl From<std::io::Error> for DatagenError {
    fn from(e: std::io::Error) -> Self {
        DatagenError::Io(e.to_string())
    }
}
