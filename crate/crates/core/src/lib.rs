//! Item response theory toolkit for evaluating models on benchmark item banks:
//! response-matrix screening, partitioned 3PL calibration, and adaptive testing
//! with Fisher-information item selection.

pub mod analytics;
pub mod bank;
pub mod calibration;
pub mod cat;
pub mod cli;
pub mod data;
pub mod irt;
pub mod respondents;
pub mod rng;

pub use bank::{BankItem, ItemBank};
pub use cat::{batch_run, run_session, CatConfig, Session, SessionStatus};
pub use data::ResponseMatrix;
pub use irt::{AbilityEstimate, InfoForm, ItemParameters, QuadratureGrid, TestRecord};
