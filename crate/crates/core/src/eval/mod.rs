//! Classification, retrieval and invariance harnesses over encoded features.

pub mod invariance;
pub mod report;
pub mod retrieval;
pub mod svm;

pub use invariance::{best_window, default_sweep, invariance_sweep, ten_crop_classify, InvarianceRow, InvarianceTable, WindowHit};
pub use retrieval::{average_precision, average_precision_from_hits, mean_average_precision, retrieve, Compressor, QueryResult, Relevance, RetrievalResult};
pub use svm::{argmax, svm_predict, svm_train, svm_train_traced, ten_crop_predict, Prediction, SgdConfig, SvmModel, TrainTrace};
