//! Observation records, target transforms, the formula catalogs and the
//! OLS / leave-one-out machinery that ranks them.

pub mod catalog;
pub mod loo;
pub mod ols;
pub mod predict;
pub mod record;
pub mod select;
pub mod target;

pub use catalog::{
    all_formulas, build_features, discovered, find, natural_id_order, supplementary, templates,
    Formula, FormulaScope, Terms, DEFAULT_PREDICTOR,
};
pub use loo::{evaluate_design, loo_correlation, loo_predictions, FitResult};
pub use ols::{fit_ols, pearson, OlsFit};
pub use predict::{predict_degradation, record_from_bundle, Prediction, Predictor};
pub use record::{load_records, read_records, save_records, write_records, ObservationRecord, Var};
pub use select::{rank_results, select_best, Selection, TIE_EPS};
pub use target::{target_transform, TargetKind};
