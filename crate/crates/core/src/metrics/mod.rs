mod auc;
mod bootstrap;
mod classify;
mod delong;
mod overlap;
mod report;
mod threshold;

pub use auc::{auc, midranks, ScoredSet};
pub use bootstrap::paired_bootstrap_variance;
pub use classify::{f1_per_class, F1Result};
pub use delong::{delong_test, structural_components, two_sided_p, DeLongResult, StructuralComponents};
pub use overlap::{dice_coefficient, jaccard_index, Overlap};
pub use report::{
    aggregate_cv, f1_table, format_mean_std, format_p_value, mean_std, pool, Comparison,
    MetricMap, MetricReport, Table,
};
pub use threshold::{default_grid, select_threshold_jaccard, select_thresholds, Confusion, ThresholdMode};
