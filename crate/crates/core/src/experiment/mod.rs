//! Declarative experiment grid, run ledger and the commands behind the CLI.

mod audit;
mod config;
mod external;
mod inspect;
mod ledger;
mod reporting;
mod run;

pub use audit::{cmd_audit, AuditReport};
pub use config::{load_config, parse_config, BackboneSize, ExperimentConfig, ExplainConfig, ExternalConfig};
pub use external::{cmd_external_validate, reconcile_schema};
pub use inspect::{cmd_explain, embeddings, tensor_image, EXPLAIN};
pub use ledger::{now, FreezeCheck, Layout, LedgerEntry, RunLedger, RunStatus};
pub use reporting::{cmd_report, ReportFilter, ReportIndex};
pub use run::{
    cmd_downstream, cmd_pretrain, fold_checkpoint_id, pair_oof, pretrain_checkpoint_id, primary_metric, read_oof,
    write_oof, OofRow, Outcome, RunOptions, DOWNSTREAM, EXTERNAL, PRETRAIN,
};
