//! Metrics and the experiment suites: ρ sweep, key-count sweep, distance
//! histograms and the statistical evaluation.

mod lab;
pub mod metrics;
mod plan;
mod suites;

pub use lab::{
    base_dataset, select_keys, source_dataset, train_base, train_innocent_reference, train_source, Lab,
};
pub use metrics::{accuracy, auc, tpr_at_fpr, ScoredModel, ScoredPopulation};
pub use plan::{ExperimentPlan, WorldSpec};
pub use suites::{
    calibrate, cell_seed, delta0_table, histogram_csv, mean_std, retrieval_check, run_n_sweep, run_rho_sweep,
    run_statistical_eval, GridModel, HistogramRow, ModelConf, NSweep, NSweepRow, Retrieval, RhoSweep,
    StatisticalEval, SuspectGrid, SweepRow,
};
