pub mod diagnostics;
pub mod estimator;
pub mod exec;
pub mod maxent;
pub mod oracle;
pub mod polytope;
pub mod quadform;
pub mod report;
