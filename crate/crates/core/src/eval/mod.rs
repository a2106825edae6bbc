pub mod ablation;
pub mod ap;
pub mod gradsuite;
pub mod report;
pub mod viz;
