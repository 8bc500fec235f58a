pub mod files;
pub mod presets;
pub mod random;
pub mod report;
pub mod runner;
pub mod trace;
