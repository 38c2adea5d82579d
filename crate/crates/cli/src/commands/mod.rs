pub mod attack;
pub mod campaign;
pub mod filter;
pub mod report;
pub mod serve;
