pub mod batch;
pub mod chat;
pub mod repo;
pub mod report;
pub mod serve;
pub mod simulate;
