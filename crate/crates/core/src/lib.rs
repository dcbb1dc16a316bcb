pub mod batch;
pub mod consensus;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod queue;
pub mod report;
pub mod sanitizer;
pub mod sim;
pub mod verify;
