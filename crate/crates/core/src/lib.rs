pub mod bridge;
pub mod corpus;
pub mod engine;
pub mod enrichment;
pub mod eval;
pub mod extractor;
pub mod pipeline;
pub mod scenario;
pub mod synthetic;
