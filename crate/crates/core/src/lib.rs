pub mod bundled;
pub mod context;
pub mod engine;
pub mod eval;
pub mod grounding;
pub mod llm;
pub mod model;
pub mod normalizer;
pub mod pipeline;
pub mod prompts;
pub mod reasoning;
