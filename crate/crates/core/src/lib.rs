//! Mining of bilingual app-store reviews: zero-shot classification through a
//! chat-completion provider, density clustering of feature requests and
//! problem reports, hierarchical summarization of each cluster and importance
//! ranking, plus metrics for evaluating classification and clustering.

pub mod gateway;
pub mod langdetect;
pub mod review;
pub mod classify;
pub mod embed;
pub mod reduce;
pub mod cluster;
pub mod evaluate;
pub mod summarize;
pub mod rank;
pub mod pipeline;
