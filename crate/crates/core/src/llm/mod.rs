//! Group comparisons judged by a language model: prompt rendering, dispatch,
//! response caching and verdict parsing.

mod cache;
mod client;
mod oracle;
mod parse;
mod rank;
mod template;

pub use cache::ResponseCache;
pub use client::{
    estimate_tokens, ChatSettings, Completion, CompletionRequest, HttpChatClient, LlmClient,
    LlmError, RankingTask, ScriptedClient,
};
pub use oracle::{DeterministicOracle, OracleConfig};
pub use parse::{parse_ranking, ParseFailure};
pub use rank::{llm_rank, GroupJudge, GroupRanking, Ranker, RankerConfig, Usage};
pub use template::{
    alias_for, retry_note, AliasMap, Domain, PromptTemplate, RenderLimits, RenderedPrompt,
};
