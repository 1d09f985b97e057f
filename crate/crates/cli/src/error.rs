//! Exit-code classification.

use std::fmt;

use tempalign::aligner::AlignError;
use tempalign::corpus::CorpusError;
use tempalign::embedstore::StoreError;
use tempalign::evalkit::EvalError;
use tempalign::fixture::FixtureError;
use tempalign::llmgate::LlmError;
use tempalign::pairgen::PairGenError;
use tempalign::promptkit::PromptError;
use tempalign::retriever::RetrievalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Config = 2,
    Data = 3,
    Backend = 4,
    Internal = 5,
}

#[derive(Debug)]
pub struct Tagged {
    pub kind: ExitKind,
    pub message: String,
}

impl fmt::Display for Tagged {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Tagged {}

pub fn config_error(message: impl Into<String>) -> anyhow::Error {
    Tagged { kind: ExitKind::Config, message: message.into() }.into()
}

pub fn data_error(message: impl Into<String>) -> anyhow::Error {
    Tagged { kind: ExitKind::Data, message: message.into() }.into()
}

/// Walks the cause chain and returns the first recognised category.
pub fn classify(err: &anyhow::Error) -> ExitKind {
    for cause in err.chain() {
        if let Some(t) = cause.downcast_ref::<Tagged>() {
            return t.kind;
        }
        if cause.is::<LlmError>() {
            return ExitKind::Backend;
        }
        if let Some(a) = cause.downcast_ref::<AlignError>() {
            return match a {
                AlignError::Config(_) => ExitKind::Config,
                _ => ExitKind::Data,
            };
        }
        if cause.is::<toml::de::Error>() {
            return ExitKind::Config;
        }
        if cause.is::<CorpusError>()
            || cause.is::<StoreError>()
            || cause.is::<PairGenError>()
            || cause.is::<RetrievalError>()
            || cause.is::<PromptError>()
            || cause.is::<EvalError>()
            || cause.is::<FixtureError>()
            || cause.is::<serde_json::Error>()
            || cause.is::<std::io::Error>()
        {
            return ExitKind::Data;
        }
    }
    ExitKind::Internal
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn classification() {
        assert_eq!(classify(&config_error("x")), ExitKind::Config);
        let e: anyhow::Error = Err::<(), _>(LlmError::ReplayMiss { fingerprint: "f".into() })
            .context("running")
            .unwrap_err();
        assert_eq!(classify(&e), ExitKind::Backend);
        assert_eq!(classify(&anyhow::Error::new(StoreError::BadMagic)), ExitKind::Data);
        assert_eq!(classify(&anyhow::Error::new(AlignError::Config("lr".into()))), ExitKind::Config);
        assert_eq!(classify(&anyhow::anyhow!("boom")), ExitKind::Internal);
    }
}
