//! Versioned system prompt asset for the exploration agent.

use sha2::{Digest, Sha256};

/// Default system prompt shipped with the crate.
pub const DEFAULT_SYSTEM_PROMPT: &str = include_str!("../assets/system_prompt.md");
pub const DEFAULT_PROMPT_VERSION: &str = "v1";

/// A named, versioned prompt text plus its content hash, so exported
/// trajectory manifests can pin exactly which prompt produced them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptAsset {
    pub version: String,
    pub content: String,
}

impl PromptAsset {
    pub fn new(version: impl Into<String>, content: impl Into<String>) -> Self {
        PromptAsset {
            version: version.into(),
            content: content.into(),
        }
    }

    /// Hex SHA-256 of the prompt content.
    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.content.as_bytes()))
    }
}

impl Default for PromptAsset {
    fn default() -> Self {
        PromptAsset::new(DEFAULT_PROMPT_VERSION, DEFAULT_SYSTEM_PROMPT)
    }
}
