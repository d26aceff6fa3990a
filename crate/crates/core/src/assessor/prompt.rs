//! The assessment prompt and its hash.

use serde::{Deserialize, Serialize};

use crate::artifacts::sha256_hex;

const TEMPLATE: &str = include_str!("../../assets/prompt_template.txt");
const SLOT: &str = "{{Adress}}";
pub const PLACEHOLDER_ADDRESS: &str = "unknown address";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    /// sha256 of `text`.
    pub hash: String,
    /// True when the address was empty and the placeholder was used.
    pub address_placeholder: bool,
}

pub fn template() -> &'static str {
    TEMPLATE.trim_end_matches('\n')
}

pub fn build_prompt(address: &str) -> Prompt {
    let trimmed = address.trim();
    let (addr, address_placeholder) =
        if trimmed.is_empty() { (PLACEHOLDER_ADDRESS, true) } else { (trimmed, false) };
    let text = template().replace(SLOT, addr);
    Prompt { hash: sha256_hex(text.as_bytes()), text, address_placeholder }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assessor::schema::{FieldKind, SCHEMA};

    #[test]
    fn interpolates_address_once() {
        assert_eq!(template().matches(SLOT).count(), 1);
        let p = build_prompt("Storgatan 1, Visby");
        assert!(p.text.contains("located at Storgatan 1, Visby."));
        assert!(!p.address_placeholder);
        assert_eq!(p, build_prompt("Storgatan 1, Visby"));
        assert_ne!(p.hash, build_prompt("Storgatan 2, Visby").hash);
    }

    #[test]
    fn empty_address_uses_placeholder() {
        let p = build_prompt("  ");
        assert!(p.address_placeholder);
        assert!(p.text.contains(PLACEHOLDER_ADDRESS));
    }

    #[test]
    fn template_lists_every_schema_field_and_token() {
        let t = template();
        for spec in SCHEMA {
            assert!(t.contains(&format!("{}:", spec.name)), "{}", spec.name);
            if let FieldKind::Choice { tokens, .. } = spec.kind {
                for tok in tokens {
                    assert!(t.contains(tok), "{tok}");
                }
            }
        }
    }
}
