use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::record::{Author, MentionRecord};

/// Dashboard sending settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SendPolicy {
    pub auto_send: bool,
    pub high_confidence_only: bool,
    /// Inclusive lower bound, only consulted when `high_confidence_only`.
    pub threshold: f64,
    #[serde(default = "one")]
    pub max_authors_per_institution: usize,
}

fn one() -> usize {
    1
}

impl Default for SendPolicy {
    fn default() -> Self {
        Self {
            auto_send: false,
            high_confidence_only: false,
            threshold: 90.0,
            max_authors_per_institution: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("threshold {0} outside [0, 100]")]
    Threshold(f64),
    #[error("max_authors_per_institution must be at least 1")]
    MaxAuthors,
}

impl SendPolicy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(0.0..=100.0).contains(&self.threshold) {
            return Err(PolicyError::Threshold(self.threshold));
        }
        if self.max_authors_per_institution == 0 {
            return Err(PolicyError::MaxAuthors);
        }
        Ok(())
    }

    pub fn admits(&self, confidence: f64) -> bool {
        !self.high_confidence_only || confidence >= self.threshold
    }
}

/// Confidence descending, then oai id ascending; the key breaks remaining ties.
pub(crate) fn sending_order(a: &MentionRecord, b: &MentionRecord) -> Ordering {
    b.descriptor
        .confidence
        .value()
        .total_cmp(&a.descriptor.confidence.value())
        .then_with(|| a.oai_id.cmp(&b.oai_id))
        .then_with(|| a.key.cmp(&b.key))
}

/// Authors to notify: those whose e-mail sits in the institution's domain
/// (or a subdomain of it), in author-list order, capped by the policy.
pub fn recipients_for(
    authors: &[Author],
    policy: &SendPolicy,
    institution_domain: &str,
) -> Vec<Author> {
    authors
        .iter()
        .filter(|a| in_domain(&a.email, institution_domain))
        .take(policy.max_authors_per_institution)
        .cloned()
        .collect()
}

fn in_domain(email: &str, domain: &str) -> bool {
    let Some((_, host)) = email.rsplit_once('@') else {
        return false;
    };
    let host = host.to_ascii_lowercase();
    let domain = domain.trim_start_matches('@').to_ascii_lowercase();
    !domain.is_empty() && (host == domain || host.ends_with(&format!(".{domain}")))
}
