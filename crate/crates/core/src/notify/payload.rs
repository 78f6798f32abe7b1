use std::fmt;
use std::str::FromStr;

use serde::ser::{SerializeMap, SerializeStruct};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use url::Url;

use super::ids::NotificationId;
use super::report::{join, ValidationReport};

pub const ACTIVITYSTREAMS_CONTEXT: &str = "https://www.w3.org/ns/activitystreams";
pub const COAR_NOTIFY_CONTEXT: &str = "https://purl.org/coar/notify";
/// Alternate notify context accepted on input only.
pub const COAR_NOTIFY_ALT_CONTEXT: &str = "https://coar-notify.net";
pub const RELATIONSHIP_ACTION: &str = "coar-notify:RelationshipAction";
pub const CODEMETA_CONTEXT: &str = "https://doi.org/10.5063/schema/codemeta-2.0";
pub const SOFTWARE_SOURCE_CODE: &str = "SoftwareSourceCode";

/// The `@context` list emitted on every outbound notification.
pub fn canonical_context() -> Vec<String> {
    vec![
        ACTIVITYSTREAMS_CONTEXT.to_string(),
        COAR_NOTIFY_CONTEXT.to_string(),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActorKind {
    Person,
    Service,
}

impl ActorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ActorKind::Person => "Person",
            ActorKind::Service => "Service",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActorRef {
    pub id: String,
    pub name: String,
    #[serde(rename = "type")]
    pub kind: ActorKind,
}

impl ActorRef {
    pub fn new(id: impl Into<String>, name: impl Into<String>, kind: ActorKind) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            kind,
        }
    }

    pub(crate) fn check(&self, path: &str, report: &mut ValidationReport) {
        check_iri(report, &join(path, "id"), &self.id);
    }
}

/// An actor's service identity plus the inbox it receives notifications on.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ServiceEndpoint {
    pub id: String,
    pub inbox: String,
}

impl ServiceEndpoint {
    pub fn new(id: impl Into<String>, inbox: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            inbox: inbox.into(),
        }
    }

    pub(crate) fn check(&self, path: &str, report: &mut ValidationReport) {
        check_iri(report, &join(path, "id"), &self.id);
        check_inbox(report, &join(path, "inbox"), &self.inbox);
    }
}

impl Serialize for ServiceEndpoint {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("ServiceEndpoint", 3)?;
        s.serialize_field("id", &self.id)?;
        s.serialize_field("inbox", &self.inbox)?;
        s.serialize_field("type", "Service")?;
        s.end()
    }
}

impl<'de> Deserialize<'de> for ServiceEndpoint {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            id: String,
            inbox: String,
        }
        let raw = Raw::deserialize(deserializer)?;
        Ok(Self::new(raw.id, raw.inbox))
    }
}

/// CodeMeta description of the mentioned software (`sorg:citation`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SoftwareCitation {
    pub name: String,
    pub reference_publication: Option<String>,
    pub repository_link: Option<String>,
}

impl SoftwareCitation {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            reference_publication: None,
            repository_link: None,
        }
    }

    pub fn with_reference_publication(mut self, iri: impl Into<String>) -> Self {
        self.reference_publication = Some(iri.into());
        self
    }

    pub fn with_repository_link(mut self, iri: impl Into<String>) -> Self {
        self.repository_link = Some(iri.into());
        self
    }

    pub(crate) fn check(&self, path: &str, report: &mut ValidationReport) {
        if self.name.trim().is_empty() {
            report.push(join(path, "name"), "must be non-empty");
        }
        if let Some(iri) = &self.reference_publication {
            check_iri(report, &join(path, "referencePublication"), iri);
        }
        if let Some(iri) = &self.repository_link {
            check_iri(report, &join(path, "codeRepository"), iri);
        }
    }
}

impl Serialize for SoftwareCitation {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("SoftwareCitation", 5)?;
        s.serialize_field("@context", CODEMETA_CONTEXT)?;
        s.serialize_field("type", SOFTWARE_SOURCE_CODE)?;
        s.serialize_field("name", &self.name)?;
        if let Some(v) = &self.reference_publication {
            s.serialize_field("referencePublication", v)?;
        } else {
            s.skip_field("referencePublication")?;
        }
        if let Some(v) = &self.repository_link {
            s.serialize_field("codeRepository", v)?;
        } else {
            s.skip_field("codeRepository")?;
        }
        s.end()
    }
}

#[derive(Deserialize)]
struct RawCitation {
    #[serde(rename = "@context")]
    context: String,
    #[serde(rename = "type")]
    kind: String,
    name: String,
    #[serde(rename = "referencePublication", default)]
    reference_publication: Option<String>,
    #[serde(rename = "codeRepository", default)]
    repository_link: Option<String>,
}

impl<'de> Deserialize<'de> for SoftwareCitation {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawCitation::deserialize(deserializer)?;
        if raw.context != CODEMETA_CONTEXT {
            return Err(serde::de::Error::custom(format!(
                "citation @context must be {CODEMETA_CONTEXT}"
            )));
        }
        if raw.kind != SOFTWARE_SOURCE_CODE {
            return Err(serde::de::Error::custom(format!(
                "citation type must be {SOFTWARE_SOURCE_CODE}"
            )));
        }
        Ok(SoftwareCitation {
            name: raw.name,
            reference_publication: raw.reference_publication,
            repository_link: raw.repository_link,
        })
    }
}

/// Detection confidence in `[0, 100]`. Whole values serialize without a
/// fractional part (`99`), others in shortest form (`99.45`).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Confidence(f64);

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("confidence {0} outside [0, 100]")]
pub struct ConfidenceOutOfRange(pub f64);

impl Confidence {
    pub const MIN: f64 = 0.0;
    pub const MAX: f64 = 100.0;

    pub fn new(value: f64) -> Result<Self, ConfidenceOutOfRange> {
        if (Self::MIN..=Self::MAX).contains(&value) {
            Ok(Self(value))
        } else {
            Err(ConfidenceOutOfRange(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for Confidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.fract() == 0.0 {
            write!(f, "{}", self.0 as u64)
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for Confidence {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if self.0.fract() == 0.0 {
            serializer.serialize_u64(self.0 as u64)
        } else {
            serializer.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Confidence {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(deserializer)?;
        Confidence::new(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MentionType {
    Used,
    Created,
    Shared,
}

impl MentionType {
    pub fn as_str(self) -> &'static str {
        match self {
            MentionType::Used => "used",
            MentionType::Created => "created",
            MentionType::Shared => "shared",
        }
    }
}

impl FromStr for MentionType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "used" => Ok(MentionType::Used),
            "created" => Ok(MentionType::Created),
            "shared" => Ok(MentionType::Shared),
            other => Err(format!("unknown mention type {other:?}")),
        }
    }
}

/// A software mention bound to the repository record of the paper it was
/// found in. This is the `object` block of every notification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentionDescriptor {
    #[serde(rename = "id")]
    pub record_id: String,
    #[serde(
        rename = "ietf:cite-as",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub cite_as: Option<String>,
    #[serde(rename = "sorg:citation")]
    pub citation: SoftwareCitation,
    #[serde(rename = "mentionConfidence")]
    pub confidence: Confidence,
    #[serde(rename = "mentionType")]
    pub mention_type: MentionType,
    #[serde(rename = "mentionContext")]
    pub context: String,
}

impl MentionDescriptor {
    pub fn validate(&self) -> Result<(), ValidationReport> {
        let mut report = ValidationReport::new();
        self.check("object", &mut report);
        report.into_result()
    }

    pub(crate) fn check(&self, path: &str, report: &mut ValidationReport) {
        check_iri(report, &join(path, "id"), &self.record_id);
        if let Some(iri) = &self.cite_as {
            check_iri(report, &join(path, "ietf:cite-as"), iri);
        }
        self.citation.check(&join(path, "sorg:citation"), report);
        if self.context.trim().is_empty() {
            report.push(join(path, "mentionContext"), "must be non-empty");
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NotificationKind {
    Offer,
    Accept,
    TentativeAccept,
    Reject,
    Announce,
}

impl NotificationKind {
    pub const ALL: [NotificationKind; 5] = [
        NotificationKind::Offer,
        NotificationKind::Accept,
        NotificationKind::TentativeAccept,
        NotificationKind::Reject,
        NotificationKind::Announce,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NotificationKind::Offer => "Offer",
            NotificationKind::Accept => "Accept",
            NotificationKind::TentativeAccept => "TentativeAccept",
            NotificationKind::Reject => "Reject",
            NotificationKind::Announce => "Announce",
        }
    }

    pub fn is_response(self) -> bool {
        matches!(
            self,
            NotificationKind::Accept | NotificationKind::TentativeAccept | NotificationKind::Reject
        )
    }
}

impl fmt::Display for NotificationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NotificationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NotificationKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown activity kind {s:?}"))
    }
}

/// One message of the mention-validation conversation.
///
/// Fields are public for inspection and fixture construction; use
/// [`NotificationPayload::validate`] (or the builders) before sending.
#[derive(Debug, Clone, PartialEq)]
pub struct NotificationPayload {
    pub context: Vec<String>,
    pub id: NotificationId,
    pub kind: NotificationKind,
    pub actor: ActorRef,
    pub object: MentionDescriptor,
    pub origin: ServiceEndpoint,
    pub target: ServiceEndpoint,
    pub in_reply_to: Option<NotificationId>,
    pub conversation_context: Option<String>,
}

impl NotificationPayload {
    pub fn validate(&self) -> Result<(), ValidationReport> {
        let mut report = ValidationReport::new();
        check_context_list(&mut report, &self.context);
        self.actor.check("actor", &mut report);
        self.object.check("object", &mut report);
        self.origin.check("origin", &mut report);
        self.target.check("target", &mut report);
        match (self.kind, self.in_reply_to) {
            (NotificationKind::Offer, Some(_)) => {
                report.push("inReplyTo", "must be absent on Offer");
            }
            (kind, None) if kind != NotificationKind::Offer => {
                report.missing("inReplyTo");
            }
            _ => {}
        }
        if let Some(iri) = &self.conversation_context {
            check_iri(&mut report, "context.id", iri);
        }
        report.into_result()
    }

    pub fn type_pair(&self) -> [&'static str; 2] {
        [self.kind.as_str(), RELATIONSHIP_ACTION]
    }
}

struct ContextRef<'a>(&'a str);

impl Serialize for ContextRef<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut m = serializer.serialize_map(Some(1))?;
        m.serialize_entry("id", self.0)?;
        m.end()
    }
}

impl Serialize for NotificationPayload {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut m = serializer.serialize_map(None)?;
        m.serialize_entry("@context", &self.context)?;
        m.serialize_entry("actor", &self.actor)?;
        if let Some(ctx) = &self.conversation_context {
            m.serialize_entry("context", &ContextRef(ctx))?;
        }
        m.serialize_entry("id", &self.id)?;
        if let Some(reply) = &self.in_reply_to {
            m.serialize_entry("inReplyTo", reply)?;
        }
        m.serialize_entry("object", &self.object)?;
        m.serialize_entry("origin", &self.origin)?;
        m.serialize_entry("target", &self.target)?;
        m.serialize_entry("type", &self.type_pair())?;
        m.end()
    }
}

pub(crate) fn check_iri(report: &mut ValidationReport, path: &str, value: &str) {
    if value.is_empty() {
        report.push(path, "must be non-empty");
    } else if Url::parse(value).is_err() {
        report.push(path, format!("not an absolute IRI: {value:?}"));
    }
}

pub(crate) fn check_inbox(report: &mut ValidationReport, path: &str, value: &str) {
    match Url::parse(value) {
        Ok(url) if matches!(url.scheme(), "http" | "https") && url.host().is_some() => {}
        _ => report.push(
            path,
            format!("not an absolute HTTP(S) inbox IRI: {value:?}"),
        ),
    }
}

pub(crate) fn check_context_list(report: &mut ValidationReport, context: &[String]) {
    if !context.iter().any(|c| c == ACTIVITYSTREAMS_CONTEXT) {
        report.push(
            "@context",
            format!("must include {ACTIVITYSTREAMS_CONTEXT}"),
        );
    }
    if !context
        .iter()
        .any(|c| c == COAR_NOTIFY_CONTEXT || c == COAR_NOTIFY_ALT_CONTEXT)
    {
        report.push("@context", format!("must include {COAR_NOTIFY_CONTEXT}"));
    }
}
