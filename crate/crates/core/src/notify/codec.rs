//! Canonical serialization and report-producing parsing of notifications.

use serde_json::{Map, Value};

use super::error::NotifyError;
use super::ids::NotificationId;
use super::payload::{
    check_context_list, check_inbox, check_iri, ActorKind, ActorRef, Confidence, MentionDescriptor,
    MentionType, NotificationKind, NotificationPayload, ServiceEndpoint, SoftwareCitation,
    CODEMETA_CONTEXT, RELATIONSHIP_ACTION, SOFTWARE_SOURCE_CODE,
};
use super::report::{join, ValidationReport};

pub const MEDIA_TYPE: &str = "application/ld+json";

/// Pretty-printed JSON with keys in a fixed order, so equal payloads always
/// produce identical bytes.
pub fn serialize_payload(payload: &NotificationPayload) -> Result<Vec<u8>, NotifyError> {
    payload
        .validate()
        .map_err(NotifyError::InvariantViolation)?;
    Ok(serde_json::to_vec_pretty(payload).expect("payload serialization is infallible"))
}

/// Parses and validates a notification document. Never panics; every
/// problem found is listed in the returned report.
pub fn parse_payload(bytes: &[u8]) -> Result<NotificationPayload, ValidationReport> {
    let mut report = ValidationReport::new();
    let value: Value = match serde_json::from_slice(bytes) {
        Ok(v) => v,
        Err(e) => {
            report.push("document", format!("not parseable: {e}"));
            return Err(report);
        }
    };
    let Some(doc) = value.as_object() else {
        report.push("document", "expected a JSON object");
        return Err(report);
    };

    let mut w = Walker {
        report: &mut report,
    };

    let context = w.context_list(doc);
    let kind = w.type_pair(doc);
    let id = w.str_field(doc, "", "id").and_then(|s| w.urn(s, "id"));
    let actor = w
        .obj_field(doc, "", "actor")
        .and_then(|m| w.actor(m, "actor"));
    let object = w
        .obj_field(doc, "", "object")
        .and_then(|m| w.descriptor(m, "object"));
    let origin = w
        .obj_field(doc, "", "origin")
        .and_then(|m| w.endpoint(m, "origin"));
    let target = w
        .obj_field(doc, "", "target")
        .and_then(|m| w.endpoint(m, "target"));

    let in_reply_to = match (kind, doc.get("inReplyTo")) {
        (Some(NotificationKind::Offer), Some(_)) => {
            w.report.push("inReplyTo", "must be absent on Offer");
            None
        }
        (Some(NotificationKind::Offer), None) | (None, None) => None,
        (Some(_), None) => {
            w.report.missing("inReplyTo");
            None
        }
        (_, Some(v)) => match v.as_str() {
            Some(s) => w.urn(s, "inReplyTo"),
            None => {
                w.report.push("inReplyTo", "expected a string");
                None
            }
        },
    };

    let conversation_context = match doc.get("context") {
        None => None,
        Some(v) => match v.as_object() {
            Some(m) => w.str_field(m, "context", "id").map(|s| {
                check_iri(w.report, "context.id", s);
                s.to_string()
            }),
            None => {
                w.report.push("context", "expected an object");
                None
            }
        },
    };

    if !report.is_empty() {
        return Err(report);
    }
    match (context, kind, id, actor, object, origin, target) {
        (
            Some(context),
            Some(kind),
            Some(id),
            Some(actor),
            Some(object),
            Some(origin),
            Some(target),
        ) => Ok(NotificationPayload {
            context,
            id,
            kind,
            actor,
            object,
            origin,
            target,
            in_reply_to,
            conversation_context,
        }),
        _ => {
            // Every None above pushed a violation, so this is unreachable in
            // practice; keep the function total regardless.
            report.push("document", "incomplete payload");
            Err(report)
        }
    }
}

struct Walker<'r> {
    report: &'r mut ValidationReport,
}

impl Walker<'_> {
    fn field<'a>(
        &mut self,
        m: &'a Map<String, Value>,
        parent: &str,
        key: &str,
    ) -> Option<&'a Value> {
        let v = m.get(key);
        if v.is_none() {
            self.report.missing(join(parent, key));
        }
        v
    }

    fn str_field<'a>(
        &mut self,
        m: &'a Map<String, Value>,
        parent: &str,
        key: &str,
    ) -> Option<&'a str> {
        let v = self.field(m, parent, key)?;
        match v.as_str() {
            Some(s) => Some(s),
            None => {
                self.report.push(join(parent, key), "expected a string");
                None
            }
        }
    }

    fn opt_str<'a>(
        &mut self,
        m: &'a Map<String, Value>,
        parent: &str,
        key: &str,
    ) -> Option<&'a str> {
        match m.get(key) {
            None => None,
            Some(Value::String(s)) => Some(s),
            Some(_) => {
                self.report.push(join(parent, key), "expected a string");
                None
            }
        }
    }

    fn obj_field<'a>(
        &mut self,
        m: &'a Map<String, Value>,
        parent: &str,
        key: &str,
    ) -> Option<&'a Map<String, Value>> {
        let v = self.field(m, parent, key)?;
        match v.as_object() {
            Some(o) => Some(o),
            None => {
                self.report.push(join(parent, key), "expected an object");
                None
            }
        }
    }

    fn urn(&mut self, s: &str, path: &str) -> Option<NotificationId> {
        match s.parse::<NotificationId>() {
            Ok(id) => Some(id),
            Err(e) => {
                self.report.push(path, e.to_string());
                None
            }
        }
    }

    fn context_list(&mut self, doc: &Map<String, Value>) -> Option<Vec<String>> {
        let v = self.field(doc, "", "@context")?;
        let list: Vec<String> = match v {
            Value::String(s) => vec![s.clone()],
            Value::Array(items) => {
                let strings: Option<Vec<String>> = items
                    .iter()
                    .map(|i| i.as_str().map(str::to_string))
                    .collect();
                match strings {
                    Some(s) => s,
                    None => {
                        self.report.push("@context", "expected an array of strings");
                        return None;
                    }
                }
            }
            _ => {
                self.report.push("@context", "expected an array of strings");
                return None;
            }
        };
        let before = self.report.len();
        check_context_list(self.report, &list);
        (self.report.len() == before).then_some(list)
    }

    fn type_pair(&mut self, doc: &Map<String, Value>) -> Option<NotificationKind> {
        let v = self.field(doc, "", "type")?;
        let pair: Option<Vec<&str>> = v
            .as_array()
            .and_then(|a| a.iter().map(Value::as_str).collect());
        match pair.as_deref() {
            Some([kind, action]) if *action == RELATIONSHIP_ACTION => match kind.parse() {
                Ok(k) => Some(k),
                Err(e) => {
                    self.report.push("type", format!("bad kind pair: {e}"));
                    None
                }
            },
            _ => {
                self.report.push(
                    "type",
                    format!("bad kind pair: expected [<kind>, \"{RELATIONSHIP_ACTION}\"]"),
                );
                None
            }
        }
    }

    fn actor(&mut self, m: &Map<String, Value>, path: &str) -> Option<ActorRef> {
        let id = self.str_field(m, path, "id");
        let name = self.str_field(m, path, "name");
        let kind = self.str_field(m, path, "type").and_then(|t| match t {
            "Person" => Some(ActorKind::Person),
            "Service" => Some(ActorKind::Service),
            other => {
                self.report.push(
                    join(path, "type"),
                    format!("expected Person or Service, got {other:?}"),
                );
                None
            }
        });
        if let Some(id) = id {
            check_iri(self.report, &join(path, "id"), id);
        }
        Some(ActorRef::new(id?, name?, kind?))
    }

    fn endpoint(&mut self, m: &Map<String, Value>, path: &str) -> Option<ServiceEndpoint> {
        let id = self.str_field(m, path, "id");
        let inbox = self.str_field(m, path, "inbox");
        if let Some(t) = self.str_field(m, path, "type") {
            if t != "Service" {
                self.report
                    .push(join(path, "type"), format!("expected Service, got {t:?}"));
            }
        }
        if let Some(id) = id {
            check_iri(self.report, &join(path, "id"), id);
        }
        if let Some(inbox) = inbox {
            check_inbox(self.report, &join(path, "inbox"), inbox);
        }
        Some(ServiceEndpoint::new(id?, inbox?))
    }

    fn citation(&mut self, m: &Map<String, Value>, path: &str) -> Option<SoftwareCitation> {
        if let Some(ctx) = self.str_field(m, path, "@context") {
            if ctx != CODEMETA_CONTEXT {
                self.report.push(
                    join(path, "@context"),
                    format!("expected {CODEMETA_CONTEXT}"),
                );
            }
        }
        if let Some(t) = self.str_field(m, path, "type") {
            if t != SOFTWARE_SOURCE_CODE {
                self.report.push(
                    join(path, "type"),
                    format!("expected {SOFTWARE_SOURCE_CODE}"),
                );
            }
        }
        let name = self.str_field(m, path, "name");
        let reference_publication = self.opt_str(m, path, "referencePublication");
        let repository_link = self.opt_str(m, path, "codeRepository");
        let citation = SoftwareCitation {
            name: name?.to_string(),
            reference_publication: reference_publication.map(str::to_string),
            repository_link: repository_link.map(str::to_string),
        };
        citation.check(path, self.report);
        Some(citation)
    }

    fn descriptor(&mut self, m: &Map<String, Value>, path: &str) -> Option<MentionDescriptor> {
        let record_id = self.str_field(m, path, "id");
        if let Some(id) = record_id {
            check_iri(self.report, &join(path, "id"), id);
        }
        let cite_as = self.opt_str(m, path, "ietf:cite-as");
        if let Some(c) = cite_as {
            check_iri(self.report, &join(path, "ietf:cite-as"), c);
        }
        let citation = self
            .obj_field(m, path, "sorg:citation")
            .and_then(|c| self.citation(c, &join(path, "sorg:citation")));

        let confidence_path = join(path, "mentionConfidence");
        let confidence = self
            .field(m, path, "mentionConfidence")
            .and_then(|v| match v.as_f64() {
                Some(n) => match Confidence::new(n) {
                    Ok(c) => Some(c),
                    Err(e) => {
                        self.report.push(&confidence_path, e.to_string());
                        None
                    }
                },
                None => {
                    self.report.push(&confidence_path, "expected a number");
                    None
                }
            });
        let mention_type =
            self.str_field(m, path, "mentionType")
                .and_then(|s| match s.parse::<MentionType>() {
                    Ok(t) => Some(t),
                    Err(e) => {
                        self.report.push(join(path, "mentionType"), e);
                        None
                    }
                });
        let context = self.str_field(m, path, "mentionContext").and_then(|s| {
            if s.trim().is_empty() {
                self.report
                    .push(join(path, "mentionContext"), "must be non-empty");
                None
            } else {
                Some(s.to_string())
            }
        });
        Some(MentionDescriptor {
            record_id: record_id?.to_string(),
            cite_as: cite_as.map(str::to_string),
            citation: citation?,
            confidence: confidence?,
            mention_type: mention_type?,
            context: context?,
        })
    }
}
