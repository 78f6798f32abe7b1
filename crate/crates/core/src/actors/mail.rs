use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::notify::{MentionDescriptor, NotificationId};
use crate::registry::Author;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuthorAction {
    Validate,
    Edit,
    Reject,
    Ignore,
}

impl AuthorAction {
    pub const ALL: [AuthorAction; 4] = [
        AuthorAction::Validate,
        AuthorAction::Edit,
        AuthorAction::Reject,
        AuthorAction::Ignore,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AuthorAction::Validate => "validate",
            AuthorAction::Edit => "edit",
            AuthorAction::Reject => "reject",
            AuthorAction::Ignore => "ignore",
        }
    }

    fn label(self) -> &'static str {
        match self {
            AuthorAction::Validate => "Validate",
            AuthorAction::Edit => "Edit",
            AuthorAction::Reject => "Reject",
            AuthorAction::Ignore => "Ignore",
        }
    }
}

impl FromStr for AuthorAction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown action {s:?}"))
    }
}

/// One offered mention inside an author message, with a token per action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageMention {
    pub offer_id: NotificationId,
    pub descriptor: MentionDescriptor,
    pub tokens: BTreeMap<AuthorAction, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthorMessage {
    pub message_id: NotificationId,
    pub recipient: Author,
    pub subject: String,
    pub oai_id: String,
    pub paper_title: String,
    pub mentions: Vec<MessageMention>,
    /// Prefix of the action links; a token completes each one.
    pub action_base: String,
}

/// `Registering your research software for <first six title words>...`
pub fn subject_for(paper_title: &str) -> String {
    let head: Vec<&str> = paper_title.split_whitespace().take(6).collect();
    format!(
        "Registering your research software for {}...",
        head.join(" ")
    )
}

impl AuthorMessage {
    pub fn action_url(&self, token: &str) -> String {
        format!("{}{token}", self.action_base)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &String> {
        self.mentions.iter().flat_map(|m| m.tokens.values())
    }

    /// Plain-text rendering of the message as an author would receive it.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "To: {} <{}>",
            self.recipient.name, self.recipient.email
        );
        let _ = writeln!(out, "Subject: {}", self.subject);
        let _ = writeln!(out, "Message-ID: {}", self.message_id);
        out.push('\n');
        let _ = writeln!(out, "Dear {},", self.recipient.name);
        out.push('\n');
        let _ = writeln!(
            out,
            "While reading the full text of \"{}\" ({}) we found software that",
            self.paper_title, self.oai_id
        );
        out.push_str("we believe your work refers to. Please check each entry below and use\n");
        out.push_str("one of the links underneath it to tell us what you think.\n");
        for (i, m) in self.mentions.iter().enumerate() {
            let d = &m.descriptor;
            out.push('\n');
            let _ = writeln!(out, "Software mention {}", i + 1);
            let _ = writeln!(out, "  Software name:     {}", d.citation.name);
            let _ = writeln!(out, "  Mention context:   {}", d.context);
            let _ = writeln!(
                out,
                "  Repository link:   {}",
                d.citation.repository_link.as_deref().unwrap_or("(none)")
            );
            let _ = writeln!(out, "  Mention type:      {}", d.mention_type.as_str());
            let _ = writeln!(out, "  Confidence:        {}", d.confidence);
            out.push('\n');
            for (action, token) in &m.tokens {
                let _ = writeln!(
                    out,
                    "  {:<9} POST {}",
                    action.label(),
                    self.action_url(token)
                );
            }
        }
        out
    }
}

/// In-process stand-in for e-mail. Delivered messages are kept in order and,
/// if a directory is configured, written to `<dir>/<email>/<message_id>.txt`.
pub struct MailChannel {
    dir: Option<PathBuf>,
    messages: Mutex<Vec<AuthorMessage>>,
}

impl MailChannel {
    pub fn new(dir: Option<&Path>) -> Self {
        Self {
            dir: dir.map(Path::to_path_buf),
            messages: Mutex::new(Vec::new()),
        }
    }

    pub fn deliver(&self, message: AuthorMessage) -> std::io::Result<()> {
        if let Some(dir) = &self.dir {
            let folder = dir.join(&message.recipient.email);
            fs::create_dir_all(&folder)?;
            let file = folder.join(format!("{}.txt", message.message_id.simple()));
            fs::write(file, message.render())?;
        }
        self.messages.lock().push(message);
        Ok(())
    }

    pub fn messages(&self) -> Vec<AuthorMessage> {
        self.messages.lock().clone()
    }

    pub fn len(&self) -> usize {
        self.messages.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn for_recipient(&self, email: &str) -> Vec<AuthorMessage> {
        self.messages
            .lock()
            .iter()
            .filter(|m| m.recipient.email == email)
            .cloned()
            .collect()
    }
}
