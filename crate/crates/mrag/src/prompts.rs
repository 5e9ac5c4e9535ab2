//! Prompt templates and turn assembly for every model call.
//!
//! With `markers` enabled, each prompt also carries machine-readable lines
//! starting with `@@ ` (task name, query and article ids, tentative answers,
//! references). The mock server answers from those lines; production prompts
//! leave them out.

use std::fs;
use std::io;
use std::path::Path;

use mrag_core::corpus::QueryCase;
use mrag_core::generate::DocBlock;
use mrag_core::text::truncate_tokens;

use crate::gateway::{CaptionSide, ChatTurn, Part, Role};
use crate::rerank::WindowCandidate;

/// Prefix of every marker line.
pub const MARKER: &str = "@@ ";

/// Whitespace tokens of candidate text shown in re-rank prompts.
pub const DISPLAY_TOKENS: usize = 256;

/// Header line opening the `n`-th (1-based) context document.
pub fn document_delimiter(n: usize) -> String {
    format!("----- Document {n} -----")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompts {
    pub markers: bool,
    pub caption_query: String,
    pub caption_kb: String,
    pub rerank_listwise: String,
    pub rerank_pairwise: String,
    pub generate: String,
    pub agent_relevance: String,
    pub agent_reflection: String,
    pub judge: String,
}

impl Default for Prompts {
    fn default() -> Self {
        Self {
            markers: false,
            caption_query: include_str!("../templates/caption_query.txt").trim_end().into(),
            caption_kb: include_str!("../templates/caption_kb.txt").trim_end().into(),
            rerank_listwise: include_str!("../templates/rerank_listwise.txt").trim_end().into(),
            rerank_pairwise: include_str!("../templates/rerank_pairwise.txt").trim_end().into(),
            generate: include_str!("../templates/generate.txt").trim_end().into(),
            agent_relevance: include_str!("../templates/agent_relevance.txt").trim_end().into(),
            agent_reflection: include_str!("../templates/agent_reflection.txt").trim_end().into(),
            judge: include_str!("../templates/judge.txt").trim_end().into(),
        }
    }
}

fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl Prompts {
    pub fn with_markers(mut self, markers: bool) -> Self {
        self.markers = markers;
        self
    }

    /// Defaults, with any `<slot>.txt` file in `dir` replacing its slot.
    pub fn from_dir(dir: &Path) -> io::Result<Self> {
        let mut p = Self::default();
        let slots: [(&str, &mut String); 8] = [
            ("caption_query", &mut p.caption_query),
            ("caption_kb", &mut p.caption_kb),
            ("rerank_listwise", &mut p.rerank_listwise),
            ("rerank_pairwise", &mut p.rerank_pairwise),
            ("generate", &mut p.generate),
            ("agent_relevance", &mut p.agent_relevance),
            ("agent_reflection", &mut p.agent_reflection),
            ("judge", &mut p.judge),
        ];
        for (name, slot) in slots {
            let path = dir.join(format!("{name}.txt"));
            match fs::read_to_string(&path) {
                Ok(s) => *slot = s.trim_end().to_string(),
                Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                Err(e) => return Err(e),
            }
        }
        Ok(p)
    }

    fn marker(&self, out: &mut String, fields: &[(&str, &str)]) {
        if !self.markers {
            return;
        }
        out.push_str(MARKER);
        let joined: Vec<String> = fields.iter().map(|(k, v)| format!("{k}={v}")).collect();
        out.push_str(&joined.join(" "));
        out.push('\n');
    }

    /// Marker carrying free text (rest of the line is the value).
    fn text_marker(&self, out: &mut String, key: &str, value: &str) {
        if self.markers {
            out.push_str(&format!("{MARKER}{key}={}\n", one_line(value)));
        }
    }

    pub fn caption(&self, image_ref: &str, side: CaptionSide, question: Option<&str>) -> Vec<ChatTurn> {
        let mut head = String::new();
        let text = match side {
            CaptionSide::Query => {
                let q = question.unwrap_or_default();
                self.marker(&mut head, &[("TASK", "caption"), ("SIDE", "query")]);
                self.text_marker(&mut head, "QUESTION", q);
                fill(&self.caption_query, &[("question", q)])
            }
            CaptionSide::Kb => {
                self.marker(&mut head, &[("TASK", "caption"), ("SIDE", "kb")]);
                self.caption_kb.clone()
            }
        };
        vec![ChatTurn::new(
            Role::User,
            vec![Part::Text(head + &text), Part::Image(image_ref.into())],
        )]
    }

    fn candidate_text(&self, label: &str, c: &WindowCandidate) -> String {
        let mut s = format!("{label}\n");
        self.marker(&mut s, &[("AID", &c.article_id)]);
        s.push_str(&truncate_tokens(&c.display_text, DISPLAY_TOKENS));
        s
    }

    pub fn listwise(&self, q: &QueryCase, cands: &[WindowCandidate], cand_images: bool) -> Vec<ChatTurn> {
        let mut head = String::new();
        self.marker(&mut head, &[("TASK", "listwise"), ("QID", &q.id)]);
        head.push_str(&fill(
            &self.rerank_listwise,
            &[("n", &cands.len().to_string()), ("question", &q.question)],
        ));
        let mut parts = vec![Part::Text(head), Part::Image(q.image_ref.clone())];
        for (i, c) in cands.iter().enumerate() {
            parts.push(Part::Text(self.candidate_text(&format!("[{}]", i + 1), c)));
            if let (true, Some(img)) = (cand_images, &c.image_ref) {
                parts.push(Part::Image(img.clone()));
            }
        }
        parts.push(Part::Text("Ranking:".into()));
        vec![ChatTurn::new(Role::User, parts)]
    }

    pub fn pairwise(&self, q: &QueryCase, a: &WindowCandidate, b: &WindowCandidate, cand_images: bool) -> Vec<ChatTurn> {
        let mut head = String::new();
        self.marker(&mut head, &[("TASK", "pairwise"), ("QID", &q.id)]);
        head.push_str(&fill(&self.rerank_pairwise, &[("question", &q.question)]));
        let mut parts = vec![Part::Text(head), Part::Image(q.image_ref.clone())];
        for (label, c) in [("Candidate A:", a), ("Candidate B:", b)] {
            parts.push(Part::Text(self.candidate_text(label, c)));
            if let (true, Some(img)) = (cand_images, &c.image_ref) {
                parts.push(Part::Image(img.clone()));
            }
        }
        parts.push(Part::Text("Answer:".into()));
        vec![ChatTurn::new(Role::User, parts)]
    }

    /// Context documents in order, each opened by its delimiter line.
    pub fn render_context(&self, blocks: &[DocBlock]) -> String {
        let mut out = String::new();
        for (i, b) in blocks.iter().enumerate() {
            out.push_str(&document_delimiter(i + 1));
            out.push('\n');
            self.marker(&mut out, &[("AID", &b.article_id)]);
            out.push_str(&format!("Title: {}\n{}\n", b.title, b.text));
        }
        out
    }

    pub fn generation(&self, q: &QueryCase, blocks: &[DocBlock]) -> Vec<ChatTurn> {
        let mut user = Vec::new();
        let mut head = String::new();
        self.marker(&mut head, &[("TASK", "generate"), ("QID", &q.id)]);
        head.push_str(&self.render_context(blocks));
        if !head.is_empty() {
            user.push(Part::Text(head));
        }
        user.push(Part::Image(q.image_ref.clone()));
        user.push(Part::Text(format!("Question: {}\nAnswer:", q.question)));
        vec![
            ChatTurn::new(Role::System, vec![Part::Text(self.generate.clone())]),
            ChatTurn::new(Role::User, user),
        ]
    }

    pub fn relevance(&self, q: &QueryCase, doc: &DocBlock) -> Vec<ChatTurn> {
        let mut head = String::new();
        self.marker(&mut head, &[("TASK", "relevance"), ("QID", &q.id), ("AID", &doc.article_id)]);
        head.push_str(&fill(&self.agent_relevance, &[("question", &q.question)]));
        vec![ChatTurn::new(
            Role::User,
            vec![
                Part::Text(head),
                Part::Image(q.image_ref.clone()),
                Part::Text(format!("Document:\nTitle: {}\n{}", doc.title, doc.text)),
            ],
        )]
    }

    pub fn reflection(&self, q: &QueryCase, doc: &DocBlock, tentative: &str) -> Vec<ChatTurn> {
        let mut head = String::new();
        self.marker(&mut head, &[("TASK", "reflect"), ("QID", &q.id), ("AID", &doc.article_id)]);
        self.text_marker(&mut head, "TENTATIVE", tentative);
        head.push_str(&fill(
            &self.agent_reflection,
            &[("question", &q.question), ("answer", tentative)],
        ));
        vec![ChatTurn::new(
            Role::User,
            vec![
                Part::Text(head),
                Part::Image(q.image_ref.clone()),
                Part::Text(format!("Document:\nTitle: {}\n{}", doc.title, doc.text)),
            ],
        )]
    }

    pub fn judge(&self, judge_name: &str, question: &str, references: &[String], answer: &str) -> Vec<ChatTurn> {
        let mut head = String::new();
        self.marker(&mut head, &[("TASK", "judge"), ("JUDGE", judge_name)]);
        self.text_marker(&mut head, "ANSWER", answer);
        for r in references {
            self.text_marker(&mut head, "REFERENCE", r);
        }
        head.push_str(&fill(
            &self.judge,
            &[
                ("question", question),
                ("references", &references.join(" | ")),
                ("answer", answer),
            ],
        ));
        vec![ChatTurn::new(Role::User, vec![Part::Text(head)])]
    }
}
