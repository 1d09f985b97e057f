//! Prompt assembly and answer normalization.
//!
//! # Template files
//!
//! A template is UTF-8 text split into three sections, each opened by a
//! header line:
//!
//! ```text
//! [instruction]
//! Answer the question.
//! [exemplar]
//! Q: {question}
//! A: {answer}
//! [query]
//! Q: {query}
//! A:
//! ```
//!
//! The exemplar section must contain `{question}` and `{answer}`, the query
//! section `{query}`. Substitution is a single left-to-right pass, so braces
//! inside substituted text are never expanded again; unknown `{...}` runs are
//! kept verbatim. A prompt is the instruction (if non-empty), one exemplar
//! block per context entry and the query block, joined by blank lines.
//!
//! # Answer normalization
//!
//! [`normalize_answer`] lowercases, strips leading enumerators such as `1)`,
//! `(a)` or `2. `, deletes every character that is neither alphanumeric nor
//! whitespace (hyphens between two alphanumerics survive, so `F.C.` becomes
//! `fc` and `Stoke-on-Trent` stays whole), maps L1 month names to full
//! English names and collapses whitespace.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{english_month_name, lookup_month, QueryRecord, TaskLevel};
use crate::retriever::{ContextSet, RetrievalStrategy};

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("template `{template}`: section [{section}] is missing placeholder {{{placeholder}}}")]
    MissingPlaceholder { template: String, section: &'static str, placeholder: &'static str },
    #[error("template `{template}`: missing section [{section}]")]
    MissingSection { template: String, section: &'static str },
    #[error("template `{template}` line {line}: {message}")]
    Syntax { template: String, line: usize, message: String },
    #[error("no built-in template for level {level} and language `{language}`")]
    NoBuiltin { level: TaskLevel, language: String },
    #[error("context is empty")]
    EmptyContext,
    #[error("context was selected for `{context}` but the query is `{query}`")]
    QueryMismatch { context: String, query: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub instruction: String,
    pub exemplar: String,
    pub query: String,
}

const SECTIONS: [&str; 3] = ["instruction", "exemplar", "query"];

macro_rules! builtin {
    ($($lvl:literal / $lang:literal),* $(,)?) => {
        &[$(($lvl, $lang, include_str!(concat!("../templates/", $lvl, "_", $lang, ".tmpl")))),*]
    };
}

const BUILTINS: &[(&str, &str, &str)] = builtin!(
    "l1" / "en", "l1" / "fr", "l1" / "de", "l1" / "ro",
    "l2" / "en", "l2" / "fr", "l2" / "de", "l2" / "ro",
    "l3" / "en", "l3" / "fr", "l3" / "de", "l3" / "ro",
);

impl PromptTemplate {
    pub fn parse(id: impl Into<String>, text: &str) -> Result<Self, PromptError> {
        let id = id.into();
        let mut bodies: [Option<Vec<&str>>; 3] = [None, None, None];
        let mut current: Option<usize> = None;
        for (idx, line) in text.lines().enumerate() {
            let syntax = |message: String| PromptError::Syntax { template: id.clone(), line: idx + 1, message };
            let trimmed = line.trim_end();
            if let Some(name) = trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let pos = SECTIONS
                    .iter()
                    .position(|s| *s == name)
                    .ok_or_else(|| syntax(format!("unknown section [{name}]")))?;
                if bodies[pos].is_some() {
                    return Err(syntax(format!("duplicate section [{name}]")));
                }
                bodies[pos] = Some(Vec::new());
                current = Some(pos);
                continue;
            }
            match current {
                Some(pos) => bodies[pos].as_mut().expect("opened").push(line),
                None if trimmed.is_empty() => {}
                None => return Err(syntax("text before the first section header".into())),
            }
        }
        let [instruction, exemplar, query] = bodies;
        let take = |body: Option<Vec<&str>>, section: &'static str| {
            body.map(|lines| lines.join("\n").trim_end_matches('\n').to_string())
                .ok_or_else(|| PromptError::MissingSection { template: id.clone(), section })
        };
        let template = Self {
            instruction: take(instruction, "instruction")?,
            exemplar: take(exemplar, "exemplar")?,
            query: take(query, "query")?,
            id: id.clone(),
        };
        template.validate()?;
        Ok(template)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let checks: [(&'static str, &str, &'static str); 3] = [
            ("exemplar", &self.exemplar, "question"),
            ("exemplar", &self.exemplar, "answer"),
            ("query", &self.query, "query"),
        ];
        for (section, body, placeholder) in checks {
            if !body.contains(&format!("{{{placeholder}}}")) {
                return Err(PromptError::MissingPlaceholder { template: self.id.clone(), section, placeholder });
            }
        }
        Ok(())
    }

    /// Shipped default for a level and language (primary subtag).
    pub fn builtin(level: TaskLevel, language: &str) -> Result<Self, PromptError> {
        let lang = language.split(['-', '_']).next().unwrap_or("").to_ascii_lowercase();
        let lvl = level.as_str().to_ascii_lowercase();
        let (_, _, text) = BUILTINS
            .iter()
            .find(|(l, g, _)| *l == lvl && *g == lang)
            .ok_or_else(|| PromptError::NoBuiltin { level, language: language.to_string() })?;
        Self::parse(format!("{lvl}_{lang}"), text)
    }

    pub fn render_exemplar(&self, question: &str, answer: &str) -> String {
        substitute(&self.exemplar, &[("question", question), ("answer", answer)])
    }

    pub fn render_query(&self, query: &str) -> String {
        substitute(&self.query, &[("query", query)])
    }
}

/// Single-pass `{name}` substitution.
fn substitute(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    'outer: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        for (name, value) in values {
            if let Some(tail) = after.strip_prefix(name).and_then(|t| t.strip_prefix('}')) {
                out.push_str(value);
                rest = tail;
                continue 'outer;
            }
        }
        out.push('{');
        rest = after;
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembledPrompt {
    pub query_id: String,
    pub template_id: String,
    pub strategy: RetrievalStrategy,
    pub k: usize,
    pub text: String,
}

pub fn assemble_prompt(
    context: &ContextSet,
    query: &QueryRecord,
    template: &PromptTemplate,
) -> Result<AssembledPrompt, PromptError> {
    template.validate()?;
    if context.exemplars.is_empty() {
        return Err(PromptError::EmptyContext);
    }
    if context.query_id != query.id {
        return Err(PromptError::QueryMismatch { context: context.query_id.clone(), query: query.id.clone() });
    }
    let mut blocks = Vec::with_capacity(context.exemplars.len() + 2);
    if !template.instruction.is_empty() {
        blocks.push(template.instruction.clone());
    }
    blocks.extend(context.exemplars.iter().map(|e| template.render_exemplar(&e.question, &e.answer)));
    blocks.push(template.render_query(&query.question));
    Ok(AssembledPrompt {
        query_id: query.id.clone(),
        template_id: template.id.clone(),
        strategy: context.strategy,
        k: context.exemplars.len(),
        text: blocks.join("\n\n"),
    })
}

static ENUMERATOR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(?:\(?(?:\d{1,3}|[a-z])\)|(?:\d{1,3}|[a-z])\.\s)\s*").expect("valid"));

pub fn normalize_answer(raw: &str, level: TaskLevel, language: &str) -> String {
    let mut text = raw.to_lowercase();
    while let Some(m) = ENUMERATOR.find(&text) {
        if m.end() == 0 {
            break;
        }
        text.replace_range(..m.end(), "");
    }
    let chars: Vec<char> = text.chars().collect();
    let mut cleaned = String::with_capacity(text.len());
    for (i, &c) in chars.iter().enumerate() {
        let keep = c.is_alphanumeric()
            || c.is_whitespace()
            || (c == '-'
                && i > 0
                && chars[i - 1].is_alphanumeric()
                && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric()));
        if keep {
            cleaned.push(c);
        }
    }
    let tokens = cleaned.split_whitespace().map(|tok| {
        if level == TaskLevel::L1 {
            if let Some(m) = lookup_month(tok, "en").or_else(|| lookup_month(tok, language)) {
                return english_month_name(m);
            }
        }
        tok
    });
    tokens.collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retriever::Exemplar;
    use proptest::prelude::*;

    fn context(query_id: &str, pairs: &[(&str, &str)]) -> ContextSet {
        ContextSet {
            query_id: query_id.into(),
            strategy: RetrievalStrategy::CrossLingual,
            k: pairs.len(),
            exemplars: pairs
                .iter()
                .enumerate()
                .map(|(i, (q, a))| Exemplar {
                    id: format!("en-{i}"),
                    question: q.to_string(),
                    answer: a.to_string(),
                    score: Some(1.0 - i as f64 * 0.1),
                })
                .collect(),
        }
    }

    fn query(id: &str, language: &str, question: &str) -> QueryRecord {
        QueryRecord {
            id: id.into(),
            language: language.into(),
            level: TaskLevel::L1,
            question: question.into(),
            answers: vec!["x".into()],
        }
    }

    #[test]
    fn all_builtins_parse() {
        for level in TaskLevel::ALL {
            for lang in ["en", "fr", "de", "ro"] {
                let t = PromptTemplate::builtin(level, lang).unwrap();
                assert!(!t.instruction.is_empty());
            }
        }
        assert!(matches!(PromptTemplate::builtin(TaskLevel::L1, "sw"), Err(PromptError::NoBuiltin { .. })));
    }

    #[test]
    fn worked_example_layout() {
        let t = PromptTemplate::builtin(TaskLevel::L1, "ro").unwrap();
        let ctx = context("ro-1", &[("What is the time 6 years and 4 months after Nov, 1185", "Mar, 1192")]);
        let q = query("ro-1", "ro", "Care este timpul cu 8 ani și 3 luni înainte de august 1240");
        let p = assemble_prompt(&ctx, &q, &t).unwrap();
        let expected = format!(
            "{}\n\nQ: What is the time 6 years and 4 months after Nov, 1185\nA: Mar, 1192\n\n\
             Q: Care este timpul cu 8 ani și 3 luni înainte de august 1240\nA:",
            t.instruction
        );
        assert_eq!(p.text, expected);
        assert_eq!(p.k, 1);
        assert_eq!(p.template_id, "l1_ro");
        assert_eq!(p.text.matches("\nA: ").count(), 1);
        assert_eq!(assemble_prompt(&ctx, &q, &t).unwrap(), p);
    }

    #[test]
    fn removing_an_exemplar_removes_its_block() {
        let t = PromptTemplate::builtin(TaskLevel::L2, "en").unwrap();
        let pairs = [("q one", "a1"), ("q two", "a2"), ("q three", "a3")];
        let q = query("x", "en", "final?");
        let full = assemble_prompt(&context("x", &pairs), &q, &t).unwrap();
        let fewer = assemble_prompt(&context("x", &[pairs[0], pairs[2]]), &q, &t).unwrap();
        let block = format!("{}\n\n", t.render_exemplar("q two", "a2"));
        assert_eq!(full.text.replacen(&block, "", 1), fewer.text);
        assert_eq!(full.text.len() - fewer.text.len(), block.len());
    }

    #[test]
    fn substitution_is_single_pass() {
        let t = PromptTemplate::builtin(TaskLevel::L3, "en").unwrap();
        assert_eq!(t.render_exemplar("why {answer}?", "{question}"), "Q: why {answer}?\nA: {question}");
        assert_eq!(substitute("{x} {y", &[("x", "1")]), "1 {y");
    }

    #[test]
    fn template_errors() {
        let err = PromptTemplate::parse("t", "[instruction]\n\n[exemplar]\nQ: {question}\n[query]\n{query}\n").unwrap_err();
        assert_eq!(
            err,
            PromptError::MissingPlaceholder { template: "t".into(), section: "exemplar", placeholder: "answer" }
        );
        assert!(matches!(
            PromptTemplate::parse("t", "[exemplar]\n{question}{answer}\n[query]\n{query}"),
            Err(PromptError::MissingSection { section: "instruction", .. })
        ));
        assert!(matches!(PromptTemplate::parse("t", "hello\n[query]"), Err(PromptError::Syntax { line: 1, .. })));
        assert!(matches!(PromptTemplate::parse("t", "[other]"), Err(PromptError::Syntax { .. })));
        let t = PromptTemplate::parse("t", "[instruction]\n[exemplar]\n{question}={answer}\n[query]\n{query}=").unwrap();
        let p = assemble_prompt(&context("x", &[("1+1", "2")]), &query("x", "en", "2+2"), &t).unwrap();
        assert_eq!(p.text, "1+1=2\n\n2+2=");
        assert_eq!(
            assemble_prompt(&context("x", &[]), &query("x", "en", "q"), &t),
            Err(PromptError::EmptyContext)
        );
        assert!(matches!(
            assemble_prompt(&context("y", &[("a", "b")]), &query("x", "en", "q"), &t),
            Err(PromptError::QueryMismatch { .. })
        ));
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_answer("Mar, 1192", TaskLevel::L1, "en"), "march 1192");
        assert_eq!(normalize_answer("1) mars 1192", TaskLevel::L1, "fr"), "march 1192");
        assert_eq!(normalize_answer("", TaskLevel::L1, "en"), "");
        assert_eq!(normalize_answer("(b) März 1240.", TaskLevel::L1, "de"), "march 1240");
        assert_eq!(normalize_answer("2. Sheffield Wednesday F.C.", TaskLevel::L2, "en"), "sheffield wednesday fc");
        assert_eq!(normalize_answer("Stoke-on-Trent -- city", TaskLevel::L3, "en"), "stoke-on-trent city");
        assert_eq!(normalize_answer("Result (1) here", TaskLevel::L2, "en"), "result 1 here");
        // Month mapping is L1 only.
        assert_eq!(normalize_answer("Mai", TaskLevel::L2, "de"), "mai");
        assert_eq!(normalize_answer("Mai", TaskLevel::L1, "de"), "may");
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(raw in "\\PC{0,40}", level in 0usize..3, lang in 0usize..4) {
            let level = TaskLevel::ALL[level];
            let lang = ["en", "fr", "de", "ro"][lang];
            let once = normalize_answer(&raw, level, lang);
            prop_assert_eq!(normalize_answer(&once, level, lang), once);
        }

        #[test]
        fn normalize_is_idempotent_on_enumerated_months(
            n in 0u32..1000, sep in 0usize..3, month in 1u8..=12, year in 1u32..3000, lang in 0usize..4,
        ) {
            let lang = ["en", "fr", "de", "ro"][lang];
            let prefix = [format!("{n})"), format!("({n})"), format!("{n}. ")][sep].clone();
            let raw = format!("{prefix} {}, {year}", english_month_name(month));
            let once = normalize_answer(&raw, TaskLevel::L1, lang);
            prop_assert_eq!(&once, &format!("{} {year}", english_month_name(month)));
            prop_assert_eq!(normalize_answer(&once, TaskLevel::L1, lang), once);
        }
    }
}
