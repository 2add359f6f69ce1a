//! SQuAD v1.1 import: data → paragraphs → qas → answers.

use std::path::Path;

use semqg_core::text::QAExample;
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Deserialize)]
struct File {
    data: Vec<Article>,
}

#[derive(Deserialize)]
struct Article {
    paragraphs: Vec<Paragraph>,
}

#[derive(Deserialize)]
struct Paragraph {
    context: String,
    qas: Vec<Qa>,
}

#[derive(Deserialize)]
struct Qa {
    id: String,
    question: String,
    answers: Vec<Answer>,
}

#[derive(Deserialize)]
struct Answer {
    text: String,
    answer_start: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SquadImport {
    pub examples: Vec<QAExample>,
    /// Questions skipped because the first answer is missing or does not
    /// occur at its offset.
    pub skipped: usize,
}

pub fn parse_squad(text: &str) -> CliResult<SquadImport> {
    let file: File =
        serde_json::from_str(text).map_err(|e| CliError::Data(format!("SQuAD file: {e}")))?;
    let mut examples = Vec::new();
    let mut skipped = 0;
    for p in file.data.iter().flat_map(|a| &a.paragraphs) {
        for qa in &p.qas {
            let Some(a) = qa.answers.first() else {
                skipped += 1;
                continue;
            };
            let ex = QAExample {
                id: qa.id.clone(),
                context: p.context.clone(),
                question: Some(qa.question.clone()),
                answer_text: a.text.clone(),
                answer_start: a.answer_start,
            };
            if ex.validate().is_ok() {
                examples.push(ex);
            } else {
                log::warn!("skipping {}: answer does not match its offset", qa.id);
                skipped += 1;
            }
        }
    }
    Ok(SquadImport { examples, skipped })
}

pub fn import_squad(path: &Path) -> CliResult<SquadImport> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_squad(&text)
}
