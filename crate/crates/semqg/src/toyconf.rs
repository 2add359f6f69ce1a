//! Plain-text toy-language spec: `key = value` lines, `#` comments.
//!
//! ```text
//! seed = 7
//! names = Alice Bruno Chen
//! years = 1850 1999
//! fact born = {person} was born in {city} in {year}.
//! question born person = Who was born in {city}? | Who was born in {city} in {year}?
//! ```
//!
//! Keys left out keep their default values. Any `fact` line replaces the
//! default fact templates as a whole.

use std::fmt::Write as _;
use std::path::Path;

use semqg_core::text::toy::{FactTemplate, QuestionTemplate, SlotKind};
use semqg_core::text::ToyLanguageSpec;

use crate::error::{CliError, CliResult};

fn bad(line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("toy spec line {line}: {msg}"))
}

fn pair<T: std::str::FromStr>(line: usize, v: &str) -> CliResult<(T, T)> {
    let parts: Vec<&str> = v.split_whitespace().collect();
    match parts.as_slice() {
        [a, b] => match (a.parse(), b.parse()) {
            (Ok(a), Ok(b)) => Ok((a, b)),
            _ => Err(bad(line, format!("expected two numbers, got {v:?}"))),
        },
        _ => Err(bad(line, format!("expected two numbers, got {v:?}"))),
    }
}

pub fn parse_toy_spec(text: &str) -> CliResult<ToyLanguageSpec> {
    let mut spec = ToyLanguageSpec::default();
    let mut facts: Vec<FactTemplate> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(bad(n, "expected `key = value`"));
        };
        let key: Vec<&str> = key.split_whitespace().collect();
        let value = value.trim();
        let words = || {
            value
                .split_whitespace()
                .map(str::to_string)
                .collect::<Vec<_>>()
        };
        match key.as_slice() {
            ["seed"] => {
                spec.seed = value
                    .parse()
                    .map_err(|_| bad(n, "seed must be an integer"))?
            }
            ["names"] => spec.names = words(),
            ["cities"] => spec.cities = words(),
            ["organizations"] => spec.organizations = words(),
            ["jobs"] => spec.jobs = words(),
            ["years"] => spec.years = pair(n, value)?,
            ["counts"] => spec.counts = pair(n, value)?,
            ["facts_per_context"] => {
                spec.facts_per_context = value.parse().map_err(|_| bad(n, "expected an integer"))?
            }
            ["fact", name] => {
                if facts.iter().any(|f| f.name == *name) {
                    return Err(bad(n, format!("fact {name} declared twice")));
                }
                facts.push(FactTemplate {
                    name: name.to_string(),
                    text: value.to_string(),
                    questions: Vec::new(),
                });
            }
            ["question", fact, slot] => {
                let answer =
                    SlotKind::parse(slot).ok_or_else(|| bad(n, format!("unknown slot {slot}")))?;
                let f = facts
                    .iter_mut()
                    .find(|f| f.name == *fact)
                    .ok_or_else(|| bad(n, format!("question for undeclared fact {fact}")))?;
                let variants: Vec<String> = value
                    .split('|')
                    .map(|v| v.trim().to_string())
                    .filter(|v| !v.is_empty())
                    .collect();
                if variants.is_empty() {
                    return Err(bad(n, "no question variants"));
                }
                f.questions.push(QuestionTemplate { answer, variants });
            }
            _ => return Err(bad(n, format!("unknown key {:?}", key.join(" ")))),
        }
    }
    if !facts.is_empty() {
        spec.facts = facts;
    }
    spec.validate()
        .map_err(|e| CliError::Data(format!("toy spec: {e}")))?;
    Ok(spec)
}

pub fn load_toy_spec(path: &Path) -> CliResult<ToyLanguageSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_toy_spec(&text).map_err(|e| match e {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Writes every field explicitly; parsing the result gives back `spec`.
pub fn render_toy_spec(spec: &ToyLanguageSpec) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "seed = {}", spec.seed);
    let _ = writeln!(s, "names = {}", spec.names.join(" "));
    let _ = writeln!(s, "cities = {}", spec.cities.join(" "));
    let _ = writeln!(s, "organizations = {}", spec.organizations.join(" "));
    let _ = writeln!(s, "jobs = {}", spec.jobs.join(" "));
    let _ = writeln!(s, "years = {} {}", spec.years.0, spec.years.1);
    let _ = writeln!(s, "counts = {} {}", spec.counts.0, spec.counts.1);
    let _ = writeln!(s, "facts_per_context = {}", spec.facts_per_context);
    for f in &spec.facts {
        let _ = writeln!(s, "fact {} = {}", f.name, f.text);
        for q in &f.questions {
            let _ = writeln!(
                s,
                "question {} {} = {}",
                f.name,
                q.answer.name(),
                q.variants.join(" | ")
            );
        }
    }
    s
}
