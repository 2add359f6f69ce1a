//! A small deterministic QA language: contexts are a few templated facts about
//! people, places and companies; questions are templated per answer slot.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::example::QAExample;
use super::tags::{LexiconTagger, Ner, Pos};
use crate::error::{bail, Result};
use crate::nn::RngState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SlotKind {
    Person,
    City,
    Organization,
    Job,
    Year,
    Count,
}

impl SlotKind {
    pub const ALL: [SlotKind; 6] = [
        SlotKind::Person,
        SlotKind::City,
        SlotKind::Organization,
        SlotKind::Job,
        SlotKind::Year,
        SlotKind::Count,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SlotKind::Person => "person",
            SlotKind::City => "city",
            SlotKind::Organization => "org",
            SlotKind::Job => "job",
            SlotKind::Year => "year",
            SlotKind::Count => "count",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn tags(self) -> (Pos, Ner) {
        match self {
            SlotKind::Person => (Pos::Propn, Ner::Person),
            SlotKind::City => (Pos::Propn, Ner::Location),
            SlotKind::Organization => (Pos::Propn, Ner::Organization),
            SlotKind::Job => (Pos::Noun, Ner::O),
            SlotKind::Year => (Pos::Num, Ner::Date),
            SlotKind::Count => (Pos::Num, Ner::Number),
        }
    }
}

/// Closed-class words used by the templates, with their tags.
pub const FUNCTION_WORDS: &[(&str, Pos, Ner)] = &[
    ("was", Pos::Aux, Ner::O),
    ("is", Pos::Aux, Ner::O),
    ("did", Pos::Aux, Ner::O),
    ("does", Pos::Aux, Ner::O),
    ("born", Pos::Verb, Ner::O),
    ("founded", Pos::Verb, Ner::O),
    ("found", Pos::Verb, Ner::O),
    ("works", Pos::Verb, Ner::O),
    ("work", Pos::Verb, Ner::O),
    ("moved", Pos::Verb, Ner::O),
    ("move", Pos::Verb, Ner::O),
    ("has", Pos::Verb, Ner::O),
    ("have", Pos::Verb, Ner::O),
    ("in", Pos::Adp, Ner::O),
    ("as", Pos::Adp, Ner::O),
    ("at", Pos::Adp, Ner::O),
    ("to", Pos::Adp, Ner::O),
    ("of", Pos::Adp, Ner::O),
    ("a", Pos::Det, Ner::O),
    ("the", Pos::Det, Ner::O),
    ("employees", Pos::Noun, Ner::O),
    ("people", Pos::Noun, Ner::O),
    ("company", Pos::Noun, Ner::O),
    ("job", Pos::Noun, Ner::O),
    ("many", Pos::Adj, Ner::O),
    ("who", Pos::Wh, Ner::O),
    ("what", Pos::Wh, Ner::O),
    ("when", Pos::Wh, Ner::O),
    ("where", Pos::Wh, Ner::O),
    ("how", Pos::Wh, Ner::O),
    (".", Pos::Punct, Ner::O),
    ("?", Pos::Punct, Ner::O),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionTemplate {
    pub answer: SlotKind,
    pub variants: Vec<String>,
}

/// A sentence pattern with `{slot}` placeholders and the questions it supports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactTemplate {
    pub name: String,
    pub text: String,
    pub questions: Vec<QuestionTemplate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyLanguageSpec {
    pub seed: u64,
    pub names: Vec<String>,
    pub cities: Vec<String>,
    pub organizations: Vec<String>,
    pub jobs: Vec<String>,
    /// Inclusive year range.
    pub years: (u32, u32),
    /// Inclusive range for employee counts; kept below 1000 so counts never
    /// look like years.
    pub counts: (u32, u32),
    pub facts_per_context: usize,
    pub facts: Vec<FactTemplate>,
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn fact(name: &str, text: &str, qs: &[(SlotKind, &[&str])]) -> FactTemplate {
    FactTemplate {
        name: name.to_string(),
        text: text.to_string(),
        questions: qs
            .iter()
            .map(|(k, v)| QuestionTemplate {
                answer: *k,
                variants: v.iter().map(|s| s.to_string()).collect(),
            })
            .collect(),
    }
}

pub fn default_fact_templates() -> Vec<FactTemplate> {
    use SlotKind::*;
    vec![
        fact(
            "born",
            "{person} was born in {city} in {year}.",
            &[
                (
                    Person,
                    &[
                        "Who was born in {city}?",
                        "Who was born in {city} in {year}?",
                    ],
                ),
                (
                    City,
                    &[
                        "Where was {person} born?",
                        "Where was {person} born in {year}?",
                    ],
                ),
                (
                    Year,
                    &[
                        "When was {person} born?",
                        "When was {person} born in {city}?",
                    ],
                ),
            ],
        ),
        fact(
            "founded",
            "{person} founded {org} in {year}.",
            &[
                (
                    Person,
                    &["Who founded {org}?", "Who founded {org} in {year}?"],
                ),
                (
                    Organization,
                    &[
                        "What did {person} found?",
                        "What did {person} found in {year}?",
                    ],
                ),
                (
                    Year,
                    &["When did {person} found {org}?", "When was {org} founded?"],
                ),
            ],
        ),
        fact(
            "works",
            "{person} works as a {job} in {city}.",
            &[
                (
                    Person,
                    &["Who works as a {job} in {city}?", "Who works in {city}?"],
                ),
                (
                    Job,
                    &[
                        "What does {person} work as?",
                        "What is the job of {person}?",
                    ],
                ),
                (
                    City,
                    &[
                        "Where does {person} work?",
                        "Where does {person} work as a {job}?",
                    ],
                ),
            ],
        ),
        fact(
            "employs",
            "{org} has {count} employees.",
            &[
                (
                    Count,
                    &[
                        "How many employees does {org} have?",
                        "How many people work at {org}?",
                    ],
                ),
                (
                    Organization,
                    &[
                        "What company has {count} employees?",
                        "What has {count} employees?",
                    ],
                ),
            ],
        ),
        fact(
            "moved",
            "{person} moved to {city} in {year}.",
            &[
                (
                    Person,
                    &["Who moved to {city}?", "Who moved to {city} in {year}?"],
                ),
                (
                    City,
                    &[
                        "Where did {person} move?",
                        "Where did {person} move in {year}?",
                    ],
                ),
                (
                    Year,
                    &[
                        "When did {person} move to {city}?",
                        "When did {person} move?",
                    ],
                ),
            ],
        ),
    ]
}

impl Default for ToyLanguageSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            names: words(
                "Alice Bruno Chen Dara Elena Farid Greta Hugo Ines Jonas Kira Lars Mina Nadia Omar \
                 Pablo Quinn Rosa Sven Tara Umar Vera Wang Xena Yusuf Zoe Anton Bea Cyril Dmitri",
            ),
            cities: words(
                "Paris Lima Oslo Cairo Delhi Quito Rome Tokyo Berlin Dakar Hanoi Kyiv Lagos Madrid \
                 Nairobi Prague Seoul Sofia Vienna Zurich",
            ),
            organizations: words(
                "Acme Borealis Corvid Dynamo Everlight Fjord Granite Helix Ironbark Juniper Kestrel \
                 Lumen Monolith Nimbus Orbit",
            ),
            jobs: words("baker doctor farmer pilot teacher painter lawyer nurse sailor tailor writer"),
            years: (1850, 1999),
            counts: (10, 99),
            facts_per_context: 2,
            facts: default_fact_templates(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Word(String),
    Slot(SlotKind),
}

fn parse_template(t: &str) -> Result<Vec<Piece>> {
    let mut out = Vec::new();
    for raw in t.split_whitespace() {
        let (body, punct) = match raw.char_indices().last() {
            Some((i, c)) if matches!(c, '.' | '?' | ',') && i > 0 => (&raw[..i], Some(c)),
            _ => (raw, None),
        };
        if let Some(name) = body.strip_prefix('{').and_then(|b| b.strip_suffix('}')) {
            match SlotKind::parse(name) {
                Some(k) => out.push(Piece::Slot(k)),
                None => bail!(
                    InvalidArgument,
                    "unknown slot {{{}}} in template {:?}",
                    name,
                    t
                ),
            }
        } else {
            out.push(Piece::Word(body.to_string()));
        }
        if let Some(p) = punct {
            out.push(Piece::Word(p.to_string()));
        }
    }
    Ok(out)
}

/// A rendered token with its generator-assigned tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldToken {
    pub text: String,
    pub pos: Pos,
    pub ner: Ner,
}

struct Rendered {
    text: String,
    tokens: Vec<GoldToken>,
    /// Character offset of each slot filler.
    slots: BTreeMap<SlotKind, usize>,
}

fn function_tags(word: &str) -> (Pos, Ner) {
    let lower = word.to_lowercase();
    FUNCTION_WORDS
        .iter()
        .find(|(w, _, _)| *w == lower)
        .map_or((Pos::Noun, Ner::O), |&(_, p, n)| (p, n))
}

fn render_into(
    out: &mut Rendered,
    pieces: &[Piece],
    fill: &BTreeMap<SlotKind, String>,
    capitalize: bool,
) {
    let mut first = true;
    for piece in pieces {
        let (mut word, tags, slot) = match piece {
            Piece::Word(w) => (w.clone(), function_tags(w), None),
            Piece::Slot(k) => (fill[k].clone(), k.tags(), Some(*k)),
        };
        if first && capitalize {
            let mut cs = word.chars();
            if let Some(c) = cs.next() {
                word = c.to_uppercase().chain(cs).collect();
            }
        }
        let is_punct = word.chars().all(|c| !c.is_alphanumeric());
        if !out.text.is_empty() && !is_punct {
            out.text.push(' ');
        }
        if let Some(k) = slot {
            out.slots.insert(k, out.text.chars().count());
        }
        out.text.push_str(&word);
        out.tokens.push(GoldToken {
            text: word,
            pos: tags.0,
            ner: tags.1,
        });
        first = false;
    }
}

fn render(pieces: &[Piece], fill: &BTreeMap<SlotKind, String>, capitalize: bool) -> String {
    let mut r = Rendered {
        text: String::new(),
        tokens: Vec::new(),
        slots: BTreeMap::new(),
    };
    render_into(&mut r, pieces, fill, capitalize);
    r.text
}

struct Parsed {
    fact: Vec<Piece>,
    questions: Vec<(SlotKind, Vec<Vec<Piece>>)>,
}

/// A toy dataset split into labeled train/dev, unlabeled contexts with answer
/// spans, and the generator's own tags for every context token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyCorpus {
    pub train: Vec<QAExample>,
    pub dev: Vec<QAExample>,
    pub unlabeled: Vec<QAExample>,
    pub gold_tags: BTreeMap<String, Vec<GoldToken>>,
}

/// Question pair for the paraphrase classifier; `label` is 1 for paraphrases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionPair {
    pub a: String,
    pub b: String,
    pub label: u8,
}

impl ToyLanguageSpec {
    pub fn lexicon(&self, kind: SlotKind) -> Vec<String> {
        match kind {
            SlotKind::Person => self.names.clone(),
            SlotKind::City => self.cities.clone(),
            SlotKind::Organization => self.organizations.clone(),
            SlotKind::Job => self.jobs.clone(),
            SlotKind::Year => (self.years.0..=self.years.1)
                .map(|y| y.to_string())
                .collect(),
            SlotKind::Count => (self.counts.0..=self.counts.1)
                .map(|y| y.to_string())
                .collect(),
        }
    }

    fn lexicon_size(&self, kind: SlotKind) -> usize {
        match kind {
            SlotKind::Year => (self.years.1 + 1).saturating_sub(self.years.0) as usize,
            SlotKind::Count => (self.counts.1 + 1).saturating_sub(self.counts.0) as usize,
            k => self.lexicon(k).len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for k in SlotKind::ALL {
            if self.lexicon_size(k) == 0 {
                bail!(InvalidArgument, "empty lexicon for {}", k.name());
            }
        }
        if self.counts.1 >= 1000 {
            bail!(InvalidArgument, "employee counts must stay below 1000");
        }
        if self.facts.is_empty() || self.facts_per_context == 0 {
            bail!(
                InvalidArgument,
                "need at least one fact template and one fact per context"
            );
        }
        if self.facts_per_context > self.facts.len() {
            bail!(
                InvalidArgument,
                "{} facts per context but only {} templates",
                self.facts_per_context,
                self.facts.len()
            );
        }
        for f in &self.facts {
            if f.questions.is_empty() || f.questions.iter().any(|q| q.variants.is_empty()) {
                bail!(InvalidArgument, "fact template {} has no questions", f.name);
            }
        }
        Ok(())
    }

    /// Tagger that is exact on this language.
    pub fn tagger(&self) -> LexiconTagger {
        let mut t = LexiconTagger::default();
        for &(w, p, n) in FUNCTION_WORDS {
            t.insert(w, p, n);
        }
        for k in [
            SlotKind::Person,
            SlotKind::City,
            SlotKind::Organization,
            SlotKind::Job,
        ] {
            let (p, n) = k.tags();
            for w in self.lexicon(k) {
                t.insert(&w, p, n);
            }
        }
        t
    }

    /// Upper bound on the number of distinct contexts.
    pub fn capacity(&self) -> u128 {
        let per_fact: Vec<u128> = self
            .facts
            .iter()
            .map(|f| {
                parse_template(&f.text).map_or(0, |ps| {
                    ps.iter()
                        .filter_map(|p| match p {
                            Piece::Slot(k) => Some(self.lexicon_size(*k) as u128),
                            Piece::Word(_) => None,
                        })
                        .fold(1u128, u128::saturating_mul)
                })
            })
            .collect();
        // ordered choices of distinct templates
        fn go(per: &[u128], used: &mut Vec<bool>, left: usize) -> u128 {
            if left == 0 {
                return 1;
            }
            let mut total = 0u128;
            for i in 0..per.len() {
                if !used[i] {
                    used[i] = true;
                    let rest = go(per, used, left - 1);
                    used[i] = false;
                    total = total.saturating_add(per[i].saturating_mul(rest));
                }
            }
            total
        }
        go(
            &per_fact,
            &mut vec![false; per_fact.len()],
            self.facts_per_context,
        )
    }

    fn parse_all(&self) -> Result<Vec<Parsed>> {
        self.facts
            .iter()
            .map(|f| {
                let mut questions = Vec::new();
                for q in &f.questions {
                    let vs = q
                        .variants
                        .iter()
                        .map(|v| parse_template(v))
                        .collect::<Result<_>>()?;
                    questions.push((q.answer, vs));
                }
                Ok(Parsed {
                    fact: parse_template(&f.text)?,
                    questions,
                })
            })
            .collect()
    }

    fn fill_slots(
        &self,
        parsed: &Parsed,
        taken: &mut BTreeSet<(SlotKind, String)>,
        rng: &mut RngState,
    ) -> Option<BTreeMap<SlotKind, String>> {
        let mut fill = BTreeMap::new();
        for p in &parsed.fact {
            if let Piece::Slot(k) = p {
                let lex = self.lexicon(*k);
                let mut pick = None;
                for _ in 0..32 {
                    let w = rng.choose(&lex).clone();
                    if !taken.contains(&(*k, w.clone())) {
                        pick = Some(w);
                        break;
                    }
                }
                let w = pick?;
                taken.insert((*k, w.clone()));
                fill.insert(*k, w);
            }
        }
        Some(fill)
    }
}

struct Drawn {
    context: Rendered,
    fills: Vec<BTreeMap<SlotKind, String>>,
    fact_ids: Vec<usize>,
    /// Character offsets of each fact's slots within the whole context.
    offsets: Vec<BTreeMap<SlotKind, usize>>,
}

fn draw_context(spec: &ToyLanguageSpec, parsed: &[Parsed], rng: &mut RngState) -> Option<Drawn> {
    let mut ids: Vec<usize> = (0..parsed.len()).collect();
    rng.shuffle(&mut ids);
    ids.truncate(spec.facts_per_context);
    let mut taken = BTreeSet::new();
    let mut ctx = Rendered {
        text: String::new(),
        tokens: Vec::new(),
        slots: BTreeMap::new(),
    };
    let mut fills = Vec::new();
    let mut offsets = Vec::new();
    for &i in &ids {
        let fill = spec.fill_slots(&parsed[i], &mut taken, rng)?;
        ctx.slots.clear();
        render_into(&mut ctx, &parsed[i].fact, &fill, true);
        offsets.push(ctx.slots.clone());
        fills.push(fill);
    }
    Some(Drawn {
        context: ctx,
        fills,
        fact_ids: ids,
        offsets,
    })
}

/// Builds train, dev and unlabeled splits with pairwise-distinct contexts.
/// Pure function of `spec` (including its seed).
pub fn make_toy_corpus(
    spec: &ToyLanguageSpec,
    n_train: usize,
    n_dev: usize,
    n_unlabeled: usize,
) -> Result<ToyCorpus> {
    spec.validate()?;
    let total = n_train + n_dev + n_unlabeled;
    if total as u128 > spec.capacity() {
        bail!(
            Capacity,
            "{} contexts requested but the templates allow at most {}",
            total,
            spec.capacity()
        );
    }
    let parsed = spec.parse_all()?;
    let mut rng = RngState::new(spec.seed);
    let mut seen = BTreeSet::new();
    let mut corpus = ToyCorpus {
        train: Vec::new(),
        dev: Vec::new(),
        unlabeled: Vec::new(),
        gold_tags: BTreeMap::new(),
    };
    let budget = 100 * total + 1000;
    let mut attempts = 0;
    for (split, n, prefix) in [
        (0, n_train, "train"),
        (1, n_dev, "dev"),
        (2, n_unlabeled, "new"),
    ] {
        let mut made = 0;
        while made < n {
            attempts += 1;
            if attempts > budget {
                bail!(
                    Capacity,
                    "could not draw {} distinct contexts from the lexicons",
                    total
                );
            }
            let Some(d) = draw_context(spec, &parsed, &mut rng) else {
                continue;
            };
            if !seen.insert(d.context.text.clone()) {
                continue;
            }
            let f = rng.below(d.fact_ids.len());
            let p = &parsed[d.fact_ids[f]];
            let (kind, variants) = &p.questions[rng.below(p.questions.len())];
            let variant = rng.choose(variants);
            let question = render(variant, &d.fills[f], true);
            let id = format!("{prefix}-{made:05}");
            let ex = QAExample {
                id: id.clone(),
                context: d.context.text.clone(),
                question: (split != 2).then_some(question),
                answer_text: d.fills[f][kind].clone(),
                answer_start: d.offsets[f][kind],
            };
            ex.validate()?;
            corpus.gold_tags.insert(id, d.context.tokens);
            match split {
                0 => corpus.train.push(ex),
                1 => corpus.dev.push(ex),
                _ => corpus.unlabeled.push(ex),
            }
            made += 1;
        }
    }
    Ok(corpus)
}

/// Balanced paraphrase pairs: positives render one (fact, answer slot) with two
/// different question templates; negatives either swap one entity or ask
/// about a different slot or fact.
pub fn make_paraphrase_pairs(
    spec: &ToyLanguageSpec,
    n: usize,
    seed: u64,
) -> Result<Vec<QuestionPair>> {
    spec.validate()?;
    let parsed = spec.parse_all()?;
    let mut rng = RngState::new(seed);
    let mut out = Vec::with_capacity(n);
    let mut guard = 0;
    while out.len() < n {
        guard += 1;
        if guard > 100 * n + 1000 {
            bail!(Capacity, "templates cannot produce {} paraphrase pairs", n);
        }
        let fi = rng.below(parsed.len());
        let p = &parsed[fi];
        let mut taken = BTreeSet::new();
        let Some(fill) = spec.fill_slots(p, &mut taken, &mut rng) else {
            continue;
        };
        let qi = rng.below(p.questions.len());
        let (_, variants) = &p.questions[qi];
        let va = rng.choose(variants);
        let a = render(va, &fill, true);
        let positive = out.len() % 2 == 0;
        let b = if positive {
            if variants.len() < 2 {
                continue;
            }
            let mut j = rng.below(variants.len());
            while render(&variants[j], &fill, true) == a {
                j = (j + 1) % variants.len();
            }
            render(&variants[j], &fill, true)
        } else if rng.bernoulli(0.5) {
            // same template, one of its entities replaced
            let used: Vec<SlotKind> = va
                .iter()
                .filter_map(|x| match x {
                    Piece::Slot(k) => Some(*k),
                    Piece::Word(_) => None,
                })
                .collect();
            if used.is_empty() {
                continue;
            }
            let k = *rng.choose(&used);
            let mut other = fill.clone();
            let lex = spec.lexicon(k);
            if lex.len() < 2 {
                continue;
            }
            while other[&k] == fill[&k] {
                other.insert(k, rng.choose(&lex).clone());
            }
            render(va, &other, true)
        } else {
            let fj = rng.below(parsed.len());
            let qj = rng.below(parsed[fj].questions.len());
            if fj == fi && qj == qi {
                continue;
            }
            let Some(fill2) = spec.fill_slots(&parsed[fj], &mut BTreeSet::new(), &mut rng) else {
                continue;
            };
            render(rng.choose(&parsed[fj].questions[qj].1), &fill2, true)
        };
        if !positive && b == a {
            continue;
        }
        out.push(QuestionPair {
            a,
            b,
            label: u8::from(positive),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_parsing() {
        let ps = parse_template("Who founded {org}?").unwrap();
        assert_eq!(
            ps,
            [
                Piece::Word("Who".into()),
                Piece::Word("founded".into()),
                Piece::Slot(SlotKind::Organization),
                Piece::Word("?".into())
            ]
        );
        assert!(parse_template("{nope}").is_err());
    }

    #[test]
    fn render_spacing() {
        let mut fill = BTreeMap::new();
        fill.insert(SlotKind::Organization, "Acme".to_string());
        let ps = parse_template("who founded {org}?").unwrap();
        assert_eq!(render(&ps, &fill, true), "Who founded Acme?");
    }

    #[test]
    fn capacity_counts_ordered_template_choices() {
        let spec = ToyLanguageSpec {
            facts: default_fact_templates()
                .into_iter()
                .filter(|f| f.name == "employs")
                .collect(),
            facts_per_context: 1,
            organizations: words("A B"),
            counts: (10, 12),
            ..Default::default()
        };
        assert_eq!(spec.capacity(), 6);
        assert!(matches!(
            make_toy_corpus(&spec, 5, 2, 0),
            Err(crate::Error::Capacity(_))
        ));
        let c = make_toy_corpus(&spec, 4, 2, 0).unwrap();
        assert_eq!(c.train.len() + c.dev.len(), 6);
    }
}
