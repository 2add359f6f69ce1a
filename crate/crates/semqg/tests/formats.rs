use semqg::checkpoint::{from_bytes, to_bytes};
use semqg::embeddings::{apply_embeddings, parse_embeddings};
use semqg::jsonl::{load_examples, parse_jsonl, save_jsonl, to_jsonl};
use semqg::squad::parse_squad;
use semqg::toyconf::{parse_toy_spec, render_toy_spec};
use semqg::CliError;
use semqg_core::model::{QgConfig, QgModel};
use semqg_core::reward::{QaConfig, QaModel, QpcConfig, QpcModel};
use semqg_core::text::{
    make_toy_corpus, vocab_from_examples, QAExample, ToyLanguageSpec, Vocabulary,
};

fn corpus(n: usize) -> Vec<QAExample> {
    make_toy_corpus(&ToyLanguageSpec::default(), n, 0, 0)
        .unwrap()
        .train
}

#[test]
fn jsonl_errors_name_the_line() {
    let text =
        "{\"id\":\"a\",\"context\":\"x\",\"answer_text\":\"x\",\"answer_start\":0}\n\nnot json\n";
    match parse_jsonl::<QAExample>(text, "f.jsonl") {
        Err(CliError::Data(m)) => assert!(m.starts_with("f.jsonl:3:"), "{m}"),
        other => panic!("{other:?}"),
    }
    assert!(parse_jsonl::<QAExample>("", "empty").unwrap().is_empty());
}

#[test]
fn jsonl_round_trips_a_thousand_examples() {
    let data = corpus(1000);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("sub/train.jsonl");
    save_jsonl(&p, &data).unwrap();
    assert_eq!(load_examples(&p).unwrap(), data);
    assert_eq!(to_jsonl(&data).unwrap().lines().count(), 1000);
}

#[test]
fn load_examples_rejects_bad_offsets() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.jsonl");
    let mut ex = corpus(2);
    ex[1].answer_start += 1;
    save_jsonl(&p, &ex).unwrap();
    match load_examples(&p) {
        Err(CliError::Data(m)) => assert!(m.contains(":2:"), "{m}"),
        other => panic!("{other:?}"),
    }
}

fn squad_json(records: &[(&str, &str, &str, &str, usize)]) -> String {
    let paragraphs: Vec<_> = records
        .iter()
        .map(|(id, ctx, q, a, s)| {
            serde_json::json!({
                "context": ctx,
                "qas": [{"id": id, "question": q, "answers": [{"text": a, "answer_start": s}]}]
            })
        })
        .collect();
    serde_json::json!({"version": "1.1", "data": [{"title": "t", "paragraphs": paragraphs}]})
        .to_string()
}

#[test]
fn squad_single_record() {
    let text = squad_json(&[(
        "q1",
        "Ada was born in Oslo.",
        "Where was Ada born?",
        "Oslo",
        16,
    )]);
    let imp = parse_squad(&text).unwrap();
    assert_eq!(imp.skipped, 0);
    assert_eq!(
        imp.examples,
        vec![QAExample {
            id: "q1".into(),
            context: "Ada was born in Oslo.".into(),
            question: Some("Where was Ada born?".into()),
            answer_text: "Oslo".into(),
            answer_start: 16,
        }]
    );
}

#[test]
fn squad_offset_mismatch_is_skipped() {
    let text = squad_json(&[("q1", "Ada was born in Oslo.", "Where?", "Oslo", 3)]);
    let imp = parse_squad(&text).unwrap();
    assert!(imp.examples.is_empty());
    assert_eq!(imp.skipped, 1);
}

#[test]
fn squad_fifty_records_round_trip() {
    let data = corpus(50);
    let recs: Vec<_> = data
        .iter()
        .map(|e| {
            (
                e.id.as_str(),
                e.context.as_str(),
                e.question.as_deref().unwrap(),
                e.answer_text.as_str(),
                e.answer_start,
            )
        })
        .collect();
    let imp = parse_squad(&squad_json(&recs)).unwrap();
    assert_eq!(imp.examples, data);
}

fn small_qg(seed: u64) -> QgModel {
    let cfg = QgConfig {
        word_dim: 8,
        answer_dim: 2,
        pos_dim: 2,
        ner_dim: 2,
        hidden: 8,
        layers: 1,
        ..Default::default()
    };
    QgModel::new(cfg, vocab_from_examples(&corpus(5), 1), seed).unwrap()
}

#[test]
fn checkpoints_resave_byte_identically() {
    let qg = small_qg(3);
    let bytes = to_bytes(&qg).unwrap();
    let back: QgModel = from_bytes(&bytes).unwrap();
    assert_eq!(to_bytes(&back).unwrap(), bytes);
    assert_eq!(back.vocab, qg.vocab);
    assert_eq!(back.config, qg.config);

    let vocab = vocab_from_examples(&corpus(5), 1);
    let qa = QaModel::new(
        QaConfig {
            hidden: 4,
            word_dim: 4,
            ner_dim: 2,
            ..Default::default()
        },
        vocab.clone(),
        1,
    )
    .unwrap();
    let b = to_bytes(&qa).unwrap();
    assert_eq!(to_bytes(&from_bytes::<QaModel>(&b).unwrap()).unwrap(), b);
    let qpc = QpcModel::new(
        QpcConfig {
            hidden: 4,
            word_dim: 4,
            mlp_hidden: 4,
            layers: 1,
            ..Default::default()
        },
        vocab,
        1,
    )
    .unwrap();
    let b = to_bytes(&qpc).unwrap();
    assert_eq!(to_bytes(&from_bytes::<QpcModel>(&b).unwrap()).unwrap(), b);
}

#[test]
fn checkpoint_kind_and_truncation_are_checked() {
    let bytes = to_bytes(&small_qg(1)).unwrap();
    assert!(
        matches!(from_bytes::<QaModel>(&bytes), Err(CliError::Data(m)) if m.contains("wrong checkpoint kind"))
    );
    assert!(from_bytes::<QgModel>(&bytes[..bytes.len() - 3]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(from_bytes::<QgModel>(&extra).is_err());
}

#[test]
fn toy_spec_round_trips() {
    let spec = ToyLanguageSpec {
        seed: 42,
        ..Default::default()
    };
    assert_eq!(parse_toy_spec(&render_toy_spec(&spec)).unwrap(), spec);
    let custom = parse_toy_spec(
        "# tiny\nseed = 5\nfacts_per_context = 1\nnames = Ada Bo\nfact born = {person} was born in {city} in {year}.\n\
         question born person = Who was born in {city}?\nquestion born year = When was {person} born?\n",
    )
    .unwrap();
    assert_eq!(custom.seed, 5);
    assert_eq!(custom.names, vec!["Ada", "Bo"]);
    assert_eq!(custom.facts.len(), 1);
    assert_eq!(custom.facts[0].questions.len(), 2);
    assert!(
        matches!(parse_toy_spec("colour = red"), Err(CliError::Data(m)) if m.contains("line 1"))
    );
    assert!(parse_toy_spec("question nope person = Who?").is_err());
}

#[test]
fn embeddings_fill_matching_rows() {
    let table = parse_embeddings("3 2\nCat 1 2\ndog 3 4\nfish 5 6\n").unwrap();
    assert_eq!(table.dim, 2);
    assert_eq!(table.vectors["cat"], vec![1.0, 2.0]);
    assert!(parse_embeddings("a 1 2\nb 1\n").is_err());
    assert!(parse_embeddings("").is_err());

    let vocab = Vocabulary::build(["cat", "bird"], 1);
    let mut qa = QaModel::new(
        QaConfig {
            word_dim: 2,
            ..Default::default()
        },
        vocab.clone(),
        0,
    )
    .unwrap();
    let hits = apply_embeddings(&mut qa.params, "qa.embed.word", &vocab, &table).unwrap();
    assert_eq!(hits, 1);
    let id = qa.params.id("qa.embed.word").unwrap();
    let row = vocab.get("cat").unwrap();
    assert_eq!(&qa.params.get(id).data()[2 * row..2 * row + 2], &[1.0, 2.0]);
    assert!(apply_embeddings(&mut qa.params, "qa.nope", &vocab, &table).is_err());
}

#[test]
fn load_examples_reads_squad_json() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("train.json");
    let text = squad_json(&[
        ("q1", "Ada was born in Oslo.", "Where?", "Oslo", 16),
        ("q2", "Bo ran.", "Who?", "Bo", 3),
    ]);
    std::fs::write(&p, text).unwrap();
    let ex = load_examples(&p).unwrap();
    assert_eq!(ex.len(), 1);
    assert_eq!(ex[0].id, "q1");
}
