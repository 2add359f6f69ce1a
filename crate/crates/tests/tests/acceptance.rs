//! One pass/fail line per acceptance criterion. Tolerances and thresholds
//! are fixed here; nothing is tuned per run.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use semqg_core::augment::{
    filter, generate_from_new, qap_score_all, FilterConfig, Source, SyntheticExample, EPSILON_GRID,
};
use semqg_core::decode::{beam_search, diverse_beam_search, DecodeConfig, StepModel};
use semqg_core::eval::{
    bleu4, em_f1, qa_based_qg_eval, rouge_l, shuffle_questions, squad_normalize,
    train_and_evaluate_qa, BleuMode, ROUGE_BETA,
};
use semqg_core::model::check::{block_grad_checks, tiny_model};
use semqg_core::model::{QgConfig, QgModel};
use semqg_core::nn::{
    adam_step, AdamConfig, GradCheckOptions, Gradients, Graph, OptimState, RngState,
};
use semqg_core::reward::{train_qa, QaConfig, QaInstance, QaModel, QaTrainData, Reward};
use semqg_core::text::{
    make_toy_corpus, tokenize_all, vocab_from_examples, LexiconTagger, QAExample, ToyCorpus,
    ToyLanguageSpec, BOS,
};
use semqg_core::trainer::{
    audit_mixing, mean_greedy_reward, prepare_items, rl_step, teacher_forced_accuracy, train_rl,
    train_teacher_forcing, MixingAudit, MixingIterator, RewardMix, TrainConfig,
};
use semqg_tests::{mean, run, selected, Outcome};

const SEEDS: [u64; 3] = [1, 2, 3];

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn c1_grad_checks() -> (bool, String) {
    let t0 = Instant::now();
    let opts = GradCheckOptions::default();
    let (mut blocks, mut failed, mut worst) = (0, 0, 0.0f64);
    for seed in 0..10 {
        for b in block_grad_checks(seed, &opts).unwrap() {
            blocks += 1;
            let err = b.report.max_rel_error();
            worst = worst.max(err);
            if err.is_nan() || err >= 1e-4 {
                failed += 1;
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    (
        failed == 0 && secs < 120.0 && opts.tolerance <= 1e-4,
        format!("{blocks} block checks over 10 seeds, {failed} failed, max rel err {worst:.2e} (< 1e-4), {secs:.1}s (< 120s)"),
    )
}

fn c2_normalization() -> (bool, String) {
    let (mut rows, mut worst) = (0usize, 0.0f64);
    for seed in 0..1000u64 {
        let (m, src, target) = tiny_model(seed, seed % 2 == 0).unwrap();
        let mut g = Graph::new(&m.params, false);
        let mut rng = RngState::new(seed);
        let enc = m.encode_source(&mut g, &src, &mut rng).unwrap();
        let mut check = |xs: Vec<f64>| {
            rows += 1;
            worst = worst.max((xs.iter().sum::<f64>() - 1.0).abs());
        };
        for &r in &enc.self_attn {
            check(g.value(r).to_vec());
        }
        let mut state = enc.init;
        let mut prev = BOS;
        for &t in &target {
            let (out, next) = m
                .decode_step(&mut g, &enc.hhat, &src, &state, prev, &mut rng)
                .unwrap();
            check(g.value(out.attn).to_vec());
            let d = g.value(out.dist);
            check(if out.is_prob {
                d.to_vec()
            } else {
                d.iter().map(|x| x.exp()).collect()
            });
            state = next;
            prev = t;
        }
    }
    (
        worst <= 1e-6,
        format!("1000 configs, {rows} distributions, max |sum - 1| = {worst:.2e} (<= 1e-6)"),
    )
}

fn c3_memorization() -> (bool, String) {
    let spec = ToyLanguageSpec::default();
    let c = make_toy_corpus(&spec, 200, 0, 0).unwrap();
    let vocab = vocab_from_examples(&c.train, 1);
    let train = tokenize_all(&c.train, &vocab, &spec.tagger()).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let t0 = Instant::now();
        let mut m = QgModel::new(QgConfig::default(), vocab.clone(), seed).unwrap();
        let tc = TrainConfig {
            max_epochs: 200,
            patience: 200,
            target_train_accuracy: Some(0.95),
            seed,
            ..Default::default()
        };
        let r = train_teacher_forcing(&mut m, &train, &[], &tc, &mut |_| {}).unwrap();
        let acc = teacher_forced_accuracy(&m, &prepare_items(&m, &train).unwrap()).unwrap();
        let secs = t0.elapsed().as_secs_f64();
        ok &= acc >= 0.95 && r.epochs_run <= 200 && secs < 300.0;
        parts.push(format!(
            "seed {seed}: acc {acc:.3} after {} epochs in {secs:.0}s",
            r.epochs_run
        ));
    }
    (
        ok,
        format!(
            "{} (need >= 0.95, <= 200 epochs, < 300s each)",
            parts.join("; ")
        ),
    )
}

fn c4_metric_oracles() -> (bool, String) {
    let mut fails = Vec::new();
    let b = bleu4(&[toks("a b c d")], &[toks("a b c e")], BleuMode::Corpus).unwrap();
    if b.precisions != [3.0 / 4.0, 2.0 / 3.0, 1.0 / 2.0, 0.0] || b.score != 0.0 {
        fails.push(format!("bleu {:?} {}", b.precisions, b.score));
    }
    let (em, f1) = em_f1("cat sat on", &["the cat sat"]);
    if em != 0.0 || (f1 - 0.8).abs() > 1e-12 {
        fails.push(format!("em/f1 {em} {f1}"));
    }
    let (p, r, b2) = (1.0, 2.0 / 3.0, ROUGE_BETA * ROUGE_BETA);
    let want = 100.0 * (1.0 + b2) * p * r / (r + b2 * p);
    let got = rouge_l(&toks("a c"), &toks("a b c"));
    if ROUGE_BETA != 1.2 || (got - want).abs() > 1e-12 {
        fails.push(format!("rouge-l {got} vs {want}"));
    }
    for (raw, norm) in [("The Cat", "cat"), ("cat", "cat"), ("a, an, the", "")] {
        if squad_normalize(raw) != norm {
            fails.push(format!("normalize {raw:?} -> {:?}", squad_normalize(raw)));
        }
    }
    if em_f1("The Cat", &["dog", "cat"]) != (1.0, 1.0) {
        fails.push("em over multiple golds".into());
    }
    let detail = if fails.is_empty() {
        "BLEU4 = 0 with p = 3/4, 2/3, 1/2, 0; F1 = 0.8; ROUGE-L beta 1.2; normalization".into()
    } else {
        fails.join("; ")
    };
    (fails.is_empty(), detail)
}

/// Next-token table indexed by position and previous token; EOS is 0 and
/// BOS is `vocab`.
struct TableModel {
    vocab: usize,
    table: Vec<Vec<Vec<f64>>>,
}

impl TableModel {
    fn random(vocab: usize, max_len: usize, rng: &mut RngState) -> Self {
        let table = (0..max_len)
            .map(|_| {
                (0..=vocab)
                    .map(|_| {
                        let logits: Vec<f64> = (0..vocab)
                            .map(|_| 2.0 * rng.uniform_in(-1.0, 1.0))
                            .collect();
                        let z = logits.iter().map(|l| l.exp()).sum::<f64>().ln();
                        logits.iter().map(|l| l - z).collect()
                    })
                    .collect()
            })
            .collect();
        Self { vocab, table }
    }

    /// Every complete sequence (ends in EOS or hits `max_len`), best first.
    fn exhaustive(&self, max_len: usize) -> Vec<(Vec<usize>, f64)> {
        let mut out = Vec::new();
        let mut stack = vec![(Vec::new(), 0.0f64)];
        while let Some((seq, score)) = stack.pop() {
            let prev = seq.last().copied().unwrap_or(self.vocab);
            for tok in 0..self.vocab {
                let mut s = seq.clone();
                s.push(tok);
                let sc = score + self.table[seq.len()][prev][tok];
                if tok == 0 || s.len() == max_len {
                    out.push((s, sc));
                } else {
                    stack.push((s, sc));
                }
            }
        }
        out.sort_by(|a, b| b.1.total_cmp(&a.1));
        out
    }
}

impl StepModel for TableModel {
    type State = usize;

    fn initial_state(&self) -> usize {
        0
    }

    fn bos(&self) -> usize {
        self.vocab
    }

    fn eos(&self) -> usize {
        0
    }

    fn step(&self, t: &usize, prev: usize) -> semqg_core::Result<(Vec<f64>, usize)> {
        Ok((self.table[*t][prev].clone(), t + 1))
    }
}

fn c5_beam_exhaustive() -> (bool, String) {
    let mut rng = RngState::new(2024);
    let mut per_k = [0usize; 4];
    let mut identical = 0;
    for _ in 0..50 {
        let m = TableModel::random(5, 4, &mut rng);
        let all = m.exhaustive(4);
        for k in 1..=4 {
            let cfg = DecodeConfig {
                beam: k,
                max_len: 4,
                diversity: 0.0,
                block_ngram: 0,
            };
            let got: Vec<Vec<usize>> = beam_search(&m, &cfg)
                .unwrap()
                .into_iter()
                .map(|h| h.tokens)
                .collect();
            let want: Vec<Vec<usize>> = all.iter().take(k).map(|(s, _)| s.clone()).collect();
            if got == want {
                per_k[k - 1] += 1;
            }
        }
        let cfg = DecodeConfig {
            beam: 4,
            max_len: 4,
            diversity: 0.0,
            block_ngram: 0,
        };
        let plain = beam_search(&m, &cfg).unwrap();
        let div = diverse_beam_search(&m, &cfg).unwrap();
        let bits = |hs: &[semqg_core::decode::Hypothesis]| {
            hs.iter()
                .map(|h| {
                    (
                        h.tokens.clone(),
                        h.log_prob.to_bits(),
                        h.step_log_probs
                            .iter()
                            .map(|x| x.to_bits())
                            .collect::<Vec<_>>(),
                    )
                })
                .collect::<Vec<_>>()
        };
        if bits(&plain) == bits(&div) && plain == div {
            identical += 1;
        }
    }
    let matched: usize = per_k.iter().sum();
    (
        matched == 200 && identical == 50,
        format!(
            "beam == exhaustive top-k for k=1..4: {}/50, {}/50, {}/50, {}/50; diverse(0) bit-identical {identical}/50",
            per_k[0], per_k[1], per_k[2], per_k[3]
        ),
    )
}

fn c6_scst() -> (bool, String) {
    // bit-zero update on a small fresh model
    let spec = ToyLanguageSpec::default();
    let small = make_toy_corpus(&spec, 24, 0, 0).unwrap();
    let sv = vocab_from_examples(&small.train, 1);
    let stok = tokenize_all(&small.train, &sv, &spec.tagger()).unwrap();
    let scfg = QgConfig {
        word_dim: 8,
        answer_dim: 2,
        pos_dim: 2,
        ner_dim: 2,
        hidden: 8,
        layers: 1,
        dropout: 0.0,
        ..Default::default()
    };
    let sm = QgModel::new(scfg, sv, 4).unwrap();
    let items = prepare_items(&sm, &stok).unwrap();
    let mut rng = RngState::new(1);
    let (mut zero_adv, mut bit_zero) = (0, 0);
    for (it, ex) in items.iter().zip(&stok) {
        let mut grads = Gradients::zeros_like(&sm.params);
        let out = rl_step(
            &sm,
            it,
            ex,
            &Reward::WhMatch,
            1.0,
            true,
            &mut rng,
            &mut grads,
            1.0,
        )
        .unwrap();
        if out.advantage() == 0.0 {
            zero_adv += 1;
            let mut params = sm.params.clone();
            let mut opt = OptimState::new(
                &params,
                AdamConfig {
                    lr: 1e-4,
                    ..Default::default()
                },
            );
            adam_step(&mut params, &grads, &mut opt).unwrap();
            let same = params
                .entries()
                .iter()
                .zip(sm.params.entries())
                .all(|(a, b)| {
                    a.tensor
                        .data()
                        .iter()
                        .zip(b.tensor.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
                });
            if grads.is_all_zero() && out.loss == 0.0 && same {
                bit_zero += 1;
            }
        }
    }

    // wh-reward gain over the teacher-forced checkpoint
    let t0 = Instant::now();
    let c = make_toy_corpus(&spec, 200, 200, 0).unwrap();
    let vocab = vocab_from_examples(&c.train, 1);
    let tagger = spec.tagger();
    let train = tokenize_all(&c.train, &vocab, &tagger).unwrap();
    let dev = tokenize_all(&c.dev, &vocab, &tagger).unwrap();
    let (sel, rep) = dev.split_at(100);
    let mut gains = Vec::new();
    for seed in SEEDS {
        let mut m = QgModel::new(QgConfig::default(), vocab.clone(), seed).unwrap();
        let tc = TrainConfig {
            max_epochs: 2,
            seed,
            ..Default::default()
        };
        train_teacher_forcing(&mut m, &train, &[], &tc, &mut |_| {}).unwrap();
        let rep_items = prepare_items(&m, rep).unwrap();
        let before = mean_greedy_reward(&m, &rep_items, rep, &Reward::WhMatch).unwrap();
        let rc = TrainConfig {
            max_epochs: 80,
            patience: 50,
            lr_rl: 1e-4,
            seed,
            ..Default::default()
        };
        let mixes = [RewardMix {
            reward: Reward::WhMatch,
            gamma: 1.0,
            run: 1,
        }];
        train_rl(&mut m, &train, sel, &mixes, &rc, &mut |_| {}).unwrap();
        let after = mean_greedy_reward(&m, &rep_items, rep, &Reward::WhMatch).unwrap();
        gains.push(after - before);
    }
    let secs = t0.elapsed().as_secs_f64();
    let gain = mean(&gains);
    (
        zero_adv > 0 && bit_zero == zero_adv && gain >= 0.10 && secs < 600.0,
        format!(
            "zero-advantage updates bit-zero {bit_zero}/{zero_adv}; wh gain per seed {:?}, mean {gain:.3} (>= 0.10), {secs:.0}s (< 600s)",
            gains.iter().map(|g| (g * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    )
}

/// Shared semi-supervised run for one seed.
struct SemiRun {
    qg: QgModel,
    scored: Vec<SyntheticExample>,
    gt_em: f64,
    semi_em: f64,
    best_eps: f64,
    audits: Vec<MixingAudit>,
}

fn qa_instances(xs: &[QAExample], m: &QaModel, tagger: &LexiconTagger) -> Vec<QaInstance> {
    tokenize_all(xs, &m.vocab, tagger)
        .unwrap()
        .iter()
        .map(|t| m.instance(t).unwrap())
        .collect()
}

fn semi_run(c: &ToyCorpus, tagger: &LexiconTagger, seed: u64) -> SemiRun {
    let vocab = vocab_from_examples(&c.train, 1);
    let train = tokenize_all(&c.train, &vocab, tagger).unwrap();
    let dev = tokenize_all(&c.dev, &vocab, tagger).unwrap();
    let mut qg = QgModel::new(QgConfig::default(), vocab.clone(), seed).unwrap();
    let tc = TrainConfig {
        max_epochs: 60,
        patience: 10,
        seed,
        ..Default::default()
    };
    train_teacher_forcing(&mut qg, &train, &dev, &tc, &mut |_| {}).unwrap();

    let qa_cfg = QaConfig::default();
    let mut scorer = QaModel::new(qa_cfg.clone(), vocab, seed).unwrap();
    let gt_i = qa_instances(&c.train, &scorer, tagger);
    let dev_i = qa_instances(&c.dev, &scorer, tagger);
    let gt = train_qa(
        &mut scorer,
        QaTrainData {
            ground_truth: &gt_i,
            synthetic: &[],
        },
        &dev_i,
        seed,
    )
    .unwrap();
    let mut audits = vec![audit_mixing(&gt.batches, gt_i.len(), 0, qa_cfg.batch_size)];

    let new_tok = tokenize_all(&c.unlabeled, &qg.vocab, tagger).unwrap();
    let syn = generate_from_new(
        &qg,
        &c.unlabeled,
        &new_tok,
        &DecodeConfig::default(),
        1,
        "qg",
    )
    .unwrap();
    let scored = qap_score_all(&syn, &scorer, tagger).unwrap();

    let (mut semi_em, mut best_eps) = (f64::NEG_INFINITY, 0.0);
    for eps in EPSILON_GRID {
        let kept = filter(
            &scored,
            &FilterConfig {
                epsilon: eps,
                dedup: true,
            },
        )
        .unwrap();
        let kept: Vec<QAExample> = kept.into_iter().map(|s| s.example).collect();
        let all: Vec<QAExample> = c.train.iter().chain(&kept).cloned().collect();
        let mut qa = QaModel::new(qa_cfg.clone(), vocab_from_examples(&all, 1), seed).unwrap();
        let gt_i = qa_instances(&c.train, &qa, tagger);
        let syn_i = qa_instances(&kept, &qa, tagger);
        let dev_i = qa_instances(&c.dev, &qa, tagger);
        let r = train_qa(
            &mut qa,
            QaTrainData {
                ground_truth: &gt_i,
                synthetic: &syn_i,
            },
            &dev_i,
            seed,
        )
        .unwrap();
        audits.push(audit_mixing(
            &r.batches,
            gt_i.len(),
            syn_i.len(),
            qa_cfg.batch_size,
        ));
        if r.best_dev_em > semi_em {
            semi_em = r.best_dev_em;
            best_eps = eps;
        }
    }
    SemiRun {
        qg,
        scored,
        gt_em: gt.best_dev_em,
        semi_em,
        best_eps,
        audits,
    }
}

fn synthetic_pool(rng: &mut RngState, n: usize) -> Vec<SyntheticExample> {
    (0..n)
        .map(|i| {
            let ctx = rng.below(4);
            let q = rng.below(6);
            SyntheticExample {
                example: QAExample {
                    id: format!("s{i}"),
                    context: format!("ctx {ctx} words"),
                    question: Some(format!("who is q{q} ?")),
                    answer_text: "ctx".into(),
                    answer_start: 0,
                },
                qap_score: Some(match rng.below(4) {
                    0 => EPSILON_GRID[rng.below(5)],
                    _ => rng.uniform_in(0.0, 1.0),
                }),
                source: Source::New,
                beam_rank: 1 + rng.below(3),
                generator_id: "pool".into(),
                gold_question: (rng.below(5) == 0).then(|| format!("Who is q{q} ?")),
            }
        })
        .collect()
}

/// Nesting, identity at zero and idempotence; returns the violations.
fn filter_violations(syn: &[SyntheticExample]) -> Vec<String> {
    let mut bad = Vec::new();
    let ids = |xs: &[SyntheticExample]| {
        xs.iter()
            .map(|s| s.example.id.clone())
            .collect::<std::collections::BTreeSet<_>>()
    };
    for dedup in [true, false] {
        let kept: Vec<_> = EPSILON_GRID
            .iter()
            .map(|&epsilon| filter(syn, &FilterConfig { epsilon, dedup }).unwrap())
            .collect();
        for (i, w) in kept.windows(2).enumerate() {
            if !ids(&w[1]).is_subset(&ids(&w[0])) {
                bad.push(format!(
                    "dedup={dedup}: eps {} not within eps {}",
                    EPSILON_GRID[i + 1],
                    EPSILON_GRID[i]
                ));
            }
        }
        for (k, &epsilon) in kept.iter().zip(&EPSILON_GRID) {
            if filter(k, &FilterConfig { epsilon, dedup }).unwrap() != *k {
                bad.push(format!("dedup={dedup}: eps {epsilon} not idempotent"));
            }
        }
    }
    if filter(
        syn,
        &FilterConfig {
            epsilon: 0.0,
            dedup: false,
        },
    )
    .unwrap()
        != syn
    {
        bad.push("eps 0 without dedup is not the identity".into());
    }
    bad
}

fn c7_filter(semi: &[SemiRun]) -> (bool, String) {
    let mut rng = RngState::new(77);
    let mut bad = Vec::new();
    let mut sets = 0;
    for n in [0, 1, 10, 200, 1000] {
        bad.extend(filter_violations(&synthetic_pool(&mut rng, n)));
        sets += 1;
    }
    for s in semi {
        bad.extend(filter_violations(&s.scored));
        sets += 1;
    }
    let detail = if bad.is_empty() {
        format!(
            "{sets} synthetic sets on grid {EPSILON_GRID:?}: nested, eps 0 identity, idempotent"
        )
    } else {
        bad.join("; ")
    };
    (bad.is_empty(), detail)
}

fn c8_mixing(semi: &[SemiRun]) -> (bool, String) {
    let mut audits: Vec<MixingAudit> = semi.iter().flat_map(|s| s.audits.iter().cloned()).collect();
    let runs = audits.len();
    for gt in [1, 7, 32, 200] {
        for syn in [0, 1, 50, 400] {
            for b in [1, 2, 8, 32] {
                if syn > 0 && b < 2 {
                    // no room for both pools; the iterator rejects it
                    assert!(MixingIterator::new(gt, syn, b, 0).is_err());
                    continue;
                }
                let mut it = MixingIterator::new(gt, syn, b, gt as u64 * 31 + syn as u64).unwrap();
                let batches: Vec<_> = (0..3).flat_map(|_| it.next_epoch()).collect();
                audits.push(audit_mixing(&batches, gt, syn, b));
            }
        }
    }
    let batches: usize = audits.iter().map(|a| a.batches).sum();
    let rule: usize = audits.iter().map(|a| a.rule_violations).sum();
    let cover: usize = audits.iter().map(|a| a.coverage_violations).sum();
    let failed = audits.iter().filter(|a| !a.passed()).count();
    (
        failed == 0,
        format!("{runs} training runs + {} iterator grids, {batches} batches: {rule} rule violations, {cover} coverage violations", audits.len() - runs),
    )
}

fn c9_semi(semi: &[SemiRun]) -> (bool, String) {
    let gt: Vec<f64> = semi.iter().map(|s| s.gt_em).collect();
    let sm: Vec<f64> = semi.iter().map(|s| s.semi_em).collect();
    let eps: Vec<f64> = semi.iter().map(|s| s.best_eps).collect();
    (
        mean(&sm) >= mean(&gt),
        format!("dev EM GT-only {gt:.1?} mean {:.2}; GT+filtered {sm:.1?} mean {:.2} (best eps {eps:?})", mean(&gt), mean(&sm)),
    )
}

fn c10_qa_based(c: &ToyCorpus, tagger: &LexiconTagger, semi: &[SemiRun]) -> (bool, String) {
    let vocab = vocab_from_examples(&c.train, 1);
    let train = tokenize_all(&c.train, &vocab, tagger).unwrap();
    let dev = tokenize_all(&c.dev, &vocab, tagger).unwrap();
    let (dc, qa_cfg) = (DecodeConfig::default(), QaConfig::default());
    let (mut conv, mut early, mut gt, mut sh) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (s, seed) in semi.iter().zip(SEEDS) {
        conv.push(
            qa_based_qg_eval(&s.qg, &c.unlabeled, &c.dev, &dc, &qa_cfg, tagger, seed)
                .unwrap()
                .em,
        );
        let mut one = QgModel::new(QgConfig::default(), vocab.clone(), seed).unwrap();
        let tc = TrainConfig {
            max_epochs: 1,
            seed,
            ..Default::default()
        };
        train_teacher_forcing(&mut one, &train, &dev, &tc, &mut |_| {}).unwrap();
        early.push(
            qa_based_qg_eval(&one, &c.unlabeled, &c.dev, &dc, &qa_cfg, tagger, seed)
                .unwrap()
                .em,
        );
        gt.push(
            train_and_evaluate_qa(&c.train, &c.dev, &qa_cfg, tagger, seed)
                .unwrap()
                .em,
        );
        let shuffled = shuffle_questions(&c.train, seed).unwrap();
        sh.push(
            train_and_evaluate_qa(&shuffled, &c.dev, &qa_cfg, tagger, seed)
                .unwrap()
                .em,
        );
    }
    (
        mean(&conv) > mean(&early) && mean(&gt) >= mean(&sh),
        format!(
            "EM converged {conv:.1?} mean {:.2} vs 1-epoch {early:.1?} mean {:.2}; oracle GT {:.2} vs shuffled {:.2}",
            mean(&conv),
            mean(&early),
            mean(&gt),
            mean(&sh)
        ),
    )
}

const TINY: &str = r#"{
  "train-qg": {"model": {"word_dim": 8, "answer_dim": 2, "pos_dim": 2, "ner_dim": 2, "hidden": 8, "layers": 1},
               "train": {"max_epochs": 1}, "rl_epochs": 1},
  "train-qa": {"model": {"word_dim": 8, "ner_dim": 2, "hidden": 8, "max_epochs": 1}},
  "train-qa-semi": {"model": {"word_dim": 8, "ner_dim": 2, "hidden": 8, "max_epochs": 1}},
  "train-qpc": {"model": {"word_dim": 8, "hidden": 8, "layers": 1, "mlp_hidden": 8, "max_epochs": 1}},
  "qa-based-eval": {"qa": {"word_dim": 8, "ner_dim": 2, "hidden": 8, "max_epochs": 1}}
}"#;

fn cli_pipeline(d: &Path) -> Result<(), String> {
    let p = |name: &str| d.join(name).to_str().unwrap().to_string();
    let cfg = p("tiny.json");
    let spec = p("data/toy.spec");
    let steps: Vec<Vec<String>> = vec![
        vec!["make-toy-data", "--out", &p("data"), "--train", "30", "--dev", "10", "--unlabeled", "10", "--pairs", "40"]
            .into_iter()
            .map(String::from)
            .collect(),
        format!("--toy-spec {spec} train-qg --train {} --dev {} --out {}", p("data/train.jsonl"), p("data/dev.jsonl"), p("qg.ckpt"))
            .split(' ')
            .map(String::from)
            .collect(),
        format!("--toy-spec {spec} train-qa --train {} --dev {} --out {}", p("data/train.jsonl"), p("data/dev.jsonl"), p("qa.ckpt"))
            .split(' ')
            .map(String::from)
            .collect(),
        format!("--toy-spec {spec} train-qpc --pairs {} --out {}", p("data/pairs.jsonl"), p("qpc.ckpt"))
            .split(' ')
            .map(String::from)
            .collect(),
        format!(
            "--toy-spec {spec} train-qg --train {} --dev {} --init {} --out {} --reward qpp+qap --qpc {} --qa {} --alt-rate 3:1",
            p("data/train.jsonl"),
            p("data/dev.jsonl"),
            p("qg.ckpt"),
            p("qg_rl.ckpt"),
            p("qpc.ckpt"),
            p("qa.ckpt")
        )
        .split(' ')
        .map(String::from)
        .collect(),
        format!(
            "generate --qg {} --input {} --source new --out {} --qa {} --beam 3",
            p("qg_rl.ckpt"),
            p("data/unlabeled.jsonl"),
            p("syn.jsonl"),
            p("qa.ckpt")
        )
        .split(' ')
        .map(String::from)
        .collect(),
        format!(
            "generate --qg {} --input {} --source existing --out {} --beam 2 --diverse",
            p("qg_rl.ckpt"),
            p("data/train.jsonl"),
            p("existing.jsonl")
        )
        .split(' ')
        .map(String::from)
        .collect(),
        format!("filter --input {} --out {} --epsilon 0.4", p("syn.jsonl"), p("kept.jsonl")).split(' ').map(String::from).collect(),
        format!("filter --input {} --out {} --sweep", p("syn.jsonl"), p("sweep")).split(' ').map(String::from).collect(),
        format!(
            "--toy-spec {spec} train-qa-semi --train {} --synthetic {} --dev {} --out {}",
            p("data/train.jsonl"),
            p("syn.jsonl"),
            p("data/dev.jsonl"),
            p("qa_semi.ckpt")
        )
        .split(' ')
        .map(String::from)
        .collect(),
        format!(
            "eval-qg --qg {} --data {} --qpc {} --qa {} --out {} --beam 2",
            p("qg_rl.ckpt"),
            p("data/dev.jsonl"),
            p("qpc.ckpt"),
            p("qa.ckpt"),
            p("eval_qg.json")
        )
        .split(' ')
        .map(String::from)
        .collect(),
        format!("eval-qa --qa {} --data {} --out {}", p("qa_semi.ckpt"), p("data/dev.jsonl"), p("eval_qa.json"))
            .split(' ')
            .map(String::from)
            .collect(),
        format!(
            "--toy-spec {spec} qa-based-eval --qg {} --unlabeled {} --dev {} --out {} --beam 2",
            p("qg_rl.ckpt"),
            p("data/unlabeled.jsonl"),
            p("data/dev.jsonl"),
            p("qbe.json")
        )
        .split(' ')
        .map(String::from)
        .collect(),
        format!("grad-check --seeds 1 --out {}", p("grad.json")).split(' ').map(String::from).collect(),
    ];
    for step in steps {
        let mut args: Vec<String> = vec![
            "semqg".into(),
            "--seed".into(),
            "5".into(),
            "--config".into(),
            cfg.clone(),
        ];
        args.extend(step);
        semqg::cli::run_from(&args).map_err(|e| format!("{}: {e}", args[5..].join(" ")))?;
    }
    Ok(())
}

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path
                .strip_prefix(root)
                .unwrap()
                .to_string_lossy()
                .into_owned();
            let mut bytes = std::fs::read(&path).unwrap();
            if rel.ends_with("manifest.json") {
                let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                v.as_object_mut().unwrap().remove("created");
                bytes = serde_json::to_vec(&v).unwrap();
            }
            out.insert(rel, bytes);
        }
    }
    out
}

fn clear_outputs(root: &Path) {
    for e in std::fs::read_dir(root).unwrap() {
        let path = e.unwrap().path();
        if path.file_name().is_some_and(|n| n == "tiny.json") {
            continue;
        }
        if path.is_dir() {
            std::fs::remove_dir_all(&path).unwrap();
        } else {
            std::fs::remove_file(&path).unwrap();
        }
    }
}

fn c11_cli_determinism() -> (bool, String) {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("tiny.json"), TINY).unwrap();
    if let Err(e) = cli_pipeline(d) {
        return (false, format!("first run failed: {e}"));
    }
    let first = snapshot(d);
    clear_outputs(d);
    if let Err(e) = cli_pipeline(d) {
        return (false, format!("second run failed: {e}"));
    }
    let second = snapshot(d);
    let manifests = first
        .keys()
        .filter(|k| k.ends_with("manifest.json"))
        .count();
    let differ: Vec<&String> = first
        .keys()
        .chain(second.keys())
        .filter(|k| first.get(*k) != second.get(*k))
        .collect();
    (
        differ.is_empty() && manifests > 0,
        if differ.is_empty() {
            format!(
                "14 commands run twice: {} files ({manifests} manifests) byte-identical",
                first.len()
            )
        } else {
            format!("differing files: {differ:?}")
        },
    )
}

fn main() {
    let t0 = Instant::now();
    let mut outcomes: Vec<Outcome> = Vec::new();
    let mut go = |id: usize, name: &'static str, f: &mut dyn FnMut() -> (bool, String)| {
        if selected(id) {
            outcomes.push(run(id, name, f));
        }
    };
    go(1, "gradient checks", &mut c1_grad_checks);
    go(2, "normalization", &mut c2_normalization);
    go(3, "memorization", &mut c3_memorization);
    go(4, "metric oracles", &mut c4_metric_oracles);
    go(5, "beam vs exhaustive", &mut c5_beam_exhaustive);
    go(6, "self-critical RL", &mut c6_scst);

    let spec = ToyLanguageSpec::default();
    let tagger = spec.tagger();
    let corpus = make_toy_corpus(&spec, 200, 100, 400).unwrap();
    let semi: Vec<SemiRun> = if (7..=10).any(selected) {
        let ts = Instant::now();
        let runs: Vec<SemiRun> = SEEDS
            .iter()
            .map(|&s| semi_run(&corpus, &tagger, s))
            .collect();
        println!(
            "     shared semi-supervised runs for seeds {SEEDS:?}: {:.0}s",
            ts.elapsed().as_secs_f64()
        );
        runs
    } else {
        Vec::new()
    };
    go(7, "filter nesting", &mut || c7_filter(&semi));
    go(8, "mixing audit", &mut || c8_mixing(&semi));
    go(9, "semi-supervised QA", &mut || c9_semi(&semi));
    go(10, "QA-based QG eval", &mut || {
        c10_qa_based(&corpus, &tagger, &semi)
    });
    go(11, "CLI determinism", &mut c11_cli_determinism);

    let failed: Vec<usize> = outcomes
        .iter()
        .filter(|o| !o.passed)
        .map(|o| o.id)
        .collect();
    println!(
        "acceptance: {} passed, {} failed {:?} in {:.0}s",
        outcomes.len() - failed.len(),
        failed.len(),
        failed,
        t0.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
