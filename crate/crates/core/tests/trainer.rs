use semqg_core::decode::{sample_decode, QgStepper};
use semqg_core::model::{QgConfig, QgModel};
use semqg_core::nn::{Gradients, Graph, RngState};
use semqg_core::reward::Reward;
use semqg_core::text::*;
use semqg_core::trainer::*;

fn small() -> (QgModel, Vec<TokenizedExample>) {
    let spec = ToyLanguageSpec::default();
    let c = make_toy_corpus(&spec, 24, 0, 0).unwrap();
    let vocab = vocab_from_examples(&c.train, 1);
    let tok = tokenize_all(&c.train, &vocab, &spec.tagger()).unwrap();
    let cfg = QgConfig {
        word_dim: 8,
        answer_dim: 2,
        pos_dim: 2,
        ner_dim: 2,
        hidden: 8,
        layers: 1,
        dropout: 0.0,
        copy: true,
        max_question_len: 8,
    };
    (QgModel::new(cfg, vocab, 4).unwrap(), tok)
}

fn sample_lp_mean(model: &QgModel, item: &TfItem, sample: &[usize]) -> f64 {
    let mut g = Graph::new(&model.params, false);
    let lps = model
        .forward_teacher_forced(&mut g, &item.src, sample, &mut RngState::new(0))
        .unwrap();
    lps.iter().map(|&v| g.scalar(v)).sum::<f64>() / lps.len() as f64
}

#[test]
fn zero_advantage_gives_bit_zero_gradient() {
    let (model, tok) = small();
    let items = prepare_items(&model, &tok).unwrap();
    let mut rng = RngState::new(1);
    let mut seen = 0;
    for (it, ex) in items.iter().zip(&tok) {
        let mut grads = Gradients::zeros_like(&model.params);
        let out = rl_step(
            &model,
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
            seen += 1;
            assert!(grads.is_all_zero());
            assert_eq!(out.loss, 0.0);
        }
    }
    assert!(seen > 0);
}

#[test]
fn rl_loss_matches_sampled_log_probs() {
    let (model, tok) = small();
    let items = prepare_items(&model, &tok).unwrap();
    let mut rng = RngState::new(2);
    for it in items.iter().take(5) {
        let stepper = QgStepper::new(&model, &it.src).unwrap();
        let s = sample_decode(&stepper, 8, 0, &mut rng).unwrap();
        let mean = s.step_log_probs.iter().sum::<f64>() / s.tokens.len() as f64;
        let mut g = Graph::new(&model.params, false);
        let l = rl_loss(&mut g, &model, it, &s.tokens, 0.5, true).unwrap();
        assert!((g.scalar(l) - (-0.5 * mean)).abs() < 1e-9);
        let mut g = Graph::new(&model.params, false);
        let l = rl_loss(&mut g, &model, it, &s.tokens, 2.0, false).unwrap();
        assert!((g.scalar(l) - (-2.0 * s.log_prob)).abs() < 1e-9);
    }
}

#[test]
fn mixed_loss_endpoints_are_exact() {
    let (model, _) = small();
    let mut g = Graph::new(&model.params, false);
    let ml = g.input(&[1.75]);
    let rl = g.input(&[-0.3]);
    let a = mixed_loss(&mut g, ml, rl, 0.0).unwrap();
    let b = mixed_loss(&mut g, ml, rl, 1.0).unwrap();
    let c = mixed_loss(&mut g, ml, rl, 0.25).unwrap();
    assert_eq!(g.scalar(a), 1.75);
    assert_eq!(g.scalar(b), -0.3);
    assert!((g.scalar(c) - (0.25 * -0.3 + 0.75 * 1.75)).abs() < 1e-15);
    assert!(mixed_loss(&mut g, ml, rl, 1.5).is_err());
    assert_eq!(mixed_loss_value(2.0, 4.0, 0.5).unwrap(), 3.0);
}

#[test]
fn positive_advantage_raises_sample_likelihood() {
    let (mut model, tok) = small();
    let items = prepare_items(&model, &tok).unwrap();
    let it = &items[0];
    let stepper = QgStepper::new(&model, &it.src).unwrap();
    let s = sample_decode(&stepper, 8, 0, &mut RngState::new(3)).unwrap();
    let before = sample_lp_mean(&model, it, &s.tokens);
    let mut g = Graph::new(&model.params, false);
    let l = rl_loss(&mut g, &model, it, &s.tokens, 1.0, true).unwrap();
    let mut grads = Gradients::zeros_like(&model.params);
    g.backward_scaled(l, 1.0, &mut grads).unwrap();
    for id in model.params.ids().collect::<Vec<_>>() {
        if !grads.tracks(id) {
            continue;
        }
        let gr = grads.get(id).to_vec();
        for (p, d) in model.params.get_mut(id).data_mut().iter_mut().zip(gr) {
            *p -= 1e-2 * d;
        }
    }
    let after = sample_lp_mean(&model, it, &s.tokens);
    assert!(after > before, "{before} -> {after}");
}

#[test]
fn teacher_forcing_is_deterministic_and_learns() {
    let run = || {
        let (mut model, tok) = small();
        let cfg = TrainConfig {
            max_epochs: 4,
            batch_size: 8,
            seed: 7,
            ..Default::default()
        };
        let mut losses = Vec::new();
        let rep = train_teacher_forcing(&mut model, &tok, &[], &cfg, &mut |r| {
            losses.push(r.train_loss)
        })
        .unwrap();
        (model.params, rep.epochs_run, losses)
    };
    let (p1, n1, l1) = run();
    let (p2, n2, l2) = run();
    assert_eq!(p1, p2);
    assert_eq!((n1, &l1), (n2, &l2));
    assert!(l1.last().unwrap() < l1.first().unwrap());
}

#[test]
fn train_config_rejects_bad_values() {
    assert!(TrainConfig::default().validate().is_ok());
    assert!(TrainConfig {
        batch_size: 0,
        ..Default::default()
    }
    .validate()
    .is_err());
    assert!(TrainConfig {
        gamma_qpp: 1.2,
        ..Default::default()
    }
    .validate()
    .is_err());
    assert!(TrainConfig {
        alt_rate: (0, 0),
        ..Default::default()
    }
    .validate()
    .is_err());
}

#[test]
fn missing_question_is_rejected_for_teacher_forcing() {
    let (model, mut tok) = small();
    tok[0].question_tokens = None;
    tok[0].question_ids = None;
    assert!(prepare_items(&model, &tok).is_err());
}
