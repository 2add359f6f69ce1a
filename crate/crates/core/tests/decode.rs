use semqg_core::decode::{
    beam_search, diverse_beam_search, greedy_decode, ngram_block, sample_decode, DecodeConfig,
    Hypothesis, StepModel,
};
use semqg_core::nn::RngState;
use semqg_core::Result;

/// Next-token table indexed by (position, previous token).
struct TableModel {
    vocab: usize,
    eos: usize,
    table: Vec<Vec<Vec<f64>>>,
}

impl TableModel {
    fn random(vocab: usize, max_len: usize, rng: &mut RngState, sharp: f64) -> Self {
        let table = (0..max_len)
            .map(|_| {
                (0..=vocab)
                    .map(|_| {
                        let logits: Vec<f64> = (0..vocab)
                            .map(|_| sharp * rng.uniform_in(-1.0, 1.0))
                            .collect();
                        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
                        logits.iter().map(|l| l - m - z.ln()).collect()
                    })
                    .collect()
            })
            .collect();
        Self {
            vocab,
            eos: 0,
            table,
        }
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
        self.eos
    }

    fn step(&self, t: &usize, prev: usize) -> Result<(Vec<f64>, usize)> {
        Ok((self.table[*t][prev].clone(), t + 1))
    }
}

/// Every sequence that ends in EOS or reaches `max_len`, with its score.
fn enumerate(m: &TableModel, max_len: usize) -> Vec<(Vec<usize>, f64)> {
    let mut out = Vec::new();
    let mut stack = vec![(Vec::new(), 0.0f64)];
    while let Some((seq, score)) = stack.pop() {
        let t = seq.len();
        let prev = seq.last().copied().unwrap_or(m.vocab);
        for tok in 0..m.vocab {
            let mut s = seq.clone();
            s.push(tok);
            let sc = score + m.table[t][prev][tok];
            if tok == m.eos || s.len() == max_len {
                out.push((s, sc));
            } else {
                stack.push((s, sc));
            }
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1));
    out
}

fn rescore(m: &TableModel, toks: &[usize]) -> f64 {
    let mut prev = m.vocab;
    let mut s = 0.0;
    for (t, &tok) in toks.iter().enumerate() {
        s += m.table[t][prev][tok];
        prev = tok;
    }
    s
}

fn cfg(beam: usize, max_len: usize) -> DecodeConfig {
    DecodeConfig {
        beam,
        max_len,
        diversity: 0.0,
        block_ngram: 0,
    }
}

#[test]
fn beam_one_is_greedy() {
    let mut rng = RngState::new(1);
    for _ in 0..50 {
        let m = TableModel::random(5, 4, &mut rng, 2.0);
        let g = greedy_decode(&m, &cfg(1, 4)).unwrap();
        let b = beam_search(&m, &cfg(1, 4)).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0], g);
    }
}

#[test]
fn scores_are_sorted_and_match_rescoring() {
    let mut rng = RngState::new(2);
    for _ in 0..50 {
        let m = TableModel::random(5, 4, &mut rng, 2.0);
        let hs = beam_search(&m, &cfg(4, 4)).unwrap();
        for w in hs.windows(2) {
            assert!(w[0].log_prob >= w[1].log_prob);
        }
        for h in &hs {
            assert!((h.log_prob - rescore(&m, &h.tokens)).abs() < 1e-9);
            assert!(h.tokens.len() <= 4);
        }
    }
}

#[test]
fn zero_diversity_is_plain_beam() {
    let mut rng = RngState::new(3);
    for _ in 0..50 {
        let m = TableModel::random(5, 4, &mut rng, 2.0);
        let c = cfg(4, 4);
        assert_eq!(
            beam_search(&m, &c).unwrap(),
            diverse_beam_search(&m, &c).unwrap()
        );
    }
}

#[test]
fn diversity_penalty_hand_computed_step() {
    // one step: parent expansions ranked 0,1,2 lose 0, 0.5, 1.0
    let lp: Vec<f64> = [0.5f64, 0.3, 0.2].iter().map(|p| p.ln()).collect();
    let m = TableModel {
        vocab: 3,
        eos: 0,
        table: vec![vec![lp.clone(); 4]],
    };
    let c = DecodeConfig {
        beam: 3,
        max_len: 1,
        diversity: 0.5,
        block_ngram: 0,
    };
    let hs = diverse_beam_search(&m, &c).unwrap();
    let ranks: Vec<usize> = hs.iter().map(|h| h.sibling_ranks[0]).collect();
    assert_eq!(ranks, [0, 1, 2]);
    assert_eq!(hs[1].log_prob, lp[1]);
}

#[test]
fn diverse_beam_has_at_least_as_many_first_tokens() {
    let mut rng = RngState::new(4);
    for _ in 0..50 {
        let m = TableModel::random(5, 4, &mut rng, 2.0);
        let first = |hs: &[Hypothesis]| {
            let mut f: Vec<usize> = hs.iter().map(|h| h.tokens[0]).collect();
            f.sort_unstable();
            f.dedup();
            f.len()
        };
        let plain = beam_search(&m, &cfg(3, 4)).unwrap();
        let div = diverse_beam_search(
            &m,
            &DecodeConfig {
                diversity: 2.0,
                ..cfg(3, 4)
            },
        )
        .unwrap();
        assert!(first(&div) >= first(&plain));
    }
}

#[test]
fn sampled_log_probs_match_rescoring() {
    let mut rng = RngState::new(5);
    let m = TableModel::random(5, 6, &mut rng, 2.0);
    for _ in 0..100 {
        let h = sample_decode(&m, 6, 0, &mut rng).unwrap();
        assert!((h.log_prob - rescore(&m, &h.tokens)).abs() < 1e-12);
        assert_eq!(h.step_log_probs.len(), h.tokens.len());
    }
    let a = sample_decode(&m, 6, 0, &mut RngState::new(9)).unwrap();
    let b = sample_decode(&m, 6, 0, &mut RngState::new(9)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn degenerate_model_samples_greedily() {
    let mut t = vec![vec![vec![f64::NEG_INFINITY; 3]; 4]; 3];
    for (pos, row) in t.iter_mut().enumerate() {
        for r in row.iter_mut() {
            r[if pos == 2 { 0 } else { 2 }] = 0.0;
        }
    }
    let m = TableModel {
        vocab: 3,
        eos: 0,
        table: t,
    };
    let g = greedy_decode(&m, &cfg(1, 3)).unwrap();
    let s = sample_decode(&m, 3, 0, &mut RngState::new(1)).unwrap();
    assert_eq!(g.tokens, s.tokens);
    assert_eq!(g.tokens, [2, 2, 0]);
}

#[test]
fn trigram_blocking_prevents_repeats() {
    // a model that loves repeating 1 2 1 2 ...
    let mut rng = RngState::new(6);
    let mut m = TableModel::random(4, 12, &mut rng, 0.1);
    for t in 0..12 {
        for prev in 0..=4 {
            let fav = if prev == 1 { 2 } else { 1 };
            m.table[t][prev] = (0..4)
                .map(|i| if i == fav { -0.05 } else { -4.0 })
                .collect();
        }
    }
    let c = DecodeConfig {
        beam: 3,
        max_len: 12,
        diversity: 0.0,
        block_ngram: 3,
    };
    for h in beam_search(&m, &c)
        .unwrap()
        .iter()
        .chain([&greedy_decode(&m, &c).unwrap()])
    {
        let tri: Vec<&[usize]> = h.tokens.windows(3).collect();
        for i in 0..tri.len() {
            for j in i + 1..tri.len() {
                assert_ne!(tri[i], tri[j], "{:?}", h.tokens);
            }
        }
    }
    let (out, _) = ngram_block(&m.table[0][1], &[1, 2, 1], 2);
    assert_eq!(out[2], f64::NEG_INFINITY);
}

#[test]
fn beam_is_exact_for_fixed_length_prefix_free_models() {
    // without EOS and with steps that ignore the prefix, scores decompose per
    // position, so a pruned prefix always has k better completions
    let mut rng = RngState::new(7);
    for _ in 0..50 {
        let mut m = TableModel::random(5, 4, &mut rng, 2.0);
        m.eos = usize::MAX;
        for t in 0..4 {
            let row = m.table[t][0].clone();
            for prev in 0..=5 {
                m.table[t][prev] = row.clone();
            }
        }
        let all = enumerate(&m, 4);
        for k in 1..=4 {
            let got: Vec<Vec<usize>> = beam_search(&m, &cfg(k, 4))
                .unwrap()
                .into_iter()
                .map(|h| h.tokens)
                .collect();
            let want: Vec<Vec<usize>> = all[..k].iter().map(|x| x.0.clone()).collect();
            assert_eq!(got, want);
        }
    }
}
