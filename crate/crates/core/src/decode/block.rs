use alloc::vec::Vec;

/// Tokens that would complete an `n`-gram already present in `history`.
fn blocked(history: &[usize], n: usize) -> Vec<usize> {
    if n < 2 || history.len() < n - 1 {
        return Vec::new();
    }
    let prefix = &history[history.len() - (n - 1)..];
    let mut out: Vec<usize> = history
        .windows(n)
        .filter(|w| &w[..n - 1] == prefix)
        .map(|w| w[n - 1])
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Sets blocked log-probabilities to `-inf` without renormalizing. Returns
/// false, leaving `log_probs` untouched, when every finite entry would be
/// blocked.
pub fn mask_ngrams(log_probs: &mut [f64], history: &[usize], n: usize) -> bool {
    let ban = blocked(history, n);
    if ban.is_empty() {
        return true;
    }
    let survivors = log_probs
        .iter()
        .enumerate()
        .filter(|(i, p)| p.is_finite() && ban.binary_search(i).is_err())
        .count();
    if survivors == 0 {
        return false;
    }
    for &t in &ban {
        if let Some(p) = log_probs.get_mut(t) {
            *p = f64::NEG_INFINITY;
        }
    }
    true
}

/// Blocks repeated `n`-grams (`n` of 0 or 1 disables) and renormalizes the
/// remaining log-probabilities. Falls back to the input distribution when
/// everything would be blocked; the flag reports whether that happened.
pub fn ngram_block(log_probs: &[f64], history: &[usize], n: usize) -> (Vec<f64>, bool) {
    let mut out = log_probs.to_vec();
    if blocked(history, n).is_empty() {
        return (out, false);
    }
    if !mask_ngrams(&mut out, history, n) {
        return (out, true);
    }
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return (out, false);
    }
    let z: f64 = out.iter().map(|&p| libm::exp(p - max)).sum();
    let lz = max + libm::log(z);
    for p in &mut out {
        *p -= lz;
    }
    (out, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn bigram_successor_blocked() {
        // history a b a: emitting b would repeat "a b"
        assert_eq!(blocked(&[0, 1, 0], 2), vec![1]);
        assert!(blocked(&[0, 1, 0], 3).is_empty());
        assert_eq!(blocked(&[0, 1, 2, 0, 1], 3), vec![2]);
    }

    #[test]
    fn off_is_bit_identical() {
        let lp = vec![-0.1, -2.5, -3.0];
        assert_eq!(ngram_block(&lp, &[0, 1, 0], 0).0, lp);
    }

    #[test]
    fn renormalized_sums_to_one() {
        let lp: Vec<f64> = [0.5f64, 0.3, 0.2].iter().map(|p| p.ln()).collect();
        let (out, fell_back) = ngram_block(&lp, &[0, 1, 0], 2);
        assert!(!fell_back);
        assert_eq!(out[1], f64::NEG_INFINITY);
        let s: f64 = out.iter().map(|p| p.exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!((out[0].exp() - 0.5 / 0.7).abs() < 1e-12);
    }

    #[test]
    fn all_blocked_falls_back() {
        let lp = vec![f64::NEG_INFINITY, 0.0];
        let (out, fell_back) = ngram_block(&lp, &[1, 1], 2);
        assert!(fell_back);
        assert_eq!(out, lp);
    }
}
