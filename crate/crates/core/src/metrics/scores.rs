use std::collections::BTreeMap;

use crate::corpus::TokenId;

pub const PROB_FLOOR: f64 = 1e-12;

/// Mean negative natural-log probability of the labels.
pub fn log_perplexity(rows: &[Vec<f64>], labels: &[TokenId]) -> f64 {
    debug_assert_eq!(rows.len(), labels.len());
    if labels.is_empty() {
        return 0.0;
    }
    let nll: f64 = rows
        .iter()
        .zip(labels)
        .map(|(row, &y)| -row[y as usize].max(PROB_FLOOR).ln())
        .sum();
    nll / labels.len() as f64
}

fn ngram_counts(tokens: &[TokenId], n: usize) -> BTreeMap<&[TokenId], usize> {
    let mut out = BTreeMap::new();
    for g in tokens.windows(n) {
        *out.entry(g).or_default() += 1;
    }
    out
}

/// Sentence BLEU with clipped n-gram precisions for n = 1..=max_n and the
/// usual brevity penalty. Any zero precision gives 0.
pub fn bleu_n(hypothesis: &[TokenId], reference: &[TokenId], max_n: usize) -> f64 {
    assert!((1..=2).contains(&max_n), "max_n must be 1 or 2");
    if hypothesis.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let hyp = ngram_counts(hypothesis, n);
        let total: usize = hyp.values().sum();
        if total == 0 {
            return 0.0;
        }
        let refc = ngram_counts(reference, n);
        let matched: usize = hyp
            .iter()
            .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
            .sum();
        if matched == 0 {
            return 0.0;
        }
        log_sum += (matched as f64 / total as f64).ln();
    }
    let (h, r) = (hypothesis.len() as f64, reference.len() as f64);
    let bp = if h < r { (1.0 - r / h).exp() } else { 1.0 };
    bp * (log_sum / max_n as f64).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_rows_give_ln_v() {
        let rows = vec![vec![0.01; 100]; 3];
        assert!((log_perplexity(&rows, &[0, 5, 99]) - 100f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn one_hot_correct_is_zero() {
        let rows = vec![vec![0.0, 1.0, 0.0]];
        assert_eq!(log_perplexity(&rows, &[1]), 0.0);
    }

    #[test]
    fn two_token_hand_value() {
        let rows = vec![vec![0.5, 0.5], vec![0.25, 0.75]];
        assert!((log_perplexity(&rows, &[0, 0]) - 1.0397).abs() < 1e-4);
    }

    #[test]
    fn zero_probability_is_floored() {
        let v = log_perplexity(&[vec![1.0, 0.0]], &[1]);
        assert!((v - (-PROB_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn bleu_identity_and_disjoint() {
        assert_eq!(bleu_n(&[4, 5, 6], &[4, 5, 6], 1), 1.0);
        assert_eq!(bleu_n(&[4, 5, 6], &[4, 5, 6], 2), 1.0);
        assert_eq!(bleu_n(&[4, 5], &[6, 7], 1), 0.0);
        assert_eq!(bleu_n(&[], &[6, 7], 1), 0.0);
    }

    #[test]
    fn bleu_longer_hypothesis() {
        // "a red dog" against "a dog"
        assert!((bleu_n(&[1, 2, 3], &[1, 3], 1) - 2.0 / 3.0).abs() < 1e-4);
    }

    #[test]
    fn bleu_short_hypothesis_pays_penalty() {
        let v = bleu_n(&[1], &[1, 3], 1);
        assert!((v - (-1.0f64).exp()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn bleu_in_unit_interval(h in prop::collection::vec(0u32..6, 0..6), r in prop::collection::vec(0u32..6, 1..6)) {
            for n in 1..=2 {
                let b = bleu_n(&h, &r, n);
                prop_assert!((0.0..=1.0).contains(&b));
            }
        }

        #[test]
        fn bleu2_not_above_bleu1_for_equal_lengths(r in prop::collection::vec(0u32..5, 2..7), flips in prop::collection::vec(any::<bool>(), 7)) {
            // Substituting tokens with fresh ids can only lose bigram matches
            // at least as fast as unigram matches.
            let h: Vec<u32> = r.iter().zip(&flips).enumerate().map(|(i, (&t, &f))| if f { 100 + i as u32 } else { t }).collect();
            prop_assert!(bleu_n(&h, &r, 2) <= bleu_n(&h, &r, 1) + 1e-12);
        }

        #[test]
        fn log_ppl_non_negative(p in prop::collection::vec(0.0f64..1.0, 1..8)) {
            let rows: Vec<Vec<f64>> = p.iter().map(|&x| vec![x, 1.0 - x]).collect();
            let labels = vec![0; rows.len()];
            prop_assert!(log_perplexity(&rows, &labels) >= 0.0);
        }
    }
}
