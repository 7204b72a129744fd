use rand::Rng;

use super::dist::VocabDistribution;
use super::TokenId;

/// Argmax with lowest-index tie-break.
pub fn select_greedy(dist: &VocabDistribution) -> TokenId {
    dist.argmax()
}

/// Tokens of the nucleus: the shortest prefix of the probability-sorted
/// vocabulary whose mass reaches `top_p`. Zero-probability tokens are never
/// included; ties in probability are ordered by token index.
pub fn nucleus(dist: &VocabDistribution, top_p: f64) -> Vec<TokenId> {
    let probs = dist.probs();
    let mut order: Vec<TokenId> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut mass = 0.0;
    let mut keep = 0;
    for &tok in &order {
        mass += probs[tok];
        keep += 1;
        if mass >= top_p {
            break;
        }
    }
    order.truncate(keep.max(1));
    order
}

/// Samples from the renormalized nucleus.
pub fn select_nucleus<R: Rng + ?Sized>(dist: &VocabDistribution, top_p: f64, rng: &mut R) -> TokenId {
    let kept = nucleus(dist, top_p);
    let probs = dist.probs();
    let total: f64 = kept.iter().map(|&t| probs[t]).sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for &tok in &kept {
        acc += probs[tok];
        if u < acc {
            return tok;
        }
    }
    *kept.last().expect("nucleus always holds the top token")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn one_hot_is_deterministic() {
        let d = VocabDistribution::one_hot(5, 3).unwrap();
        assert_eq!(select_greedy(&d), 3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for p in [0.1, 0.5, 1.0] {
            for _ in 0..50 {
                assert_eq!(select_nucleus(&d, p, &mut rng), 3);
            }
        }
    }

    #[test]
    fn greedy_tie_goes_low() {
        let d = VocabDistribution::new(vec![0.2, 0.4, 0.4]).unwrap();
        assert_eq!(select_greedy(&d), 1);
    }

    #[test]
    fn nucleus_membership() {
        let d = VocabDistribution::new(vec![0.1, 0.5, 0.3, 0.1]).unwrap();
        assert_eq!(nucleus(&d, 0.5), vec![1]);
        assert_eq!(nucleus(&d, 0.6), vec![1, 2]);
        assert_eq!(nucleus(&d, 0.85), vec![1, 2, 0]);
        assert_eq!(nucleus(&d, 1.0), vec![1, 2, 0, 3]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let t = select_nucleus(&d, 0.6, &mut rng);
            assert!(t == 1 || t == 2);
        }
    }
}
