use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// Exact two-sided binomial p-value under p = 0.5.
    pub p_value: f64,
    /// Set when every comparison tied; `p_value` is then 1.
    pub all_ties: bool,
}

fn ln_choose(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln()).sum()
}

/// Two-sided p-value for `wins` against `losses` (ties already dropped).
pub fn sign_test_counts(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let k = wins.min(losses);
    let ln_half_n = n as f64 * 0.5f64.ln();
    let tail: f64 = (0..=k).map(|i| (ln_choose(n, i) + ln_half_n).exp()).sum();
    (2.0 * tail).min(1.0)
}

/// Sign test over paired per-sentence scores of systems A and B.
pub fn sign_test(a: &[f64], b: &[f64]) -> Result<SignTest> {
    if a.len() != b.len() {
        return Err(Error::Data(format!("sign test over {} vs {} scores", a.len(), b.len())));
    }
    let (mut wins, mut losses, mut ties) = (0, 0, 0);
    for (x, y) in a.iter().zip(b) {
        if x > y {
            wins += 1;
        } else if x < y {
            losses += 1;
        } else {
            ties += 1;
        }
    }
    Ok(SignTest {
        wins,
        losses,
        ties,
        p_value: sign_test_counts(wins, losses),
        all_ties: wins + losses == 0,
    })
}
