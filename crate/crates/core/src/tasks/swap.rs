use super::TaskSample;
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::state_tracking::{permutation_oracle, Swap};

/// `C(n, 2)`.
pub fn swap_vocab(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Token of the pair `{a, b}`, enumerating `(i, j)` with `i < j` in
/// lexicographic order.
pub fn pair_token(n: usize, a: usize, b: usize) -> Result<usize> {
    let (i, j) = (a.min(b), a.max(b));
    if i == j || j >= n {
        return Err(Error::InvalidConfig(format!(
            "no swap token for ({a}, {b}) with n = {n}"
        )));
    }
    Ok(i * (2 * n - i - 1) / 2 + (j - i - 1))
}

/// Inverse of [`pair_token`]: `(i, j)` with `i < j`.
pub fn token_pair(n: usize, token: usize) -> Result<(usize, usize)> {
    let mut rest = token;
    for i in 0..n.saturating_sub(1) {
        let row = n - i - 1;
        if rest < row {
            return Ok((i, i + 1 + rest));
        }
        rest -= row;
    }
    Err(Error::InvalidConfig(format!(
        "token {token} outside vocabulary {}",
        swap_vocab(n)
    )))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwapSample {
    pub n: usize,
    pub input_ids: Vec<usize>,
    /// Original index of the element at position 0 after each swap.
    pub labels: Vec<usize>,
}

impl SwapSample {
    pub fn swaps(&self) -> Result<Vec<Swap>> {
        self.input_ids
            .iter()
            .map(|&t| {
                let (i, j) = token_pair(self.n, t)?;
                Swap::new(i, j)
            })
            .collect()
    }
}

impl TaskSample for SwapSample {
    fn token_ids(&self) -> Vec<usize> {
        self.input_ids.clone()
    }

    fn label_ids(&self) -> Vec<usize> {
        self.labels.clone()
    }
}

pub fn gen_swap(n: usize, seq_len: usize, batch: usize, rng: &mut Rng) -> Result<Vec<SwapSample>> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!("swap task needs n >= 2, got {n}")));
    }
    let vocab = swap_vocab(n);
    (0..batch)
        .map(|_| {
            let input_ids: Vec<usize> = (0..seq_len).map(|_| rng.below(vocab)).collect();
            let mut sample = SwapSample {
                n,
                input_ids,
                labels: Vec::new(),
            };
            let perms = permutation_oracle(n, &sample.swaps()?)?;
            sample.labels = perms[1..].iter().map(|p| p[0]).collect();
            Ok(sample)
        })
        .collect()
}
