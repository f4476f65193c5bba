use deltamem_core::tasks::{gen_dag, gen_swap, swap_vocab, DagSample, TaskSample};
use deltamem_core::Rng;

use crate::error::{TrainError, TrainResult};

/// One training sequence; positions with `None` carry no loss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub targets: Vec<Option<usize>>,
}

impl Example {
    pub fn labelled(&self) -> usize {
        self.targets.iter().filter(|t| t.is_some()).count()
    }

    fn from_sample<S: TaskSample>(s: &S) -> Self {
        Self {
            tokens: s.token_ids(),
            targets: s.label_ids().into_iter().map(Some).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Element at position 0 after each transposition of `n` elements.
    Swap { n: usize },
    /// Reachability from node 0 in a two-tree DAG of `n` nodes; fixed length.
    Dag { n: usize },
    /// Synthetic recall LM: every key is bound to a value once, then each
    /// read token names an ordered key pair and must be answered with the
    /// ordered value pair.
    PairRecall { keys: usize, values: usize, reads: usize },
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Swap { .. } => "swap",
            Task::Dag { .. } => "dag",
            Task::PairRecall { .. } => "pair_recall",
        }
    }

    pub fn vocab_in(&self) -> usize {
        match *self {
            Task::Swap { n } => swap_vocab(n),
            Task::Dag { n } => DagSample::vocab(n),
            Task::PairRecall { keys, values, .. } => keys * values + keys * keys,
        }
    }

    pub fn vocab_out(&self) -> usize {
        match *self {
            Task::Swap { n } => n,
            Task::Dag { .. } => 2,
            Task::PairRecall { values, .. } => values * values,
        }
    }

    /// Whether the sequence length is set by the task rather than the caller.
    pub fn fixed_len(&self) -> Option<usize> {
        match *self {
            Task::Swap { .. } => None,
            Task::Dag { n } => Some(n),
            Task::PairRecall { keys, reads, .. } => Some(keys + reads),
        }
    }

    pub fn validate(&self) -> TrainResult<()> {
        let ok = match *self {
            Task::Swap { n } => n >= 2,
            Task::Dag { n } => n >= 4 && n % 2 == 0,
            Task::PairRecall { keys, values, reads } => keys >= 2 && values >= 2 && reads >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(TrainError::Config(format!("invalid task {self:?}")))
        }
    }

    pub fn sample(&self, len: usize, batch: usize, rng: &mut Rng) -> TrainResult<Vec<Example>> {
        self.validate()?;
        Ok(match *self {
            Task::Swap { n } => gen_swap(n, len, batch, rng)?.iter().map(Example::from_sample).collect(),
            Task::Dag { n } => gen_dag(n, batch, rng)?.iter().map(Example::from_sample).collect(),
            Task::PairRecall { keys, values, reads } => {
                (0..batch).map(|_| pair_recall(keys, values, reads, rng)).collect()
            }
        })
    }
}

fn pair_recall(keys: usize, values: usize, reads: usize, rng: &mut Rng) -> Example {
    let binding: Vec<usize> = (0..keys).map(|_| rng.below(values)).collect();
    let mut order: Vec<usize> = (0..keys).collect();
    rng.shuffle(&mut order);
    let mut tokens = Vec::with_capacity(keys + reads);
    let mut targets = Vec::with_capacity(keys + reads);
    for &k in &order {
        tokens.push(k * values + binding[k]);
        targets.push(None);
    }
    for _ in 0..reads {
        let a = rng.below(keys);
        let b = (a + 1 + rng.below(keys - 1)) % keys;
        tokens.push(keys * values + a * keys + b);
        targets.push(Some(binding[a] * values + binding[b]));
    }
    Example { tokens, targets }
}
