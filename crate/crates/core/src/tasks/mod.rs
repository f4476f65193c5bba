//! Generators for the two toy sequence tasks: element-swap tracking on `n`
//! positions and reachability in a two-tree DAG.

mod dag;
mod swap;

pub use dag::{gen_dag, reachability_closure, DagSample};
pub use swap::{gen_swap, pair_token, swap_vocab, token_pair, SwapSample};

use std::io::{self, Write};

/// A sample that can be dumped as `tokens<TAB>labels`.
pub trait TaskSample {
    fn token_ids(&self) -> Vec<usize>;
    fn label_ids(&self) -> Vec<usize>;
}

/// One sample per line: space-separated token ids, a tab, space-separated labels.
pub fn write_dataset<S: TaskSample, W: Write>(samples: &[S], mut out: W) -> io::Result<()> {
    let join = |v: Vec<usize>| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
    for s in samples {
        writeln!(out, "{}\t{}", join(s.token_ids()), join(s.label_ids()))?;
    }
    Ok(())
}
