use super::TaskSample;
use crate::error::{Error, Result};
use crate::numerics::{Lu, Matrix, Rng};

/// Two random recursive trees over `n` nodes, `n/2` each.
///
/// Position `p` is node `p` and nodes appear in topological order. Node 0 is
/// the designated root; every other node's parent is drawn uniformly from the
/// earlier nodes of its own tree. The root is counted as reachable from
/// itself, so exactly `n/2` labels are true.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DagSample {
    pub n: usize,
    pub parents: Vec<Option<usize>>,
    /// Parent id, or `n` for the designated root and `n + 1` for the other.
    pub node_tokens: Vec<usize>,
    pub labels: Vec<bool>,
}

impl DagSample {
    /// Vocabulary of [`DagSample::node_tokens`].
    pub fn vocab(n: usize) -> usize {
        n + 2
    }

    /// `adj[parent][child] = true`.
    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        let mut adj = vec![vec![false; self.n]; self.n];
        for (child, p) in self.parents.iter().enumerate() {
            if let Some(p) = *p {
                adj[p][child] = true;
            }
        }
        adj
    }
}

impl TaskSample for DagSample {
    fn token_ids(&self) -> Vec<usize> {
        self.node_tokens.clone()
    }

    fn label_ids(&self) -> Vec<usize> {
        self.labels.iter().map(|&b| b as usize).collect()
    }
}

fn one_dag(n: usize, rng: &mut Rng) -> DagSample {
    let mut rest: Vec<usize> = (1..n).collect();
    rng.shuffle(&mut rest);
    let mut in_first = vec![false; n];
    in_first[0] = true;
    for &p in &rest[..n / 2 - 1] {
        in_first[p] = true;
    }
    let mut members: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut parents = vec![None; n];
    let mut node_tokens = vec![0; n];
    for p in 0..n {
        let class = usize::from(!in_first[p]);
        let pool = &members[class];
        if pool.is_empty() {
            node_tokens[p] = n + class;
        } else {
            let parent = pool[rng.below(pool.len())];
            parents[p] = Some(parent);
            node_tokens[p] = parent;
        }
        members[class].push(p);
    }
    DagSample {
        n,
        parents,
        node_tokens,
        labels: in_first,
    }
}

pub fn gen_dag(n: usize, batch: usize, rng: &mut Rng) -> Result<Vec<DagSample>> {
    if n < 4 || !n.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!("DAG task needs even n >= 4, got {n}")));
    }
    Ok((0..batch).map(|_| one_dag(n, rng)).collect())
}

/// Reflexive transitive closure by accumulating boolean powers `A, A², …`.
///
/// The result is cross-checked against the positive pattern of `(I − A)⁻¹`,
/// which counts paths for a nilpotent `A`.
pub fn reachability_closure(adj: &[Vec<bool>]) -> Result<Vec<Vec<bool>>> {
    let n = adj.len();
    if adj.iter().any(|r| r.len() != n) {
        return Err(Error::NotSquare(n, adj.first().map_or(0, Vec::len)));
    }
    let mut closure: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| i == j).collect()).collect();
    let mut power = closure.clone();
    for _ in 0..n {
        let next: Vec<Vec<bool>> = (0..n)
            .map(|i| (0..n).map(|j| (0..n).any(|k| power[i][k] && adj[k][j])).collect())
            .collect();
        power = next;
        for (c, p) in closure.iter_mut().zip(&power) {
            for (x, &y) in c.iter_mut().zip(p) {
                *x |= y;
            }
        }
    }
    if power.iter().flatten().any(|&x| x) {
        return Err(Error::Cycle);
    }
    let a = Matrix::from_fn(
        n,
        n,
        |i, j| if i == j { 1.0 } else { 0.0 } - if adj[i][j] { 1.0 } else { 0.0 },
    );
    let paths = Lu::<f64>::new(&a)?.inverse()?;
    for (i, row) in closure.iter().enumerate() {
        for (j, &reach) in row.iter().enumerate() {
            if (paths.get(i, j) > 0.5) != reach {
                return Err(Error::Inconsistent(format!(
                    "closure and (I - A)^-1 disagree at ({i}, {j}): {} vs {}",
                    reach,
                    paths.get(i, j)
                )));
            }
        }
    }
    Ok(closure)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain() {
        let adj = vec![vec![false, true, false], vec![false, false, true], vec![false; 3]];
        let c = reachability_closure(&adj).unwrap();
        assert!(c[0][2]);
        assert!(!c[2][0]);
    }

    #[test]
    fn empty_graph_is_identity() {
        let c = reachability_closure(&vec![vec![false; 4]; 4]).unwrap();
        for (i, row) in c.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                assert_eq!(x, i == j);
            }
        }
    }

    #[test]
    fn cycle_is_rejected() {
        let adj = vec![vec![false, true], vec![true, false]];
        assert!(matches!(reachability_closure(&adj), Err(Error::Cycle)));
    }

    #[test]
    fn four_nodes_balanced() {
        for s in gen_dag(4, 20, &mut Rng::new(2)).unwrap() {
            assert_eq!(s.labels.iter().filter(|&&b| b).count(), 2);
            assert_eq!(s.node_tokens[0], 4);
            assert_eq!(s.node_tokens.iter().filter(|&&t| t == 5).count(), 1);
        }
        assert!(gen_dag(5, 1, &mut Rng::new(1)).is_err());
    }
}
