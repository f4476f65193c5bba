use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// Exchange of the contents of positions `hi` and `lo` (0-based, `lo < hi`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Swap {
    pub hi: usize,
    pub lo: usize,
}

impl Swap {
    /// Orders the pair so that `lo < hi`.
    pub fn new(a: usize, b: usize) -> Result<Self> {
        if a == b {
            return Err(Error::InvalidConfig(format!("swap of position {a} with itself")));
        }
        Ok(Self {
            hi: a.max(b),
            lo: a.min(b),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwapTrace {
    pub n: usize,
    pub swaps: Vec<Swap>,
    /// n × d_v; row i is the value initially stored at position i.
    pub initial_values: Matrix<f64>,
}

impl SwapTrace {
    pub fn new(n: usize, swaps: Vec<Swap>, initial_values: Matrix<f64>) -> Result<Self> {
        let t = Self {
            n,
            swaps,
            initial_values,
        };
        t.validate()?;
        Ok(t)
    }

    /// Uniform random swaps over distinct pairs, one-hot initial values.
    pub fn random(n: usize, num_swaps: usize, rng: &mut Rng) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidConfig("need at least two positions to swap".into()));
        }
        let swaps = (0..num_swaps)
            .map(|_| {
                let a = rng.below(n);
                let b = (a + 1 + rng.below(n - 1)) % n;
                Swap::new(a, b)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(n, swaps, Matrix::identity(n))
    }

    pub fn validate(&self) -> Result<()> {
        if self.initial_values.rows() != self.n {
            return Err(Error::InvalidConfig(format!(
                "{} initial values for {} positions",
                self.initial_values.rows(),
                self.n
            )));
        }
        for (i, s) in self.swaps.iter().enumerate() {
            if s.lo >= s.hi || s.hi >= self.n {
                return Err(Error::InvalidConfig(format!(
                    "swap {i} ({}, {}) is invalid for n = {}",
                    s.hi, s.lo, self.n
                )));
            }
        }
        Ok(())
    }
}

/// Permutation after every prefix of `swaps`, starting with the identity, so
/// the result has `swaps.len() + 1` entries. `perm[p]` is the original index
/// of the element now at position `p`.
pub fn permutation_oracle(n: usize, swaps: &[Swap]) -> Result<Vec<Vec<usize>>> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(swaps.len() + 1);
    out.push(perm.clone());
    for s in swaps {
        if s.hi >= n || s.lo >= n {
            return Err(Error::InvalidConfig(format!(
                "swap ({}, {}) out of range for n = {n}",
                s.hi, s.lo
            )));
        }
        perm.swap(s.hi, s.lo);
        out.push(perm.clone());
    }
    Ok(out)
}

/// On-disk trace: a `n d seed` header, then one `t1 t2` pair per line,
/// 1-based with `t1 > t2`. Blank lines and `#` comments are ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceFile {
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    pub swaps: Vec<Swap>,
}

impl TraceFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hl, header) = lines.next().ok_or_else(|| Error::Parse("empty trace file".into()))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 3 {
            return Err(Error::Parse(format!("line {hl}: expected header `n d seed`")));
        }
        let num = |s: &str, line: usize| {
            s.parse::<u64>()
                .map_err(|e| Error::Parse(format!("line {line}: {s:?}: {e}")))
        };
        let n = num(h[0], hl)? as usize;
        let d = num(h[1], hl)? as usize;
        let seed = num(h[2], hl)?;
        let mut swaps = Vec::new();
        for (ln, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 2 {
                return Err(Error::Parse(format!("line {ln}: expected `t1 t2`")));
            }
            let (t1, t2) = (num(f[0], ln)? as usize, num(f[1], ln)? as usize);
            if !(1 <= t2 && t2 < t1 && t1 <= n) {
                return Err(Error::Parse(format!(
                    "line {ln}: need 1 <= t2 < t1 <= {n}, got {t1} {t2}"
                )));
            }
            swaps.push(Swap { hi: t1 - 1, lo: t2 - 1 });
        }
        Ok(Self { n, d, seed, swaps })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {} {}\n", self.n, self.d, self.seed);
        for sw in &self.swaps {
            s.push_str(&format!("{} {}\n", sw.hi + 1, sw.lo + 1));
        }
        s
    }
}
