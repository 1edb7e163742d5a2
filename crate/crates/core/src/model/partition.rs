use std::ops::Range;

use crate::error::{Error, Result};

/// Subsystem layout: state/output dimensions and the interaction graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    state_dims: Vec<usize>,
    output_dims: Vec<usize>,
    state_offsets: Vec<usize>,
    output_offsets: Vec<usize>,
    neighbors: Vec<Vec<usize>>,
}

fn prefix(d: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(d.len() + 1);
    let mut acc = 0;
    out.push(0);
    for &x in d {
        acc += x;
        out.push(acc);
    }
    out
}

impl Partition {
    /// `neighbors[i]` lists the subsystems whose states enter `f_i` (sorted, deduplicated here).
    pub fn new(state_dims: Vec<usize>, output_dims: Vec<usize>, neighbors: Vec<Vec<usize>>) -> Result<Self> {
        let n = state_dims.len();
        if n == 0 {
            return Err(Error::Model("partition has no subsystems".into()));
        }
        if output_dims.len() != n || neighbors.len() != n {
            return Err(Error::dim(format!(
                "partition lists {n} state blocks, {} output blocks, {} neighbor sets",
                output_dims.len(),
                neighbors.len()
            )));
        }
        if let Some(i) = state_dims.iter().position(|&d| d == 0) {
            return Err(Error::Model(format!("subsystem {i} has no states")));
        }
        let mut clean = Vec::with_capacity(n);
        for (i, mut set) in neighbors.into_iter().enumerate() {
            set.sort_unstable();
            set.dedup();
            if set.contains(&i) {
                return Err(Error::Model(format!("subsystem {i} lists itself as a neighbor")));
            }
            if let Some(&bad) = set.iter().find(|&&l| l >= n) {
                return Err(Error::Model(format!("subsystem {i} names unknown neighbor {bad}")));
            }
            clean.push(set);
        }
        Ok(Self {
            state_offsets: prefix(&state_dims),
            output_offsets: prefix(&output_dims),
            state_dims,
            output_dims,
            neighbors: clean,
        })
    }

    pub fn n(&self) -> usize {
        self.state_dims.len()
    }

    pub fn nx(&self) -> usize {
        *self.state_offsets.last().unwrap()
    }

    pub fn ny(&self) -> usize {
        *self.output_offsets.last().unwrap()
    }

    pub fn state_dim(&self, i: usize) -> usize {
        self.state_dims[i]
    }

    pub fn output_dim(&self, i: usize) -> usize {
        self.output_dims[i]
    }

    pub fn state_dims(&self) -> &[usize] {
        &self.state_dims
    }

    pub fn output_dims(&self) -> &[usize] {
        &self.output_dims
    }

    pub fn state_range(&self, i: usize) -> Range<usize> {
        self.state_offsets[i]..self.state_offsets[i + 1]
    }

    pub fn output_range(&self, i: usize) -> Range<usize> {
        self.output_offsets[i]..self.output_offsets[i + 1]
    }

    /// Subsystems whose states enter `f_i`, excluding `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Whether block `(i, l)` of the dynamics Jacobian may be nonzero.
    pub fn couples(&self, i: usize, l: usize) -> bool {
        i == l || self.neighbors[i].binary_search(&l).is_ok()
    }

    /// Subsystems whose dynamics read `x^i`, including `i`.
    pub fn dependents(&self, i: usize) -> Vec<usize> {
        (0..self.n()).filter(|&l| self.couples(l, i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_and_ranges() {
        let p = Partition::new(vec![2, 3], vec![1, 0], vec![vec![1], vec![]]).unwrap();
        assert_eq!(p.nx(), 5);
        assert_eq!(p.ny(), 1);
        assert_eq!(p.state_range(1), 2..5);
        assert_eq!(p.output_range(1), 1..1);
        assert!(p.couples(0, 1) && !p.couples(1, 0));
        assert_eq!(p.dependents(1), vec![0, 1]);
    }

    #[test]
    fn rejects_self_edges_and_empty_blocks() {
        assert!(Partition::new(vec![1], vec![1], vec![vec![0]]).is_err());
        assert!(Partition::new(vec![0], vec![1], vec![vec![]]).is_err());
        assert!(Partition::new(vec![1, 1], vec![1], vec![vec![], vec![]]).is_err());
    }
}
