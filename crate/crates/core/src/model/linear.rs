use nalgebra::{DMatrix, DVector};

use super::Partition;
use crate::error::{Error, Result};
use crate::linalg::{self, block_diag};

/// Interconnected linear system `x⁺ = Ax + w`, `y = Cx + v` with block structure.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedLinearModel {
    partition: Partition,
    a_blocks: Vec<Vec<DMatrix<f64>>>,
    c_blocks: Vec<DMatrix<f64>>,
    q_blocks: Vec<DMatrix<f64>>,
    r_blocks: Vec<DMatrix<f64>>,
    p0_blocks: Vec<DMatrix<f64>>,
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    r: DMatrix<f64>,
}

fn check_shape(m: &DMatrix<f64>, rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::dim(format!("{what} is {:?}, expected ({rows}, {cols})", m.shape())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Model(format!("{what} has non-finite entries")));
    }
    Ok(())
}

fn check_spd(m: &DMatrix<f64>, n: usize, what: &str) -> Result<()> {
    check_shape(m, n, n, what)?;
    if !linalg::is_symmetric(m, 1e-12) {
        return Err(Error::Model(format!("{what} is not symmetric")));
    }
    if n > 0 && linalg::min_eigenvalue(m) <= 0.0 {
        return Err(Error::Model(format!("{what} is not positive definite")));
    }
    Ok(())
}

impl PartitionedLinearModel {
    /// Build from blocks. The interaction graph is read off the nonzero off-diagonal `A_il`.
    pub fn new(
        state_dims: Vec<usize>,
        output_dims: Vec<usize>,
        a_blocks: Vec<Vec<DMatrix<f64>>>,
        c_blocks: Vec<DMatrix<f64>>,
        q_blocks: Vec<DMatrix<f64>>,
        r_blocks: Vec<DMatrix<f64>>,
        p0_blocks: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = state_dims.len();
        for (what, len) in [
            ("C", c_blocks.len()),
            ("Q", q_blocks.len()),
            ("R", r_blocks.len()),
            ("P0", p0_blocks.len()),
            ("A block rows", a_blocks.len()),
        ] {
            if len != n {
                return Err(Error::dim(format!("{what}: {len} blocks for {n} subsystems")));
            }
        }
        let mut neighbors = vec![Vec::new(); n];
        for i in 0..n {
            if a_blocks[i].len() != n {
                return Err(Error::dim(format!("A block row {i} has {} blocks", a_blocks[i].len())));
            }
            for l in 0..n {
                if l != i && a_blocks[i][l].iter().any(|&v| v != 0.0) {
                    neighbors[i].push(l);
                }
            }
        }
        let partition = Partition::new(state_dims, output_dims, neighbors)?;
        for i in 0..n {
            let (nxi, nyi) = (partition.state_dim(i), partition.output_dim(i));
            for l in 0..n {
                check_shape(&a_blocks[i][l], nxi, partition.state_dim(l), &format!("A_{i}{l}"))?;
            }
            check_shape(&c_blocks[i], nyi, nxi, &format!("C_{i}"))?;
            check_spd(&q_blocks[i], nxi, &format!("Q_{i}"))?;
            check_spd(&r_blocks[i], nyi, &format!("R_{i}"))?;
            check_spd(&p0_blocks[i], nxi, &format!("P0_{i}"))?;
        }
        let nx = partition.nx();
        let mut a = DMatrix::zeros(nx, nx);
        for i in 0..n {
            for l in 0..n {
                let (ri, rl) = (partition.state_range(i), partition.state_range(l));
                a.view_mut((ri.start, rl.start), (ri.len(), rl.len()))
                    .copy_from(&a_blocks[i][l]);
            }
        }
        let c = block_diag(&c_blocks);
        let r = block_diag(&r_blocks);
        Ok(Self { partition, a_blocks, c_blocks, q_blocks, r_blocks, p0_blocks, a, c, r })
    }

    /// Build from an assembled `A`, slicing it along `state_dims`.
    pub fn from_global(
        state_dims: Vec<usize>,
        output_dims: Vec<usize>,
        a: &DMatrix<f64>,
        c_blocks: Vec<DMatrix<f64>>,
        q_blocks: Vec<DMatrix<f64>>,
        r_blocks: Vec<DMatrix<f64>>,
        p0_blocks: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let nx: usize = state_dims.iter().sum();
        check_shape(a, nx, nx, "A")?;
        let offs: Vec<usize> = std::iter::once(0)
            .chain(state_dims.iter().scan(0, |s, &d| {
                *s += d;
                Some(*s)
            }))
            .collect();
        let n = state_dims.len();
        let a_blocks = (0..n)
            .map(|i| {
                (0..n)
                    .map(|l| {
                        a.view((offs[i], offs[l]), (state_dims[i], state_dims[l])).into_owned()
                    })
                    .collect()
            })
            .collect();
        Self::new(state_dims, output_dims, a_blocks, c_blocks, q_blocks, r_blocks, p0_blocks)
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn n(&self) -> usize {
        self.partition.n()
    }

    pub fn a_block(&self, i: usize, l: usize) -> &DMatrix<f64> {
        &self.a_blocks[i][l]
    }

    pub fn c_block(&self, i: usize) -> &DMatrix<f64> {
        &self.c_blocks[i]
    }

    pub fn q(&self, i: usize) -> &DMatrix<f64> {
        &self.q_blocks[i]
    }

    pub fn r_block(&self, i: usize) -> &DMatrix<f64> {
        &self.r_blocks[i]
    }

    pub fn p0(&self, i: usize) -> &DMatrix<f64> {
        &self.p0_blocks[i]
    }

    pub fn q_blocks(&self) -> &[DMatrix<f64>] {
        &self.q_blocks
    }

    pub fn r_blocks(&self) -> &[DMatrix<f64>] {
        &self.r_blocks
    }

    pub fn p0_blocks(&self) -> &[DMatrix<f64>] {
        &self.p0_blocks
    }

    /// Full-system measurement weight `R = blockdiag(R_1..R_n)`.
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// Dense `(A, C)`.
    pub fn assemble_global(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.a.clone(), self.c.clone())
    }

    /// Same structure with new noise and prior weights.
    pub fn with_weights(
        &self,
        q_blocks: Vec<DMatrix<f64>>,
        r_blocks: Vec<DMatrix<f64>>,
        p0_blocks: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        Self::new(
            self.partition.state_dims().to_vec(),
            self.partition.output_dims().to_vec(),
            self.a_blocks.clone(),
            self.c_blocks.clone(),
            q_blocks,
            r_blocks,
            p0_blocks,
        )
    }

    pub fn selectors(&self) -> Selectors {
        Selectors::new(self)
    }

    /// `Σ_l A_il x^l` over neighbors, read from a global vector.
    pub fn coupling_input(&self, i: usize, x_global: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.partition.state_dim(i));
        for &l in self.partition.neighbors(i) {
            out += &self.a_blocks[i][l] * x_global.rows_range(self.partition.state_range(l));
        }
        out
    }
}

/// Column selections and zeroings of `A` and `C` used by the collective analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct Selectors {
    /// Block diagonal of `A`.
    pub a_d: DMatrix<f64>,
    /// `A − A_d`.
    pub a_r: DMatrix<f64>,
    /// `A_{[:,i]}`: column block `i` of `A` (the stacked `A_{1i}..A_{ni}`).
    pub a_star: Vec<DMatrix<f64>>,
    /// `A` with column block `i` zeroed.
    pub a_tilde: Vec<DMatrix<f64>>,
    /// `C_{[:,i]}`: column block `i` of `C`, zero outside rows of `y^i`.
    pub c_star: Vec<DMatrix<f64>>,
    /// `C` with block `i` zeroed.
    pub c_tilde: Vec<DMatrix<f64>>,
}

impl Selectors {
    pub fn new(model: &PartitionedLinearModel) -> Self {
        let p = model.partition();
        let (a, c) = (model.a(), model.c());
        let mut a_d = DMatrix::zeros(p.nx(), p.nx());
        for i in 0..p.n() {
            let r = p.state_range(i);
            a_d.view_mut((r.start, r.start), (r.len(), r.len()))
                .copy_from(model.a_block(i, i));
        }
        let a_r = a - &a_d;
        let mut a_star = Vec::new();
        let mut a_tilde = Vec::new();
        let mut c_star = Vec::new();
        let mut c_tilde = Vec::new();
        for i in 0..p.n() {
            let r = p.state_range(i);
            a_star.push(a.columns(r.start, r.len()).into_owned());
            let mut at = a.clone();
            at.columns_mut(r.start, r.len()).fill(0.0);
            a_tilde.push(at);
            c_star.push(c.columns(r.start, r.len()).into_owned());
            let mut ct = c.clone();
            ct.columns_mut(r.start, r.len()).fill(0.0);
            c_tilde.push(ct);
        }
        Self { a_d, a_r, a_star, a_tilde, c_star, c_tilde }
    }

    pub fn a_col(&self, i: usize) -> &DMatrix<f64> {
        &self.a_star[i]
    }

    pub fn c_col(&self, i: usize) -> &DMatrix<f64> {
        &self.c_star[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_matrix, rng};

    fn s(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn scalar_model(a: [[f64; 2]; 2]) -> PartitionedLinearModel {
        PartitionedLinearModel::new(
            vec![1, 1],
            vec![1, 1],
            vec![vec![s(a[0][0]), s(a[0][1])], vec![s(a[1][0]), s(a[1][1])]],
            vec![s(1.0), s(1.0)],
            vec![s(1.0), s(1.0)],
            vec![s(1.0), s(1.0)],
            vec![s(1.0), s(1.0)],
        )
        .unwrap()
    }

    #[test]
    fn layout_of_scalar_blocks() {
        let m = scalar_model([[1.0, 2.0], [3.0, 4.0]]);
        let (a, c) = m.assemble_global();
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(c, DMatrix::identity(2, 2));
        assert_eq!(m.partition().neighbors(0), &[1]);
    }

    #[test]
    fn single_block_and_decoupled() {
        let one = PartitionedLinearModel::new(
            vec![2],
            vec![1],
            vec![vec![DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.9])]],
            vec![DMatrix::from_row_slice(1, 2, &[1.0, 0.0])],
            vec![DMatrix::identity(2, 2)],
            vec![s(1.0)],
            vec![DMatrix::identity(2, 2)],
        )
        .unwrap();
        assert_eq!(one.a(), one.a_block(0, 0));
        assert_eq!(one.c(), one.c_block(0));

        let m = scalar_model([[0.5, 0.0], [0.0, 0.7]]);
        let sel = m.selectors();
        assert_eq!(sel.a_r, DMatrix::zeros(2, 2));
        assert!(m.partition().neighbors(0).is_empty());
    }

    #[test]
    fn selectors_reassemble() {
        let mut r = rng(7);
        let a = random_matrix(&mut r, 5, 5);
        let dims = vec![2, 3];
        let m = PartitionedLinearModel::from_global(
            dims.clone(),
            vec![1, 2],
            &a,
            vec![random_matrix(&mut r, 1, 2), random_matrix(&mut r, 2, 3)],
            vec![DMatrix::identity(2, 2), DMatrix::identity(3, 3)],
            vec![s(1.0), DMatrix::identity(2, 2)],
            vec![DMatrix::identity(2, 2), DMatrix::identity(3, 3)],
        )
        .unwrap();
        let sel = m.selectors();
        assert_eq!(&sel.a_d + &sel.a_r, a);
        for i in 0..2 {
            let rg = m.partition().state_range(i);
            let mut back = sel.a_tilde[i].clone();
            back.columns_mut(rg.start, rg.len()).copy_from(&sel.a_star[i]);
            assert_eq!(back, a);
            assert_eq!(sel.a_tilde[i].columns(rg.start, rg.len()).amax(), 0.0);
            let mut cb = sel.c_tilde[i].clone();
            cb.columns_mut(rg.start, rg.len()).copy_from(&sel.c_star[i]);
            assert_eq!(&cb, m.c());
            // C_i^* is nonzero only in the rows of y^i
            let orows = m.partition().output_range(i);
            for row in 0..m.partition().ny() {
                if !orows.contains(&row) {
                    assert_eq!(sel.c_star[i].row(row).amax(), 0.0);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_weights() {
        let err = PartitionedLinearModel::new(
            vec![1],
            vec![1],
            vec![vec![s(1.0)]],
            vec![s(1.0)],
            vec![s(-1.0)],
            vec![s(1.0)],
            vec![s(1.0)],
        );
        assert!(matches!(err, Err(Error::Model(_))));
    }
}
