//! Small dense complex linear algebra.
//!
//! The matrix exponential follows the scaling-and-squaring algorithm with
//! diagonal Padé approximants of degree 3, 5, 7, 9 or 13 (Higham 2005). The
//! dimensions handled here are at most a few hundred, so a plain partial
//! pivoting LU is used for the rational part.
//!
//! Hamiltonians assembled from a fixed set of operators often split into
//! independent blocks (atoms parked in an uncoupled level never move). The
//! [`BlockStructure`] finds those blocks once from the union sparsity pattern,
//! and [`BlockPropagator`] exponentiates each block separately.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = Array2<C64>;
pub type CVector = Array1<C64>;

pub const I: C64 = C64::new(0.0, 1.0);
const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

const PADE_3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE_5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE_7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE_9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE_13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// Backward-error bounds for each Padé degree in double precision.
const THETA_3: f64 = 1.495585217958292e-2;
const THETA_5: f64 = 2.539398330063230e-1;
const THETA_7: f64 = 9.504178996162932e-1;
const THETA_9: f64 = 2.097847961257068e0;
const THETA_13: f64 = 5.371920351148152e0;

/// Induced 1-norm (maximum absolute column sum).
pub fn one_norm(a: &CMatrix) -> f64 {
    a.axis_iter(Axis(1))
        .map(|col| col.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn is_finite(a: &CMatrix) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn identity(n: usize) -> CMatrix {
    Array2::from_diag_elem(n, ONE)
}

pub fn adjoint(a: &CMatrix) -> CMatrix {
    a.t().mapv(|z| z.conj())
}

/// ⟨a|b⟩ with the first argument conjugated.
pub fn inner(a: &CVector, b: &CVector) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm_sqr(a: &CVector) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// Matrix exponential `exp(a)`.
pub fn expm(a: &CMatrix) -> Result<CMatrix> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: a.ncols(),
        });
    }
    if !is_finite(a) {
        return Err(Error::NonFinite("matrix exponential argument".into()));
    }
    if n == 0 {
        return Ok(CMatrix::zeros((0, 0)));
    }
    if n == 1 {
        return Ok(Array2::from_elem((1, 1), a[[0, 0]].exp()));
    }
    if is_diagonal(a) {
        return Ok(Array2::from_diag(&a.diag().mapv(|z| z.exp())));
    }

    let norm = one_norm(a);
    for (theta, coeffs) in [
        (THETA_3, &PADE_3[..]),
        (THETA_5, &PADE_5[..]),
        (THETA_7, &PADE_7[..]),
        (THETA_9, &PADE_9[..]),
    ] {
        if norm <= theta {
            return pade_low(a, coeffs);
        }
    }

    let squarings = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scaled = a.mapv(|z| z / 2f64.powi(squarings));
    let mut r = pade_13(&scaled)?;
    for _ in 0..squarings {
        r = r.dot(&r);
    }
    Ok(r)
}

fn is_diagonal(a: &CMatrix) -> bool {
    a.indexed_iter()
        .all(|((i, j), z)| i == j || (z.re == 0.0 && z.im == 0.0))
}

fn pade_low(a: &CMatrix, b: &[f64]) -> Result<CMatrix> {
    let n = a.nrows();
    let id = identity(n);
    let a2 = a.dot(a);
    let mut power = id.clone();
    let mut u_even = id.mapv(|z| z * b[1]);
    let mut v = id.mapv(|z| z * b[0]);
    let degree = b.len() - 1;
    let mut k = 2;
    while k <= degree {
        power = power.dot(&a2);
        v.scaled_add(C64::from(b[k]), &power);
        u_even.scaled_add(C64::from(b[k + 1]), &power);
        k += 2;
    }
    let u = a.dot(&u_even);
    rational(&u, &v)
}

fn pade_13(a: &CMatrix) -> Result<CMatrix> {
    let b = PADE_13;
    let n = a.nrows();
    let id = identity(n);
    let a2 = a.dot(a);
    let a4 = a2.dot(&a2);
    let a6 = a4.dot(&a2);

    let mut inner_u = a6.mapv(|z| z * b[13]);
    inner_u.scaled_add(C64::from(b[11]), &a4);
    inner_u.scaled_add(C64::from(b[9]), &a2);
    let mut u = a6.dot(&inner_u);
    u.scaled_add(C64::from(b[7]), &a6);
    u.scaled_add(C64::from(b[5]), &a4);
    u.scaled_add(C64::from(b[3]), &a2);
    u.scaled_add(C64::from(b[1]), &id);
    let u = a.dot(&u);

    let mut inner_v = a6.mapv(|z| z * b[12]);
    inner_v.scaled_add(C64::from(b[10]), &a4);
    inner_v.scaled_add(C64::from(b[8]), &a2);
    let mut v = a6.dot(&inner_v);
    v.scaled_add(C64::from(b[6]), &a6);
    v.scaled_add(C64::from(b[4]), &a4);
    v.scaled_add(C64::from(b[2]), &a2);
    v.scaled_add(C64::from(b[0]), &id);
    rational(&u, &v)
}

// (V - U)^{-1} (V + U)
fn rational(u: &CMatrix, v: &CMatrix) -> Result<CMatrix> {
    let p = v + u;
    let q = v - u;
    solve(q.view(), p)
}

/// Solve `a x = b` for a square `a` by LU with partial pivoting; `b` is
/// overwritten with the solution.
pub fn solve(a: ArrayView2<C64>, mut b: CMatrix) -> Result<CMatrix> {
    let n = a.nrows();
    let mut lu = a.to_owned();
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let (pivot, pmax) = (col..n)
            .map(|r| (r, lu[[r, col]].norm()))
            .fold((col, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if pmax == 0.0 || !pmax.is_finite() {
            return Err(Error::NonFinite("singular matrix in LU solve".into()));
        }
        if pivot != col {
            for j in 0..n {
                lu.swap([pivot, j], [col, j]);
            }
            perm.swap(pivot, col);
        }
        let d = lu[[col, col]];
        for r in (col + 1)..n {
            let f = lu[[r, col]] / d;
            if f == ZERO {
                continue;
            }
            lu[[r, col]] = f;
            for j in (col + 1)..n {
                let t = lu[[col, j]];
                lu[[r, j]] -= f * t;
            }
        }
    }
    let m = b.ncols();
    let bp = b.clone();
    for (i, &p) in perm.iter().enumerate() {
        for j in 0..m {
            b[[i, j]] = bp[[p, j]];
        }
    }
    for j in 0..m {
        for i in 1..n {
            let mut s = b[[i, j]];
            for k in 0..i {
                s -= lu[[i, k]] * b[[k, j]];
            }
            b[[i, j]] = s;
        }
        for i in (0..n).rev() {
            let mut s = b[[i, j]];
            for k in (i + 1)..n {
                s -= lu[[i, k]] * b[[k, j]];
            }
            b[[i, j]] = s / lu[[i, i]];
        }
    }
    Ok(b)
}

/// Sparse operator in coordinate form, used for cheap matrix elements
/// ⟨a|H|b⟩ with control operators.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOp {
    dim: usize,
    entries: Vec<(usize, usize, C64)>,
}

impl SparseOp {
    pub fn from_dense(a: &CMatrix) -> Self {
        let entries = a
            .indexed_iter()
            .filter(|(_, z)| z.re != 0.0 || z.im != 0.0)
            .map(|((i, j), z)| (i, j, *z))
            .collect();
        SparseOp {
            dim: a.nrows(),
            entries,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, usize, C64)] {
        &self.entries
    }

    /// ⟨a|H|b⟩
    pub fn expectation(&self, a: &CVector, b: &CVector) -> C64 {
        self.entries
            .iter()
            .map(|&(i, j, v)| a[i].conj() * v * b[j])
            .sum()
    }

    pub fn apply(&self, b: &CVector) -> CVector {
        let mut out = CVector::zeros(self.dim);
        for &(i, j, v) in &self.entries {
            out[i] += v * b[j];
        }
        out
    }
}

/// Partition of the basis into sets that are never coupled by any of the
/// operators the structure was built from. Diagonal perturbations never
/// change the partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockStructure {
    dim: usize,
    blocks: Vec<Vec<usize>>,
}

impl BlockStructure {
    pub fn single(dim: usize) -> Self {
        BlockStructure {
            dim,
            blocks: vec![(0..dim).collect()],
        }
    }

    pub fn from_operators<'a>(dim: usize, ops: impl IntoIterator<Item = &'a CMatrix>) -> Self {
        let mut parent: Vec<usize> = (0..dim).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for op in ops {
            for ((i, j), z) in op.indexed_iter() {
                if i != j && (z.re != 0.0 || z.im != 0.0) {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
        let mut by_root: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for i in 0..dim {
            let r = find(&mut parent, i);
            by_root.entry(r).or_default().push(i);
        }
        BlockStructure {
            dim,
            blocks: by_root.into_values().collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn extract(&self, a: &CMatrix) -> Vec<CMatrix> {
        self.blocks
            .iter()
            .map(|idx| {
                CMatrix::from_shape_fn((idx.len(), idx.len()), |(r, c)| a[[idx[r], idx[c]]])
            })
            .collect()
    }
}

/// Block-diagonal exponential `exp(factor * H)`.
#[derive(Debug, Clone)]
pub struct BlockPropagator {
    dim: usize,
    blocks: Vec<(Vec<usize>, CMatrix)>,
}

impl BlockPropagator {
    /// Exponentiate per-block generators that are already restricted to the
    /// blocks of `structure`.
    pub fn from_block_generators(
        structure: &BlockStructure,
        generators: Vec<CMatrix>,
        factor: C64,
    ) -> Result<Self> {
        let blocks = structure
            .blocks()
            .iter()
            .zip(generators)
            .map(|(idx, g)| Ok((idx.clone(), expm(&g.mapv(|z| z * factor))?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(BlockPropagator {
            dim: structure.dim(),
            blocks,
        })
    }

    pub fn dense(structure: &BlockStructure, h: &CMatrix, factor: C64) -> Result<Self> {
        Self::from_block_generators(structure, structure.extract(h), factor)
    }

    pub fn apply(&self, psi: &CVector) -> CVector {
        let mut out = CVector::zeros(self.dim);
        for (idx, u) in &self.blocks {
            for (r, &gi) in idx.iter().enumerate() {
                let mut s = ZERO;
                for (c, &gj) in idx.iter().enumerate() {
                    s += u[[r, c]] * psi[gj];
                }
                out[gi] = s;
            }
        }
        out
    }

    /// Applies the adjoint `U†`.
    pub fn apply_adjoint(&self, chi: &CVector) -> CVector {
        let mut out = CVector::zeros(self.dim);
        for (idx, u) in &self.blocks {
            for (c, &gj) in idx.iter().enumerate() {
                let mut s = ZERO;
                for (r, &gi) in idx.iter().enumerate() {
                    s += u[[r, c]].conj() * chi[gi];
                }
                out[gj] = s;
            }
        }
        out
    }

    pub fn to_dense(&self) -> CMatrix {
        let mut out = CMatrix::zeros((self.dim, self.dim));
        for (idx, u) in &self.blocks {
            for (r, &gi) in idx.iter().enumerate() {
                for (c, &gj) in idx.iter().enumerate() {
                    out[[gi, gj]] = u[[r, c]];
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> CMatrix {
        CMatrix::from_shape_fn((n, n), |_| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * scale
        })
    }

    // Truncated Taylor series with scaling, accumulated in plain loops; the
    // oracle shares nothing with the Padé path.
    fn taylor_expm(a: &CMatrix) -> CMatrix {
        let n = a.nrows();
        let norm = one_norm(a);
        let s = (norm.log2().ceil().max(0.0) as i32) + 4;
        let scaled = a.mapv(|z| z / 2f64.powi(s));
        let mut term = identity(n);
        let mut sum = identity(n);
        for k in 1..40 {
            term = term.dot(&scaled).mapv(|z| z / k as f64);
            sum = sum + &term;
        }
        for _ in 0..s {
            sum = sum.dot(&sum);
        }
        sum
    }

    fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn expm_of_zero_is_identity() {
        let z = CMatrix::zeros((4, 4));
        assert!(max_abs_diff(&expm(&z).unwrap(), &identity(4)) < 1e-15);
    }

    #[test]
    fn expm_matches_taylor_oracle_across_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &scale in &[1e-3, 0.05, 0.3, 1.0, 3.0, 20.0] {
            for n in [2, 3, 5, 9] {
                let a = random_matrix(&mut rng, n, scale);
                let e = expm(&a).unwrap();
                let t = taylor_expm(&a);
                let rel = max_abs_diff(&e, &t) / t.iter().map(|z| z.norm()).fold(0.0, f64::max);
                assert!(rel < 1e-12, "scale {scale} n {n}: rel {rel}");
            }
        }
    }

    #[test]
    fn expm_pi_rotation() {
        // exp(-i (π/2) σx) = -i σx
        let mut h = CMatrix::zeros((2, 2));
        h[[0, 1]] = ONE;
        h[[1, 0]] = ONE;
        let u = expm(&h.mapv(|z| -I * z * std::f64::consts::FRAC_PI_2)).unwrap();
        assert!((u[[1, 0]] - (-I)).norm() < 1e-14);
        assert!(u[[0, 0]].norm() < 1e-14);
    }

    #[test]
    fn expm_rejects_non_finite() {
        let mut a = CMatrix::zeros((2, 2));
        a[[0, 1]] = C64::new(f64::NAN, 0.0);
        assert!(expm(&a).is_err());
    }

    #[test]
    fn block_structure_finds_components() {
        let mut h = CMatrix::zeros((5, 5));
        h[[0, 2]] = ONE;
        h[[2, 0]] = ONE;
        h[[3, 4]] = I;
        let s = BlockStructure::from_operators(5, [&h]);
        assert_eq!(s.blocks(), &[vec![0, 2], vec![1], vec![3, 4]]);
    }

    #[test]
    fn block_propagator_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut h = CMatrix::zeros((6, 6));
        for &(i, j) in &[(0, 3), (3, 5), (1, 2)] {
            let z = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            h[[i, j]] = z;
            h[[j, i]] = z.conj();
        }
        for i in 0..6 {
            h[[i, i]] = C64::new(rng.random_range(-1.0..1.0), -0.1);
        }
        let s = BlockStructure::from_operators(6, [&h]);
        assert_eq!(s.blocks().len(), 3);
        let bp = BlockPropagator::dense(&s, &h, -I * 0.7).unwrap();
        let full = expm(&h.mapv(|z| -I * 0.7 * z)).unwrap();
        assert!(max_abs_diff(&bp.to_dense(), &full) < 1e-13);
        let psi = CVector::from_shape_fn(6, |k| C64::new(k as f64, 1.0));
        let a = bp.apply_adjoint(&psi);
        let b = adjoint(&full).dot(&psi);
        assert!((a - b).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn lu_solve_recovers_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_matrix(&mut rng, 7, 1.0);
        let x = random_matrix(&mut rng, 7, 1.0);
        let b = a.dot(&x);
        let got = solve(a.view(), b).unwrap();
        assert!(max_abs_diff(&got, &x) < 1e-11);
    }
}
