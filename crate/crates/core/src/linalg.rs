//! Dense linear algebra used by the solvers: column standardization, the
//! factored Gram shift `M = X Xᵀ + c I` with its Woodbury application, and a
//! symmetric eigendecomposition.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Below this the Sherman-Morrison correction is treated as singular.
pub const SINGULAR_CORRECTION_TOL: f64 = 1e-12;

/// An `n × p` observation matrix, rows are observations.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    standardized: bool,
}

impl DataMatrix {
    /// Wraps a matrix without touching it. The result is not flagged as
    /// standardized, even if its columns happen to be.
    pub fn from_raw(values: DMatrix<f64>) -> Self {
        Self {
            values,
            standardized: false,
        }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }
}

/// Centers every column and scales it so that `(1/n) Σᵢ xᵢⱼ² = 1`.
pub fn center_scale(x: &DMatrix<f64>) -> Result<DataMatrix> {
    let (n, p) = x.shape();
    if n < 2 {
        return Err(Error::Dimension(format!(
            "need at least 2 observations to standardize, got {n}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("data matrix".into()));
    }
    let mut out = x.clone();
    let nf = n as f64;
    for j in 0..p {
        let mut col = out.column_mut(j);
        let mean = col.sum() / nf;
        col.add_scalar_mut(-mean);
        let ms = col.norm_squared() / nf;
        // A constant column centers to exact zeros; the relative guard also
        // catches columns whose spread is pure rounding noise.
        if ms <= 1e-28 * (1.0 + mean * mean) {
            return Err(Error::ZeroVarianceColumn(j));
        }
        col /= ms.sqrt();
    }
    Ok(DataMatrix {
        values: out,
        standardized: true,
    })
}

/// Factorization of `M = X Xᵀ + c I_n` with `c = n_loss · b`, together with the
/// cached products needed to apply `(X₋ⱼᵀ X₋ⱼ + c I)⁻¹` in `O(np)` per node.
#[derive(Debug, Clone)]
pub struct GramShiftFactor {
    chol: Cholesky<f64, Dyn>,
    /// `G = M⁻¹ X`, `n × p`.
    g: DMatrix<f64>,
    /// `Xᵀ`, kept to turn `Xᵀ Z` into a plain product.
    xt: DMatrix<f64>,
    /// `P = Xᵀ M⁻¹ X`, `p × p`; column `j` is the Sherman-Morrison direction.
    coupling: DMatrix<f64>,
    /// `1 − Xⱼᵀ M⁻¹ Xⱼ` per column.
    denominators: DVector<f64>,
    step: f64,
    shift: f64,
}

impl GramShiftFactor {
    /// Factors `X Xᵀ + n_loss·b·I`. The plain form uses `n_loss = n`.
    pub fn with_loss_scale(x: &DataMatrix, b: f64, n_loss: f64) -> Result<Self> {
        if !(b > 0.0) || !b.is_finite() {
            return Err(Error::Numerical(format!("step size must be positive, got {b}")));
        }
        if !(n_loss > 0.0) {
            return Err(Error::Dimension(format!("loss scale must be positive, got {n_loss}")));
        }
        let xv = x.values();
        if xv.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("data matrix".into()));
        }
        let n = xv.nrows();
        let shift = n_loss * b;
        let mut m = xv * xv.transpose();
        for i in 0..n {
            m[(i, i)] += shift;
        }
        let chol = Cholesky::new(m)
            .ok_or_else(|| Error::Numerical("Cholesky factorization of X Xᵀ + c I failed".into()))?;
        let g = chol.solve(xv);
        let xt = xv.transpose();
        let coupling = &xt * &g;
        let denominators = DVector::from_iterator(
            coupling.ncols(),
            (0..coupling.ncols()).map(|j| 1.0 - coupling[(j, j)]),
        );
        Ok(Self {
            chol,
            g,
            xt,
            coupling,
            denominators,
            step: b,
            shift,
        })
    }

    pub fn step_size(&self) -> f64 {
        self.step
    }

    /// The scalar `c` in `X Xᵀ + c I`.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn nrows(&self) -> usize {
        self.g.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.g.ncols()
    }

    /// Lower-triangular Cholesky factor of `M`.
    pub fn factor_l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `M` rebuilt from its factor.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let l = self.chol.l();
        &l * l.transpose()
    }

    /// Cached `M⁻¹ X`.
    pub fn solved_data(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn denominator(&self, j: usize) -> f64 {
        self.denominators[j]
    }

    fn check_denominator(&self, j: usize) -> Result<f64> {
        let d = self.denominators[j];
        if d.abs() < SINGULAR_CORRECTION_TOL {
            Err(Error::SingularCorrection {
                column: j,
                denominator: d,
            })
        } else {
            Ok(d)
        }
    }

    /// Applies `(X₋ⱼᵀ X₋ⱼ + c I)⁻¹` to the columns of `rhs` at once.
    ///
    /// Column `c` of `rhs` is a full-length `p`-vector for node `nodes[c]` whose
    /// entry at that node is ignored; the output has that entry set to zero.
    /// The cost is two `n × p × m` products.
    pub fn apply_columns(&self, rhs: &DMatrix<f64>, nodes: &[usize]) -> Result<DMatrix<f64>> {
        let p = self.ncols();
        if rhs.nrows() != p || rhs.ncols() != nodes.len() {
            return Err(Error::Dimension(format!(
                "rhs is {}×{}, expected {}×{}",
                rhs.nrows(),
                rhs.ncols(),
                p,
                nodes.len()
            )));
        }
        let mut d = rhs.clone();
        for (c, &j) in nodes.iter().enumerate() {
            d[(j, c)] = 0.0;
        }
        let z = &self.g * &d;
        let t = &self.xt * &z;
        let inv_shift = 1.0 / self.shift;
        for (c, &j) in nodes.iter().enumerate() {
            let denom = self.check_denominator(j)?;
            let s = t[(j, c)] / denom;
            let coupling = self.coupling.column(j);
            let mut col = d.column_mut(c);
            for l in 0..p {
                col[l] = (col[l] - t[(l, c)] - coupling[l] * s) * inv_shift;
            }
            col[j] = 0.0;
        }
        Ok(d)
    }
}

/// Factors `X Xᵀ + n b I` with `n` the number of rows of `x`.
pub fn factor_gram_shift(x: &DataMatrix, b: f64) -> Result<GramShiftFactor> {
    GramShiftFactor::with_loss_scale(x, b, x.nrows() as f64)
}

/// Returns `(X₋ⱼᵀ X₋ⱼ + c I_{p−1})⁻¹ v` for a `(p−1)`-vector `v`, in `O(np)`.
///
/// Uses the Woodbury identity for dropping the shift into `n × n` space and the
/// Sherman-Morrison correction for removing column `j` from `M`, reading
/// `M⁻¹ X` from the cache instead of solving with the factor again.
pub fn woodbury_apply(
    factor: &GramShiftFactor,
    x: &DataMatrix,
    j: usize,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    let xv = x.values();
    let (n, p) = xv.shape();
    if factor.nrows() != n || factor.ncols() != p {
        return Err(Error::Dimension("factor does not match data".into()));
    }
    if j >= p {
        return Err(Error::Dimension(format!("column {j} out of range for p = {p}")));
    }
    if v.len() + 1 != p {
        return Err(Error::Dimension(format!(
            "vector has length {}, expected {}",
            v.len(),
            p - 1
        )));
    }
    if v.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFiniteInput("woodbury right-hand side".into()));
    }
    let denom = factor.check_denominator(j)?;
    let full = embed(v, j);

    // z = M⁻¹ X₋ⱼ v = G v (entry j of `full` is zero).
    let z = &factor.g * &full;
    // Xᵀ z carries both X₋ⱼᵀ M⁻¹ X₋ⱼ v and the scalar Xⱼᵀ M⁻¹ X₋ⱼ v.
    let t = xv.tr_mul(&z);
    // X₋ⱼᵀ M⁻¹ Xⱼ = X₋ⱼᵀ Gⱼ
    let gj = factor.g.column(j);
    let coupling = xv.tr_mul(&gj);
    let s = t[j] / denom;

    let inv_shift = 1.0 / factor.shift;
    let out = DVector::from_iterator(
        p - 1,
        (0..p)
            .filter(|&l| l != j)
            .map(|l| (full[l] - t[l] - coupling[l] * s) * inv_shift),
    );
    Ok(out)
}

/// Inserts a zero at position `j` of a `(p−1)`-vector.
pub(crate) fn embed(v: &DVector<f64>, j: usize) -> DVector<f64> {
    let p = v.len() + 1;
    DVector::from_iterator(
        p,
        (0..p).map(|l| match l.cmp(&j) {
            std::cmp::Ordering::Less => v[l],
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Greater => v[l - 1],
        }),
    )
}

/// Symmetric eigendecomposition `A = Y diag(Λ) Yᵀ`, eigenvalues ascending.
pub fn sym_eigen(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {}×{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entry in eigen input".into()));
    }
    let scale = a.amax().max(1.0);
    let p = a.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::Numerical(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let eig = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&l, &r| eig.eigenvalues[l].total_cmp(&eig.eigenvalues[r]));
    let values = DVector::from_iterator(p, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(p, p);
    for (c, &i) in order.iter().enumerate() {
        vectors.set_column(c, &eig.eigenvectors.column(i));
    }
    Ok((vectors, values))
}
