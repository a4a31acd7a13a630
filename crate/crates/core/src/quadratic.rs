//! Synthetic quadratic bilevel benchmark with closed-form reference values.
//!
//! ```text
//! G(z, x) = 1/(2m) |A z - B x - a|^2
//! F(z, x) = 1/(2n) |C z - D x - b|^2 + 1/2 |x - x_bar|^2
//! ```
//!
//! with Gaussian `A (m x p)`, `B (m x d)`, `C (n x p)`, `D (n x d)` and
//! `a = A z_bar - B x_bar`, `b = C z_bar - D x_bar`, so that `Psi >= 0` with
//! `Psi(x_bar) = 0`. The stochastic oracle draws one row index uniformly
//! (with replacement) per noise token.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::BilevelOracle;
use crate::rng::{Stream, StreamTag};

/// Largest accepted condition number of `A^T A`.
pub const MAX_CONDITION: f64 = 1e12;
const MAX_ATTEMPTS: u64 = 5;

/// Regenerable description of an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub p: usize,
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    /// Defaults to `(2, ..., 2)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_bar: Option<Vec<f64>>,
    /// Defaults to `(1, ..., 1)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_bar: Option<Vec<f64>>,
}

impl InstanceSpec {
    /// Desk-scale default: `p = d = 10`, `n = m = 200`.
    pub fn desk(seed: u64) -> Self {
        Self {
            p: 10,
            d: 10,
            n: 200,
            m: 200,
            seed,
            z_bar: None,
            x_bar: None,
        }
    }

    pub fn id(&self) -> String {
        format!("quad-p{}-d{}-n{}-m{}-s{}", self.p, self.d, self.n, self.m, self.seed)
    }

    fn resolved_targets(&self) -> Result<(DVector<f64>, DVector<f64>)> {
        let z_bar = match &self.z_bar {
            Some(v) if v.len() != self.p => {
                return Err(Error::config(format!("z_bar has length {}, expected {}", v.len(), self.p)))
            }
            Some(v) => DVector::from_column_slice(v),
            None => DVector::from_element(self.p, 2.0),
        };
        let x_bar = match &self.x_bar {
            Some(v) if v.len() != self.d => {
                return Err(Error::config(format!("x_bar has length {}, expected {}", v.len(), self.d)))
            }
            Some(v) => DVector::from_column_slice(v),
            None => DVector::from_element(self.d, 1.0),
        };
        Ok((z_bar, x_bar))
    }
}

#[derive(Debug, Clone)]
pub struct QuadraticInstance {
    id: String,
    spec: Option<InstanceSpec>,
    /// `A`, `m x p`.
    inner_z: DMatrix<f64>,
    /// `B`, `m x d`.
    inner_x: DMatrix<f64>,
    /// `C`, `n x p`.
    outer_z: DMatrix<f64>,
    /// `D`, `n x d`.
    outer_x: DMatrix<f64>,
    /// `a`
    inner_offset: DVector<f64>,
    /// `b`
    outer_offset: DVector<f64>,
    z_bar: DVector<f64>,
    x_bar: DVector<f64>,
    ata: Cholesky<f64, Dyn>,
    // Row-major copies of [A | B] and [C | D] for per-row evaluation.
    inner_rows: Vec<f64>,
    outer_rows: Vec<f64>,
}

fn gaussian(rows: usize, cols: usize, stream: &mut Stream) -> DMatrix<f64> {
    let mut data = vec![0.0; rows * cols];
    stream.fill_standard_normal(&mut data);
    DMatrix::from_row_slice(rows, cols, &data)
}

fn row_major(left: &DMatrix<f64>, right: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(left.nrows() * (left.ncols() + right.ncols()));
    for r in 0..left.nrows() {
        out.extend(left.row(r).iter());
        out.extend(right.row(r).iter());
    }
    out
}

fn factorize(inner_z: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let ata = inner_z.tr_mul(inner_z);
    let eig = SymmetricEigen::new(ata.clone()).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if lo.is_nan() || lo <= 0.0 || hi / lo > MAX_CONDITION {
        return None;
    }
    Cholesky::new(ata)
}

/// Draws a Gaussian instance. `A^T A` must be well conditioned; otherwise
/// the matrices are redrawn from a derived sub-seed, up to five attempts.
pub fn generate_instance(spec: &InstanceSpec) -> Result<QuadraticInstance> {
    let InstanceSpec { p, d, n, m, seed, .. } = *spec;
    if p == 0 || d == 0 || n == 0 || m == 0 {
        return Err(Error::config("instance dimensions must be >= 1"));
    }
    if m < p {
        return Err(Error::config(format!("need m >= p for an invertible A^T A (m={m}, p={p})")));
    }
    let (z_bar, x_bar) = spec.resolved_targets()?;
    for attempt in 0..MAX_ATTEMPTS {
        let mut stream = Stream::derive(seed, StreamTag::Instance, attempt);
        let a = gaussian(m, p, &mut stream);
        let b = gaussian(m, d, &mut stream);
        let c = gaussian(n, p, &mut stream);
        let dm = gaussian(n, d, &mut stream);
        if factorize(&a).is_none() {
            continue;
        }
        let mut inst = QuadraticInstance::assemble(a, b, c, dm, z_bar.clone(), x_bar.clone())?;
        inst.id = spec.id();
        inst.spec = Some(spec.clone());
        return Ok(inst);
    }
    Err(Error::Singular(format!(
        "A^T A ill-conditioned in {MAX_ATTEMPTS} attempts for {}",
        spec.id()
    )))
}

impl QuadraticInstance {
    /// Instance from explicit matrices; `a` and `b` are derived from
    /// `z_bar`, `x_bar`.
    pub fn from_matrices(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        z_bar: DVector<f64>,
        x_bar: DVector<f64>,
    ) -> Result<Self> {
        let (m, p) = a.shape();
        let (n, dd) = d.shape();
        if b.shape() != (m, dd) || c.shape() != (n, p) || z_bar.len() != p || x_bar.len() != dd {
            return Err(Error::config("inconsistent matrix shapes"));
        }
        Self::assemble(a, b, c, d, z_bar, x_bar)
    }

    fn assemble(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        z_bar: DVector<f64>,
        x_bar: DVector<f64>,
    ) -> Result<Self> {
        let ata = factorize(&a).ok_or_else(|| Error::Singular("A^T A is singular or ill-conditioned".into()))?;
        let inner_offset = &a * &z_bar - &b * &x_bar;
        let outer_offset = &c * &z_bar - &d * &x_bar;
        let inner_rows = row_major(&a, &b);
        let outer_rows = row_major(&c, &d);
        Ok(Self {
            id: "custom".into(),
            spec: None,
            inner_z: a,
            inner_x: b,
            outer_z: c,
            outer_x: d,
            inner_offset,
            outer_offset,
            z_bar,
            x_bar,
            ata,
            inner_rows,
            outer_rows,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// The [`InstanceSpec`] this instance was generated from, if any.
    pub fn spec(&self) -> Option<&InstanceSpec> {
        self.spec.as_ref()
    }

    pub fn to_json(&self) -> Result<String> {
        let spec = self
            .spec
            .as_ref()
            .ok_or_else(|| Error::config("instance built from explicit matrices cannot be regenerated"))?;
        Ok(serde_json::json!({ "id": self.id, "spec": spec }).to_string())
    }

    pub fn p(&self) -> usize {
        self.inner_z.ncols()
    }

    pub fn d(&self) -> usize {
        self.inner_x.ncols()
    }

    pub fn m(&self) -> usize {
        self.inner_z.nrows()
    }

    pub fn n(&self) -> usize {
        self.outer_z.nrows()
    }

    pub fn z_bar(&self) -> &DVector<f64> {
        &self.z_bar
    }

    pub fn x_bar(&self) -> &DVector<f64> {
        &self.x_bar
    }

    pub fn matrices(&self) -> [&DMatrix<f64>; 4] {
        [&self.inner_z, &self.inner_x, &self.outer_z, &self.outer_x]
    }

    pub fn offsets(&self) -> (&DVector<f64>, &DVector<f64>) {
        (&self.inner_offset, &self.outer_offset)
    }

    fn inner_residual(&self, z: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        &self.inner_z * z - &self.inner_x * x - &self.inner_offset
    }

    fn outer_residual(&self, z: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        &self.outer_z * z - &self.outer_x * x - &self.outer_offset
    }

    /// `G(z, x)`
    pub fn inner_value(&self, z: &DVector<f64>, x: &DVector<f64>) -> f64 {
        self.inner_residual(z, x).norm_squared() / (2.0 * self.m() as f64)
    }

    /// `F(z, x)`
    pub fn outer_value(&self, z: &DVector<f64>, x: &DVector<f64>) -> f64 {
        self.outer_residual(z, x).norm_squared() / (2.0 * self.n() as f64)
            + 0.5 * (x - &self.x_bar).norm_squared()
    }

    pub fn inner_grad_z(&self, z: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        self.inner_z.tr_mul(&self.inner_residual(z, x)) / self.m() as f64
    }

    pub fn inner_grad_x(&self, z: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        -self.inner_x.tr_mul(&self.inner_residual(z, x)) / self.m() as f64
    }

    /// `A^T A / m`
    pub fn inner_hess_zz(&self) -> DMatrix<f64> {
        self.inner_z.tr_mul(&self.inner_z) / self.m() as f64
    }

    /// `-B^T A / m` (`d x p`)
    pub fn inner_hess_xz(&self) -> DMatrix<f64> {
        -self.inner_x.tr_mul(&self.inner_z) / self.m() as f64
    }

    pub fn outer_grad_z(&self, z: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        self.outer_z.tr_mul(&self.outer_residual(z, x)) / self.n() as f64
    }

    pub fn outer_grad_x(&self, z: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        -self.outer_x.tr_mul(&self.outer_residual(z, x)) / self.n() as f64 + (x - &self.x_bar)
    }

    /// Inner solution `(A^T A)^{-1} A^T (B x + a)`.
    pub fn z_star(&self, x: &DVector<f64>) -> DVector<f64> {
        let rhs = self.inner_z.tr_mul(&(&self.inner_x * x + &self.inner_offset));
        self.ata.solve(&rhs)
    }

    /// `-(m/n) (A^T A)^{-1} C^T (C z* - D x - b)`.
    pub fn v_star(&self, x: &DVector<f64>) -> DVector<f64> {
        let z = self.z_star(x);
        self.v_star_at(&z, x)
    }

    fn v_star_at(&self, z_star: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        let rhs = self.outer_grad_z(z_star, x);
        -(self.ata.solve(&rhs) * self.m() as f64)
    }

    pub fn psi(&self, x: &DVector<f64>) -> f64 {
        self.outer_value(&self.z_star(x), x)
    }

    /// `Psi(x)` and the hypergradient `grad_x F(z*, x) + grad2_xz G v*`.
    pub fn psi_and_grad(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let z = self.z_star(x);
        let v = self.v_star_at(&z, x);
        let psi = self.outer_value(&z, x);
        let grad = self.outer_grad_x(&z, x) + self.inner_hess_xz() * v;
        (psi, grad)
    }

    /// `min Psi`, attained at `x_bar`.
    pub fn min_psi(&self) -> f64 {
        0.0
    }

    fn row_residual(rows: &[f64], width: usize, r: usize, z: &[f64], x: &[f64], offset: f64) -> f64 {
        let row = &rows[r * width..(r + 1) * width];
        let (rz, rx) = row.split_at(z.len());
        let mut acc = -offset;
        for (a, b) in rz.iter().zip(z) {
            acc += a * b;
        }
        for (a, b) in rx.iter().zip(x) {
            acc -= a * b;
        }
        acc
    }
}

impl BilevelOracle for QuadraticInstance {
    type Noise = usize;

    fn inner_dim(&self) -> usize {
        self.p()
    }

    fn outer_dim(&self) -> usize {
        self.d()
    }

    fn eval_inner(&self, z: &[f64], x: &[f64], row: usize) -> f64 {
        assert!(row < self.m(), "inner row {row} out of range");
        let r = Self::row_residual(&self.inner_rows, self.p() + self.d(), row, z, x, self.inner_offset[row]);
        0.5 * r * r
    }

    fn eval_outer(&self, z: &[f64], x: &[f64], row: usize) -> f64 {
        assert!(row < self.n(), "outer row {row} out of range");
        let r = Self::row_residual(&self.outer_rows, self.p() + self.d(), row, z, x, self.outer_offset[row]);
        let reg: f64 = x.iter().zip(self.x_bar.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        0.5 * r * r + 0.5 * reg
    }

    fn sample_inner_noise(&self, stream: &mut Stream) -> usize {
        stream.index(self.m())
    }

    fn sample_outer_noise(&self, stream: &mut Stream) -> usize {
        stream.index(self.n())
    }
}
