//! Finite-difference surrogates built from one iteration's shared samples.
//!
//! An [`EstimatorBatch`] holds the direction pool, the noise tokens and a
//! table of function values keyed symbolically by
//! `(level, anchor, stencil, sample)`. Every estimator asks the batch for the
//! stencil points it needs; points already in the table are reused, so the
//! number of fresh evaluations an iteration pays is exactly the number of
//! distinct keys it touches.
//!
//! Reductions always run over `(sample i, direction j)` in lexicographic
//! order on the completed table, so results do not depend on whether the
//! evaluations themselves ran in parallel.

use std::collections::{HashMap, HashSet};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::problem::{BilevelOracle, Level};
use crate::rng::RunStreams;

/// Gaussian directions for one iteration: `samples * per_sample` rows of `w`
/// (length `p`) and of `u` (length `d`). Row `(i, j)` is stored at
/// `i * per_sample + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionPool {
    p: usize,
    d: usize,
    samples: usize,
    per_sample: usize,
    w: Vec<f64>,
    u: Vec<f64>,
}

impl DirectionPool {
    pub fn sample(
        samples: usize,
        per_sample: usize,
        p: usize,
        d: usize,
        streams: &mut RunStreams,
    ) -> Self {
        let rows = samples * per_sample;
        let mut w = vec![0.0; rows * p];
        let mut u = vec![0.0; rows * d];
        streams.directions_w.fill_standard_normal(&mut w);
        streams.directions_u.fill_standard_normal(&mut u);
        Self {
            p,
            d,
            samples,
            per_sample,
            w,
            u,
        }
    }

    /// Pool with caller-chosen rows (row-major, `samples * per_sample` rows).
    pub fn from_rows(
        samples: usize,
        per_sample: usize,
        p: usize,
        d: usize,
        w: Vec<f64>,
        u: Vec<f64>,
    ) -> Result<Self> {
        let rows = samples * per_sample;
        if w.len() != rows * p || u.len() != rows * d {
            return Err(Error::config(format!(
                "direction rows have lengths ({}, {}), expected ({}, {})",
                w.len(),
                u.len(),
                rows * p,
                rows * d
            )));
        }
        Ok(Self {
            p,
            d,
            samples,
            per_sample,
            w,
            u,
        })
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn per_sample(&self) -> usize {
        self.per_sample
    }

    pub fn w(&self, i: usize, j: usize) -> &[f64] {
        let r = i * self.per_sample + j;
        &self.w[r * self.p..(r + 1) * self.p]
    }

    pub fn u(&self, i: usize, j: usize) -> &[f64] {
        let r = i * self.per_sample + j;
        &self.u[r * self.d..(r + 1) * self.d]
    }
}

/// Symbolic handle of a base point `(z, x)` registered in a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AnchorId(usize);

impl AnchorId {
    /// The `(z_k, x_k)` point the batch was drawn at.
    pub const BASE: AnchorId = AnchorId(0);
}

/// Offset applied to an anchor; `j` indexes the direction within a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stencil {
    Base,
    /// `(z + h w, x)`
    PlusZ(usize),
    /// `(z - h w, x)`
    MinusZ(usize),
    /// `(z, x + h u)`
    PlusX(usize),
    /// `(z + h w, x + h u)`
    PlusJoint(usize),
    /// `(z - h w, x - h u)`
    MinusJoint(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EvalKey {
    pub level: Level,
    pub anchor: AnchorId,
    pub stencil: Stencil,
    pub sample: usize,
}

/// Target of a forward-difference gradient surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardTarget {
    OuterInZ,
    OuterInX,
    InnerInZ,
    InnerInX,
}

impl ForwardTarget {
    fn level(self) -> Level {
        match self {
            ForwardTarget::OuterInZ | ForwardTarget::OuterInX => Level::Outer,
            ForwardTarget::InnerInZ | ForwardTarget::InnerInX => Level::Inner,
        }
    }

    fn in_z(self) -> bool {
        matches!(self, ForwardTarget::OuterInZ | ForwardTarget::InnerInZ)
    }
}

/// One iteration's samples plus the evaluation table.
pub struct EstimatorBatch<'o, O: BilevelOracle> {
    oracle: &'o O,
    pool: DirectionPool,
    inner_noise: Vec<O::Noise>,
    outer_noise: Vec<O::Noise>,
    h: f64,
    anchors: Vec<(DVector<f64>, DVector<f64>)>,
    table: HashMap<EvalKey, f64>,
    fresh_inner: u64,
    fresh_outer: u64,
    parallel: bool,
}

impl<'o, O: BilevelOracle> EstimatorBatch<'o, O> {
    /// Draws `samples` inner and outer noise tokens and a
    /// `samples x per_sample` direction pool from `streams`.
    pub fn draw(
        oracle: &'o O,
        streams: &mut RunStreams,
        samples: usize,
        per_sample: usize,
        h: f64,
        z: DVector<f64>,
        x: DVector<f64>,
    ) -> Result<Self> {
        let inner_noise = (0..samples)
            .map(|_| oracle.sample_inner_noise(&mut streams.inner_noise))
            .collect();
        let outer_noise = (0..samples)
            .map(|_| oracle.sample_outer_noise(&mut streams.outer_noise))
            .collect();
        let pool = DirectionPool::sample(
            samples,
            per_sample,
            oracle.inner_dim(),
            oracle.outer_dim(),
            streams,
        );
        Self::with_samples(oracle, pool, inner_noise, outer_noise, h, z, x)
    }

    pub fn with_samples(
        oracle: &'o O,
        pool: DirectionPool,
        inner_noise: Vec<O::Noise>,
        outer_noise: Vec<O::Noise>,
        h: f64,
        z: DVector<f64>,
        x: DVector<f64>,
    ) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::config(format!("discretization h must be positive, got {h}")));
        }
        if pool.p != oracle.inner_dim() || pool.d != oracle.outer_dim() {
            return Err(Error::config("direction pool dimensions do not match the oracle"));
        }
        if inner_noise.len() < pool.samples || outer_noise.len() < pool.samples {
            return Err(Error::config("fewer noise tokens than pool samples"));
        }
        if z.len() != pool.p || x.len() != pool.d {
            return Err(Error::config(format!(
                "point has dims ({}, {}), oracle expects ({}, {})",
                z.len(),
                x.len(),
                pool.p,
                pool.d
            )));
        }
        Ok(Self {
            oracle,
            pool,
            inner_noise,
            outer_noise,
            h,
            anchors: vec![(z, x)],
            table: HashMap::new(),
            fresh_inner: 0,
            fresh_outer: 0,
            parallel: false,
        })
    }

    /// Evaluate missing stencil points on the rayon pool.
    pub fn parallel(mut self, on: bool) -> Self {
        self.parallel = on;
        self
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn pool(&self) -> &DirectionPool {
        &self.pool
    }

    /// Registers a new symbolic anchor. Anchors are never merged, even when
    /// their coordinates coincide.
    pub fn add_anchor(&mut self, z: DVector<f64>, x: DVector<f64>) -> AnchorId {
        self.anchors.push((z, x));
        AnchorId(self.anchors.len() - 1)
    }

    pub fn anchor(&self, id: AnchorId) -> (&DVector<f64>, &DVector<f64>) {
        let (z, x) = &self.anchors[id.0];
        (z, x)
    }

    pub fn fresh_evaluations(&self, level: Level) -> u64 {
        match level {
            Level::Inner => self.fresh_inner,
            Level::Outer => self.fresh_outer,
        }
    }

    fn check_sizes(&self, b: usize, l: usize) -> Result<()> {
        if b == 0 || l == 0 {
            return Err(Error::config("batch size and direction count must be >= 1"));
        }
        if b > self.pool.samples || l > self.pool.per_sample {
            return Err(Error::config(format!(
                "requested (b={b}, l={l}) exceeds the pool ({}, {})",
                self.pool.samples, self.pool.per_sample
            )));
        }
        Ok(())
    }

    fn point(&self, key: &EvalKey) -> (Vec<f64>, Vec<f64>) {
        let (z0, x0) = &self.anchors[key.anchor.0];
        let mut z = z0.as_slice().to_vec();
        let mut x = x0.as_slice().to_vec();
        let h = self.h;
        let i = key.sample;
        let axpy = |dst: &mut [f64], dir: &[f64], s: f64| {
            for (a, b) in dst.iter_mut().zip(dir) {
                *a += s * b;
            }
        };
        match key.stencil {
            Stencil::Base => {}
            Stencil::PlusZ(j) => axpy(&mut z, self.pool.w(i, j), h),
            Stencil::MinusZ(j) => axpy(&mut z, self.pool.w(i, j), -h),
            Stencil::PlusX(j) => axpy(&mut x, self.pool.u(i, j), h),
            Stencil::PlusJoint(j) => {
                axpy(&mut z, self.pool.w(i, j), h);
                axpy(&mut x, self.pool.u(i, j), h);
            }
            Stencil::MinusJoint(j) => {
                axpy(&mut z, self.pool.w(i, j), -h);
                axpy(&mut x, self.pool.u(i, j), -h);
            }
        }
        (z, x)
    }

    fn evaluate(&self, key: &EvalKey) -> f64 {
        let (z, x) = self.point(key);
        let noise = match key.level {
            Level::Inner => self.inner_noise[key.sample],
            Level::Outer => self.outer_noise[key.sample],
        };
        self.oracle.eval(key.level, &z, &x, noise)
    }

    /// Evaluates every key not yet in the table, each exactly once.
    pub fn ensure(&mut self, keys: &[EvalKey]) {
        let mut scheduled = HashSet::new();
        let missing: Vec<EvalKey> = keys
            .iter()
            .filter(|k| !self.table.contains_key(k) && scheduled.insert(**k))
            .copied()
            .collect();
        if missing.is_empty() {
            return;
        }
        let values: Vec<f64> = if self.parallel {
            missing.par_iter().map(|k| self.evaluate(k)).collect()
        } else {
            missing.iter().map(|k| self.evaluate(k)).collect()
        };
        for (key, value) in missing.into_iter().zip(values) {
            match key.level {
                Level::Inner => self.fresh_inner += 1,
                Level::Outer => self.fresh_outer += 1,
            }
            self.table.insert(key, value);
        }
    }

    /// Value of an already-evaluated key.
    ///
    /// Panics when the key was never evaluated: estimators that only reuse
    /// points rely on an earlier estimator having paid for them.
    pub fn cached(&self, key: &EvalKey) -> f64 {
        match self.table.get(key) {
            Some(v) => *v,
            None => panic!("stencil point {key:?} was required but never evaluated"),
        }
    }

    fn key(level: Level, anchor: AnchorId, stencil: Stencil, sample: usize) -> EvalKey {
        EvalKey {
            level,
            anchor,
            stencil,
            sample,
        }
    }

    /// Central-difference inner gradient at the base anchor:
    /// `(1 / b l) sum_ij (g(z + h w) - g(z - h w)) / (2h) * w`.
    pub fn grad_central_inner(&mut self, b1: usize, l1: usize) -> Result<DVector<f64>> {
        self.check_sizes(b1, l1)?;
        let a = AnchorId::BASE;
        let mut keys = Vec::with_capacity(2 * b1 * l1);
        for i in 0..b1 {
            for j in 0..l1 {
                keys.push(Self::key(Level::Inner, a, Stencil::PlusZ(j), i));
                keys.push(Self::key(Level::Inner, a, Stencil::MinusZ(j), i));
            }
        }
        self.ensure(&keys);

        let mut acc = DVector::zeros(self.pool.p);
        for i in 0..b1 {
            for j in 0..l1 {
                let plus = self.cached(&Self::key(Level::Inner, a, Stencil::PlusZ(j), i));
                let minus = self.cached(&Self::key(Level::Inner, a, Stencil::MinusZ(j), i));
                let coef = (plus - minus) / (2.0 * self.h);
                for (acc, w) in acc.iter_mut().zip(self.pool.w(i, j)) {
                    *acc += coef * w;
                }
            }
        }
        Ok(acc / (b1 * l1) as f64)
    }

    /// Forward-difference gradient surrogate at `anchor`:
    /// `(1 / b l) sum_ij (value(shifted) - value(anchor)) / h * direction`,
    /// using `w` rows for the `z` variants and `u` rows for the `x` variants.
    pub fn grad_forward(
        &mut self,
        target: ForwardTarget,
        anchor: AnchorId,
        b: usize,
        l: usize,
    ) -> Result<DVector<f64>> {
        self.check_sizes(b, l)?;
        let level = target.level();
        let shifted = |j| {
            if target.in_z() {
                Stencil::PlusZ(j)
            } else {
                Stencil::PlusX(j)
            }
        };
        let mut keys = Vec::with_capacity(b * (l + 1));
        for i in 0..b {
            keys.push(Self::key(level, anchor, Stencil::Base, i));
            for j in 0..l {
                keys.push(Self::key(level, anchor, shifted(j), i));
            }
        }
        self.ensure(&keys);

        let dim = if target.in_z() { self.pool.p } else { self.pool.d };
        let mut acc = DVector::zeros(dim);
        for i in 0..b {
            let base = self.cached(&Self::key(level, anchor, Stencil::Base, i));
            for j in 0..l {
                let value = self.cached(&Self::key(level, anchor, shifted(j), i));
                let coef = (value - base) / self.h;
                let dir = if target.in_z() {
                    self.pool.w(i, j)
                } else {
                    self.pool.u(i, j)
                };
                for (acc, e) in acc.iter_mut().zip(dir) {
                    *acc += coef * e;
                }
            }
        }
        Ok(acc / (b * l) as f64)
    }

    /// Inner Hessian surrogate `(1 / b l) sum_ij c_ij (w w^T - I)` with
    /// `c_ij = (g(z + h w) + g(z - h w) - 2 g(z)) / (2 h^2)`.
    ///
    /// Reuses the `±h w` points of [`Self::grad_central_inner`]; only the base
    /// values are evaluated here.
    pub fn hess_zz(&mut self, b1: usize, l1: usize) -> Result<DMatrix<f64>> {
        self.check_sizes(b1, l1)?;
        let a = AnchorId::BASE;
        let base_keys: Vec<_> = (0..b1)
            .map(|i| Self::key(Level::Inner, a, Stencil::Base, i))
            .collect();
        self.ensure(&base_keys);

        let p = self.pool.p;
        let h2 = 2.0 * self.h * self.h;
        let mut acc = DMatrix::zeros(p, p);
        for (i, key) in base_keys.iter().enumerate() {
            let base = self.cached(key);
            for j in 0..l1 {
                let plus = self.cached(&Self::key(Level::Inner, a, Stencil::PlusZ(j), i));
                let minus = self.cached(&Self::key(Level::Inner, a, Stencil::MinusZ(j), i));
                let c = (plus + minus - 2.0 * base) / h2;
                let w = self.pool.w(i, j);
                for col in 0..p {
                    for row in 0..p {
                        let outer = w[row] * w[col] - if row == col { 1.0 } else { 0.0 };
                        acc[(row, col)] += c * outer;
                    }
                }
            }
        }
        Ok(acc / (b1 * l1) as f64)
    }

    /// Cross-block surrogate (`d x p`) `(1 / b l) sum_ij s_ij u w^T` with
    /// `s_ij = (g(z + h w, x + h u) + g(z - h w, x - h u) - 2 g(z, x)) / (2 h^2)`.
    ///
    /// Pays for the jointly shifted points; base values are shared with
    /// [`Self::hess_zz`].
    pub fn hess_xz(&mut self, b1: usize, l1: usize) -> Result<DMatrix<f64>> {
        self.check_sizes(b1, l1)?;
        let a = AnchorId::BASE;
        let mut keys = Vec::with_capacity((2 * l1 + 1) * b1);
        for i in 0..b1 {
            keys.push(Self::key(Level::Inner, a, Stencil::Base, i));
            for j in 0..l1 {
                keys.push(Self::key(Level::Inner, a, Stencil::PlusJoint(j), i));
                keys.push(Self::key(Level::Inner, a, Stencil::MinusJoint(j), i));
            }
        }
        self.ensure(&keys);

        let (p, d) = (self.pool.p, self.pool.d);
        let h2 = 2.0 * self.h * self.h;
        let mut acc = DMatrix::zeros(d, p);
        for i in 0..b1 {
            let base = self.cached(&Self::key(Level::Inner, a, Stencil::Base, i));
            for j in 0..l1 {
                let plus = self.cached(&Self::key(Level::Inner, a, Stencil::PlusJoint(j), i));
                let minus = self.cached(&Self::key(Level::Inner, a, Stencil::MinusJoint(j), i));
                let s = (plus + minus - 2.0 * base) / h2;
                let (w, u) = (self.pool.w(i, j), self.pool.u(i, j));
                for col in 0..p {
                    for row in 0..d {
                        acc[(row, col)] += s * u[row] * w[col];
                    }
                }
            }
        }
        Ok(acc / (b1 * l1) as f64)
    }
}

/// First-order Hessian-vector product through a gradient map:
/// `(grad_map(z + hbar v, x) - grad_map(z, x)) / hbar`.
pub fn hvp_forward<M>(
    mut grad_map: M,
    z: &DVector<f64>,
    x: &DVector<f64>,
    v: &DVector<f64>,
    hbar: f64,
) -> Result<DVector<f64>>
where
    M: FnMut(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>>,
{
    check_hbar(hbar)?;
    let shifted = grad_map(&(z + v * hbar), x)?;
    let base = grad_map(z, x)?;
    hvp_from_gradients(&shifted, &base, hbar)
}

/// Same difference quotient when both gradients are already available.
pub fn hvp_from_gradients(
    shifted: &DVector<f64>,
    base: &DVector<f64>,
    hbar: f64,
) -> Result<DVector<f64>> {
    check_hbar(hbar)?;
    Ok((shifted - base) / hbar)
}

fn check_hbar(hbar: f64) -> Result<()> {
    if hbar.is_finite() && hbar > 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!("HVP step must be positive, got {hbar}")))
    }
}
