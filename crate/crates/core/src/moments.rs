//! Exact first and second moments of `G x(k)` for
//! `x(k+1) = A(k) x(k) + B u(k)` with independent random entries in `A(k)`.
//!
//! # Product convention
//!
//! A slice of models `[A(a), A(a+1), …, A(b)]` always denotes the product
//! `A(b)·…·A(a+1)·A(a)`: the first element is applied first. Writing
//! `Φ(k, τ) = A(k-1)·…·A(τ)` (with `Φ(k, k) = I`), the state is
//!
//! ```text
//! x(k) = Φ(k, 0) x0 + Σ_{t<k} Φ(k, t+1) B u(t)
//! ```
//!
//! which is the stacked form `x(k) = Φ(k,0) x0 + C_{k-1} (I_N ⊗ B) U` where
//! column block `t` of `C_{k-1}` is `Φ(k, t+1)` for `t < k-1`, `I` for
//! `t = k-1` and `0` for `t ≥ k`.
//!
//! The variance of `G x(k)` is a quadratic form in the stacked vector
//! `(x0, B u(0), …, B u(k-1))`. Its blocks are built from
//! `S(τ) = E[Φ(k,τ)ᵀ Gᵀ G Φ(k,τ)]`, obtained backwards through
//! [`quad_form_mean`], and from products of entrywise means:
//!
//! ```text
//! Cov(G Φ(k,τ1) e_j, G Φ(k,τ2) e_m) = [Φ̄(τ2,τ1)ᵀ S(τ2) − ḡ_τ1 ḡ_τ2ᵀ]_{j,m},   τ1 ≤ τ2
//! ```
//!
//! with `ḡ_τ = Φ̄(k,τ)ᵀ Gᵀ`. Since `Φ̄(τ2,τ1)ᵀ ḡ_τ2 = ḡ_τ1`, this equals
//! `Φ̄(τ2,τ1)ᵀ D(τ2)` for `D(τ) = S(τ) − ḡ_τ ḡ_τᵀ`, which obeys
//! `D(τ) = Āᵀ D(τ+1) Ā + diag_j(Σ_r S(τ+1)_rr Var a_rj)` and is assembled
//! without cancellation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::stochastics::DistributionSpec;
use crate::{Error, Result};

/// Eigenvalues of a variance form below `-PSD_TOL·max(1, ‖Q‖)` signal an
/// algebra error rather than round-off.
pub const PSD_TOL: f64 = 1e-9;
/// Allowed round-off when splitting the constant part of the norm form.
pub const NORM_RESIDUAL_TOL: f64 = 1e-8;
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    Deterministic,
    Distributional,
    FiniteSupport,
}

/// One entry of a random state matrix with its cached moments.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomEntry {
    dist: DistributionSpec,
    mean: f64,
    variance: f64,
    raw: [f64; 6],
}

impl RandomEntry {
    pub fn constant(value: f64) -> Self {
        Self::from_distribution(DistributionSpec::constant(value))
            .expect("constants have all moments")
    }

    pub fn from_distribution(dist: DistributionSpec) -> Result<Self> {
        dist.validate()?;
        let mut raw = [0.0; 6];
        for (p, slot) in raw.iter_mut().enumerate() {
            *slot = dist.raw_moment(p as u32 + 1)?;
        }
        let variance = if dist.is_constant() { 0.0 } else { dist.variance() };
        Ok(Self {
            mean: dist.mean(),
            variance,
            raw,
            dist,
        })
    }

    pub fn kind(&self) -> EntryKind {
        if self.dist.is_constant() {
            EntryKind::Deterministic
        } else if self.dist.support().is_some() {
            EntryKind::FiniteSupport
        } else {
            EntryKind::Distributional
        }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Raw moment `E[a^p]` for `1 ≤ p ≤ 6`.
    pub fn raw_moment(&self, p: u32) -> Option<f64> {
        (1..=6).contains(&p).then(|| self.raw[p as usize - 1])
    }

    pub fn distribution(&self) -> &DistributionSpec {
        &self.dist
    }

    pub fn support(&self) -> Option<Vec<(f64, f64)>> {
        self.dist.support()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind() {
            EntryKind::Deterministic => self.mean,
            _ => self.dist.draw(rng),
        }
    }
}

/// Square matrix of mutually independent random entries.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomMatrixModel {
    n: usize,
    entries: Vec<RandomEntry>,
}

impl RandomMatrixModel {
    /// `entries` are row-major.
    pub fn new(n: usize, entries: Vec<RandomEntry>) -> Result<Self> {
        if n == 0 || entries.len() != n * n {
            return Err(Error::Dimension(format!(
                "random matrix of order {n} needs {} entries, got {}",
                n * n,
                entries.len()
            )));
        }
        Ok(Self { n, entries })
    }

    pub fn deterministic(a: &DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension(format!(
                "state matrix must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let n = a.nrows();
        let entries = (0..n * n)
            .map(|idx| RandomEntry::constant(a[(idx / n, idx % n)]))
            .collect();
        Self::new(n, entries)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn entry(&self, row: usize, col: usize) -> &RandomEntry {
        &self.entries[row * self.n + col]
    }

    pub fn entries(&self) -> &[RandomEntry] {
        &self.entries
    }

    pub fn mean_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.entry(i, j).mean())
    }

    /// Entrywise variances.
    pub fn variance_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.entry(i, j).variance())
    }

    pub fn transpose(&self) -> Self {
        let n = self.n;
        let entries = (0..n * n)
            .map(|idx| self.entry(idx % n, idx / n).clone())
            .collect();
        Self { n, entries }
    }

    pub fn is_deterministic(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.kind() == EntryKind::Deterministic)
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        // row-major draw order is part of the reproducibility contract
        let mut out = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                out[(i, j)] = self.entry(i, j).draw(rng);
            }
        }
        out
    }
}

/// Per-step admissible inputs `{u : A_u u ≤ b_u}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputPolytope {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl InputPolytope {
    pub fn unconstrained(m: usize) -> Self {
        Self {
            a: DMatrix::zeros(0, m),
            b: DVector::zeros(0),
        }
    }

    pub fn boxed(lower: &[f64], upper: &[f64]) -> Self {
        let m = lower.len();
        let mut a = DMatrix::zeros(2 * m, m);
        let mut b = DVector::zeros(2 * m);
        for i in 0..m {
            a[(i, i)] = -1.0;
            b[i] = -lower[i];
            a[(m + i, i)] = 1.0;
            b[m + i] = upper[i];
        }
        Self { a, b }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    a_models: Vec<RandomMatrixModel>,
    b: DMatrix<f64>,
    x0: DVector<f64>,
    input_polytope: InputPolytope,
}

impl SystemSpec {
    /// `a_models[k]` is `A(k)` for `k = 0..N`; the horizon is their count.
    pub fn new(
        a_models: Vec<RandomMatrixModel>,
        b: DMatrix<f64>,
        x0: DVector<f64>,
        input_polytope: InputPolytope,
    ) -> Result<Self> {
        if a_models.is_empty() {
            return Err(Error::Dimension("horizon must be at least 1".into()));
        }
        let n = a_models[0].dim();
        if let Some((k, bad)) = a_models.iter().enumerate().find(|(_, a)| a.dim() != n) {
            return Err(Error::Dimension(format!(
                "A({k}) has order {}, expected {n}",
                bad.dim()
            )));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "B must be {n}xm with m ≥ 1, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if x0.len() != n {
            return Err(Error::Dimension(format!(
                "x0 has length {}, expected {n}",
                x0.len()
            )));
        }
        let p = &input_polytope;
        if p.a.ncols() != b.ncols() || p.a.nrows() != p.b.len() {
            return Err(Error::Dimension(format!(
                "input polytope is {}x{} with {} bounds, expected ?x{}",
                p.a.nrows(),
                p.a.ncols(),
                p.b.len(),
                b.ncols()
            )));
        }
        Ok(Self {
            a_models,
            b,
            x0,
            input_polytope,
        })
    }

    pub fn time_invariant(
        model: RandomMatrixModel,
        horizon: usize,
        b: DMatrix<f64>,
        x0: DVector<f64>,
        input_polytope: InputPolytope,
    ) -> Result<Self> {
        Self::new(vec![model; horizon], b, x0, input_polytope)
    }

    pub fn n(&self) -> usize {
        self.x0.len()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn horizon(&self) -> usize {
        self.a_models.len()
    }

    /// Length of the stacked input `U`.
    pub fn input_dim(&self) -> usize {
        self.horizon() * self.m()
    }

    pub fn a_models(&self) -> &[RandomMatrixModel] {
        &self.a_models
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn input_polytope(&self) -> &InputPolytope {
        &self.input_polytope
    }

    pub fn is_time_invariant(&self) -> bool {
        self.a_models.windows(2).all(|w| w[0] == w[1])
    }

    pub fn is_deterministic(&self) -> bool {
        self.a_models.iter().all(RandomMatrixModel::is_deterministic)
    }

    /// One realization `[A(0), …, A(N-1)]`.
    pub fn draw_matrices<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<DMatrix<f64>> {
        self.a_models.iter().map(|m| m.draw(rng)).collect()
    }

    /// States `x(0), …, x(N)` for realized matrices and stacked input `U`.
    pub fn simulate(&self, matrices: &[DMatrix<f64>], u: &DVector<f64>) -> Vec<DVector<f64>> {
        let m = self.m();
        let mut states = Vec::with_capacity(matrices.len() + 1);
        states.push(self.x0.clone());
        for (t, a) in matrices.iter().enumerate() {
            let ut = u.rows(t * m, m);
            let next = a * states.last().expect("non-empty") + &self.b * ut;
            states.push(next);
        }
        states
    }

    /// The stacked input map `I_N ⊗ B`.
    pub fn stacked_input_map(&self) -> DMatrix<f64> {
        DMatrix::<f64>::identity(self.horizon(), self.horizon()).kronecker(&self.b)
    }
}

fn check_chain(models: &[RandomMatrixModel]) -> Result<usize> {
    let first = models
        .first()
        .ok_or_else(|| Error::Dimension("empty matrix product".into()))?;
    let n = first.dim();
    if models.iter().any(|m| m.dim() != n) {
        return Err(Error::Dimension("inconsistent orders in matrix product".into()));
    }
    Ok(n)
}

/// `E[A(b)·…·A(a)] = Ā(b)·…·Ā(a)` for the slice `[A(a), …, A(b)]`.
pub fn product_mean(models: &[RandomMatrixModel]) -> Result<DMatrix<f64>> {
    let n = check_chain(models)?;
    Ok(models
        .iter()
        .fold(DMatrix::identity(n, n), |acc, m| m.mean_matrix() * acc))
}

/// `E[Zᵀ S Z] = Z̄ᵀ S Z̄ + diag_j(tr(S · Var(Z e_j)))` for a matrix of
/// independent entries and deterministic `S`.
pub fn quad_form_mean(model: &RandomMatrixModel, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = model.dim();
    if s.nrows() != n || s.ncols() != n {
        return Err(Error::Dimension(format!(
            "S is {}x{}, expected {n}x{n}",
            s.nrows(),
            s.ncols()
        )));
    }
    let mean = model.mean_matrix();
    let var = model.variance_matrix();
    let mut out = mean.transpose() * s * &mean;
    for j in 0..n {
        // Var(Z e_j) is diagonal, so the trace only sees S's diagonal
        let trace: f64 = (0..n).map(|r| s[(r, r)] * var[(r, j)]).sum();
        out[(j, j)] += trace;
    }
    Ok(out)
}

/// `E[A W Aᵀ]`, the outer counterpart of [`quad_form_mean`].
fn outer_quad_mean(model: &RandomMatrixModel, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    quad_form_mean(&model.transpose(), w)
}

/// `Var[A(b)·…·A(a) y]` for the slice `[A(a), …, A(b)]`.
///
/// Conditioning on the inner product `z = A(k-1)·…·A(a) y`, the law of total
/// variance gives
///
/// ```text
/// Var[A(k) z] = E[(zᵀ ⊗ I) Var(vec A(k)) (z ⊗ I)] + Ā(k) Var[z] Ā(k)ᵀ
/// ```
///
/// With independent entries `Var(vec A)` is diagonal, so the first term is
/// `diag_p(Σ_j Var(a_pj) E[z_j²])` and only the mean and covariance of `z`
/// need to be carried through the recursion.
pub fn product_vector_variance(
    models: &[RandomMatrixModel],
    y: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let n = check_chain(models)?;
    if y.len() != n {
        return Err(Error::Dimension(format!(
            "y has length {}, expected {n}",
            y.len()
        )));
    }
    let mut mean = y.clone();
    let mut cov = DMatrix::<f64>::zeros(n, n);
    for model in models {
        let a_mean = model.mean_matrix();
        let a_var = model.variance_matrix();
        let mut next = &a_mean * &cov * a_mean.transpose();
        for p in 0..n {
            let conditional: f64 = (0..n)
                .map(|j| a_var[(p, j)] * (cov[(j, j)] + mean[j] * mean[j]))
                .sum();
            next[(p, p)] += conditional;
        }
        cov = next;
        mean = a_mean * mean;
    }
    Ok(cov)
}

/// `Cov(Φ_a e_j, Φ_b e_m)` where `Φ_a = A(k)·…·A(a)` over the slice
/// `[A(0), …, A(k)]`. An index equal to the slice length denotes the empty
/// product (identity).
pub fn column_covariance(
    models: &[RandomMatrixModel],
    a: usize,
    b: usize,
    j: usize,
    m: usize,
) -> Result<DMatrix<f64>> {
    let n = check_chain(models)?;
    let len = models.len();
    if a > len || b > len {
        return Err(Error::Index(format!(
            "product start indices ({a}, {b}) exceed {len}"
        )));
    }
    if j >= n || m >= n {
        return Err(Error::Index(format!(
            "column indices ({j}, {m}) exceed order {n}"
        )));
    }
    if a > b {
        return Ok(column_covariance(models, b, a, m, j)?.transpose());
    }
    // Φ_a = Φ_b · Mid with Mid = A(b-1)·…·A(a) independent of Φ_b
    let mid = if a == b {
        DMatrix::identity(n, n)
    } else {
        product_mean(&models[a..b])?
    };
    let mut w = DMatrix::<f64>::zeros(n, n);
    w.set_column(m, &mid.column(j));
    // w = Mid̄ e_j e_mᵀ, pushed through the shared factors A(b)..A(k)
    let mut second = w;
    for model in &models[b..] {
        second = outer_quad_mean(model, &second)?;
    }
    let mean_a = if a == len {
        DMatrix::identity(n, n)
    } else {
        product_mean(&models[a..])?
    };
    let mean_b = if b == len {
        DMatrix::identity(n, n)
    } else {
        product_mean(&models[b..])?
    };
    let outer = mean_a.column(j) * mean_b.column(m).transpose();
    Ok(second - outer)
}

/// Mean and variance of `G x(k)` as functions of the stacked input `U`:
///
/// ```text
/// E   = aᵀU + b
/// Var = UᵀQU + 2qᵀU + r = ‖LᵀU + v‖² + s
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintMoments {
    pub k: usize,
    pub mean_coeff: DVector<f64>,
    pub mean_const: f64,
    pub var_quad: DMatrix<f64>,
    pub var_lin: DVector<f64>,
    pub var_const: f64,
    pub norm_l: DMatrix<f64>,
    pub norm_v: DVector<f64>,
    pub norm_s: f64,
}

impl ConstraintMoments {
    pub fn mean(&self, u: &DVector<f64>) -> f64 {
        self.mean_coeff.dot(u) + self.mean_const
    }

    pub fn variance(&self, u: &DVector<f64>) -> f64 {
        let quad = u.dot(&(&self.var_quad * u));
        (quad + 2.0 * self.var_lin.dot(u) + self.var_const).max(0.0)
    }

    pub fn variance_norm_form(&self, u: &DVector<f64>) -> f64 {
        let z = self.norm_l.transpose() * u + &self.norm_v;
        z.norm_squared() + self.norm_s
    }

    pub fn std(&self, u: &DVector<f64>) -> f64 {
        self.variance_norm_form(u).sqrt()
    }

    /// True when the variance vanishes for every `U`.
    pub fn is_deterministic(&self) -> bool {
        self.norm_l.ncols() == 0 && self.norm_s == 0.0
    }
}

fn scaled_tol(tol: f64, scale: f64) -> f64 {
    tol * scale.abs().max(1.0)
}

/// Closed-form moments of `G x(k)` for `1 ≤ k ≤ N`.
pub fn constraint_moments(
    spec: &SystemSpec,
    g: &DVector<f64>,
    k: usize,
) -> Result<ConstraintMoments> {
    let n = spec.n();
    let m = spec.m();
    let horizon = spec.horizon();
    if g.len() != n {
        return Err(Error::Dimension(format!(
            "constraint row has length {}, expected {n}",
            g.len()
        )));
    }
    if k == 0 || k > horizon {
        return Err(Error::Index(format!("time {k} outside 1..={horizon}")));
    }
    let models = &spec.a_models()[..k];
    let means: Vec<DMatrix<f64>> = models.iter().map(|a| a.mean_matrix()).collect();

    // ḡ_τ = Φ̄(k,τ)ᵀ Gᵀ and S(τ) = E[Φ(k,τ)ᵀ GᵀG Φ(k,τ)] for τ = 0..=k
    let mut g_bar = vec![DVector::zeros(n); k + 1];
    // excess[τ] = S(τ) − ḡ_τ ḡ_τᵀ, kept separately so deterministic factors
    // contribute exact zeros
    let mut excess = vec![DMatrix::zeros(n, n); k + 1];
    g_bar[k] = g.clone();
    for tau in (0..k).rev() {
        g_bar[tau] = means[tau].transpose() * &g_bar[tau + 1];
        let next_diag = excess[tau + 1].diagonal()
            + g_bar[tau + 1].component_mul(&g_bar[tau + 1]);
        let spread = models[tau].variance_matrix().transpose() * next_diag;
        excess[tau] = means[tau].transpose() * &excess[tau + 1] * &means[tau]
            + DMatrix::from_diagonal(&spread);
    }

    // blocks[τ1][τ2 - τ1] = Cov(G Φ(k,τ1) e_j, G Φ(k,τ2) e_m) for τ1 ≤ τ2
    let mut blocks: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(k + 1);
    for tau1 in 0..=k {
        let mut row = Vec::with_capacity(k + 1 - tau1);
        let mut mid = DMatrix::<f64>::identity(n, n);
        for tau2 in tau1..=k {
            row.push(mid.transpose() * &excess[tau2]);
            if tau2 < k {
                mid = &means[tau2] * mid;
            }
        }
        blocks.push(row);
    }
    let cov = |tau1: usize, tau2: usize, j: usize, l: usize| -> f64 {
        if tau1 <= tau2 {
            blocks[tau1][tau2 - tau1][(j, l)]
        } else {
            blocks[tau2][tau1 - tau2][(l, j)]
        }
    };

    // mean: b = ḡ_0ᵀ x0, input block t contributes Bᵀ ḡ_{t+1} when t < k
    let x0 = spec.x0();
    let mean_const = g_bar[0].dot(x0);
    let mut mean_coeff = DVector::zeros(horizon * m);
    for t in 0..k {
        mean_coeff
            .rows_mut(t * m, m)
            .copy_from(&(spec.b().transpose() * &g_bar[t + 1]));
    }

    // initial-state term
    let x_var = product_vector_variance(models, x0)?;
    let var_const = g.dot(&(&x_var * g));

    // stacked (I_N ⊗ B)U has N·n entries; column j of C_{k-1} belongs to
    // input time j / n and is zero once that time reaches k
    let stacked = horizon * n;
    let mut cov_inputs = DMatrix::<f64>::zeros(stacked, stacked);
    let mut cross = DVector::<f64>::zeros(stacked);
    for j in 0..stacked {
        let (tj, js) = (j / n, j % n);
        if tj >= k {
            continue;
        }
        for l in 0..stacked {
            let (tl, ls) = (l / n, l % n);
            if tl >= k {
                continue;
            }
            cov_inputs[(j, l)] = cov(tj + 1, tl + 1, js, ls);
        }
    }
    for j in 0..n {
        for l in 0..stacked {
            let (tl, ls) = (l / n, l % n);
            if tl >= k {
                continue;
            }
            cross[l] += x0[j] * cov(0, tl + 1, j, ls);
        }
    }

    let input_map = spec.stacked_input_map();
    let mut var_quad = input_map.transpose() * cov_inputs * &input_map;
    var_quad = (&var_quad + var_quad.transpose()) * 0.5;
    let var_lin = input_map.transpose() * cross;

    let (norm_l, norm_v, norm_s) = norm_factor(&var_quad, &var_lin, var_const)?;
    Ok(ConstraintMoments {
        k,
        mean_coeff,
        mean_const,
        var_quad,
        var_lin,
        var_const,
        norm_l,
        norm_v,
        norm_s,
    })
}

/// Factor `UᵀQU + 2qᵀU + r` as `‖LᵀU + v‖² + s` with `Q = LLᵀ`, `Lv = q` in
/// the least-squares sense and `s = r − ‖v‖²`.
fn norm_factor(
    q_mat: &DMatrix<f64>,
    q_vec: &DVector<f64>,
    r: f64,
) -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
    let dim = q_mat.nrows();
    let (eigvals, eigvecs) = if dim == 0 {
        (DVector::zeros(0), DMatrix::zeros(0, 0))
    } else {
        let eig = SymmetricEigen::new(q_mat.clone());
        (eig.eigenvalues, eig.eigenvectors)
    };
    let largest = eigvals.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let smallest = eigvals.iter().fold(f64::INFINITY, |acc, v| acc.min(*v));
    if smallest < -scaled_tol(PSD_TOL, largest) {
        return Err(Error::NotPsd {
            min_eigenvalue: smallest,
        });
    }
    let cutoff = scaled_tol(RANK_TOL, largest);
    let kept: Vec<usize> = (0..dim).filter(|&i| eigvals[i] > cutoff).collect();
    let mut l = DMatrix::zeros(dim, kept.len());
    let mut v = DVector::zeros(kept.len());
    for (c, &i) in kept.iter().enumerate() {
        let root = eigvals[i].sqrt();
        let vec_i = eigvecs.column(i);
        l.set_column(c, &(vec_i * root));
        v[c] = vec_i.dot(q_vec) / root;
    }
    let s = r - v.norm_squared();
    if s < -scaled_tol(NORM_RESIDUAL_TOL, r) {
        return Err(Error::NormFormResidual { residual: s });
    }
    Ok((l, v, s.max(0.0)))
}
