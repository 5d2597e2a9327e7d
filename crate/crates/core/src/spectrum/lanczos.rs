//! Shift-invert Lanczos for the smallest eigenpairs of a sparse symmetric
//! positive semidefinite matrix.
//!
//! The operator `(A + sigma I)^-1` (LDL factorization, reverse Cuthill-McKee
//! ordering) maps the smallest eigenvalues of `A` to the largest of the
//! operator, where Lanczos converges fastest. The basis is kept fully
//! orthonormal with two modified Gram-Schmidt passes per step, so exact
//! multiplicities (symmetric meshes, repeated zero modes) are resolved by
//! deterministic random restarts instead of being silently collapsed.
//! Eigenvalues are reported as Rayleigh quotients against the original `A`;
//! the Krylov space grows until every requested pair satisfies
//! `|A v - lambda v| <= 1e-8 (1 + |lambda|)` or the space saturates.

use super::{EigenPairSet, SpectrumError};
use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sprs::{CsMat, FillInReduction, SymmetryCheck};
use sprs_ldl::{Ldl, LdlNumeric};

const RESIDUAL_TOL: f64 = 1e-8;
const EXTEND_BY: usize = 60;

struct ShiftInvert {
    factor: LdlNumeric<f64, usize>,
}

impl ShiftInvert {
    fn new(a: &CsMat<f64>, sigma: f64) -> Result<Self, SpectrumError> {
        let eye = CsMat::<f64>::eye(a.rows()).map(|v| v * sigma);
        let shifted = a + &eye;
        let factor = Ldl::new()
            .fill_in_reduction(FillInReduction::ReverseCuthillMcKee)
            .check_symmetry(SymmetryCheck::CheckSymmetry)
            .numeric(shifted.view())
            .map_err(|e| SpectrumError::Factorization(e.to_string()))?;
        Ok(ShiftInvert { factor })
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.factor.solve(x)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Two modified Gram-Schmidt passes of `w` against every basis vector.
fn reorthogonalize(w: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for v in basis {
            let c = dot(w, v);
            for (wi, vi) in w.iter_mut().zip(v) {
                *wi -= c * vi;
            }
        }
    }
}

struct LanczosState {
    basis: Vec<Vec<f64>>,
    alphas: Vec<f64>,
    betas: Vec<f64>,
    saturated: bool,
}

impl LanczosState {
    fn start(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
        let nv = norm(&v);
        for x in &mut v {
            *x /= nv;
        }
        LanczosState {
            basis: vec![v],
            alphas: Vec::new(),
            betas: Vec::new(),
            saturated: false,
        }
    }

    /// Fresh deterministic direction orthogonal to the current basis, used
    /// when a Krylov block is exhausted (invariant subspace hit).
    fn restart_vector(&self, n: usize, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
        for _ in 0..8 {
            let mut v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
            let pre = norm(&v);
            reorthogonalize(&mut v, &self.basis);
            let post = norm(&v);
            if post > 1e-8 * pre {
                for x in &mut v {
                    *x /= post;
                }
                return Some(v);
            }
        }
        None
    }

    fn extend_to(&mut self, target: usize, op: &ShiftInvert, rng: &mut ChaCha8Rng) {
        let n = self.basis[0].len();
        while self.alphas.len() < target && !self.saturated {
            let v = self.basis.last().unwrap().clone();
            let mut w = op.apply(&v);
            let alpha = dot(&w, &v);
            reorthogonalize(&mut w, &self.basis);
            let beta = norm(&w);
            self.alphas.push(alpha);
            let scale = self
                .alphas
                .iter()
                .fold(1e-300f64, |m, &a| m.max(a.abs()));
            if beta > 1e-12 * scale {
                for x in &mut w {
                    *x /= beta;
                }
                self.betas.push(beta);
                self.basis.push(w);
            } else if self.basis.len() >= n {
                self.saturated = true;
            } else if let Some(fresh) = self.restart_vector(n, rng) {
                self.betas.push(0.0);
                self.basis.push(fresh);
            } else {
                self.saturated = true;
            }
        }
    }
}

struct RitzPair {
    value: f64,
    vector: Vec<f64>,
    residual: f64,
}

fn mat_vec(a: &CsMat<f64>, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.rows()];
    sprs::prod::mul_acc_mat_vec_csr(a.view(), x, &mut out);
    out
}

/// Rayleigh-Ritz extraction of the `k` best candidates for the smallest
/// eigenvalues of `a` from the current Krylov basis.
fn extract(state: &LanczosState, a: &CsMat<f64>, k: usize) -> Vec<RitzPair> {
    let m = state.alphas.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = state.alphas[i];
        if i + 1 < m {
            t[(i, i + 1)] = state.betas[i];
            t[(i + 1, i)] = state.betas[i];
        }
    }
    let eig = t.symmetric_eigen();
    // Largest operator eigenvalues correspond to the smallest of `a`.
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
    let n = state.basis[0].len();
    let mut pairs = Vec::with_capacity(k.min(m));
    for &col in order.iter().take(k) {
        let y = eig.eigenvectors.column(col);
        let mut v = vec![0.0; n];
        for (j, row) in state.basis.iter().take(m).enumerate() {
            let c = y[j];
            for (vi, ri) in v.iter_mut().zip(row) {
                *vi += c * ri;
            }
        }
        // Orthonormalize against already accepted vectors: protects
        // degenerate clusters assembled from separate Krylov blocks.
        for prev in &pairs {
            let p: &RitzPair = prev;
            let c = dot(&v, &p.vector);
            for (vi, pi) in v.iter_mut().zip(&p.vector) {
                *vi -= c * pi;
            }
        }
        let nv = norm(&v);
        if nv < 1e-10 {
            continue;
        }
        for x in &mut v {
            *x /= nv;
        }
        let av = mat_vec(a, &v);
        let value = dot(&av, &v);
        let residual = av
            .iter()
            .zip(&v)
            .map(|(avi, vi)| {
                let r = avi - value * vi;
                r * r
            })
            .sum::<f64>()
            .sqrt();
        pairs.push(RitzPair {
            value,
            vector: v,
            residual,
        });
    }
    pairs.sort_by(|p, q| p.value.total_cmp(&q.value));
    pairs
}

/// Fixes the overall sign of a vector so its largest-magnitude entry is
/// positive. Keeps eigenvectors reproducible across runs.
fn fix_sign(v: &mut [f64]) {
    let mut idx = 0;
    let mut best = 0.0f64;
    for (i, &x) in v.iter().enumerate() {
        if x.abs() > best {
            best = x.abs();
            idx = i;
        }
    }
    if v[idx] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// Computes the `k` smallest eigenpairs of the symmetric positive
/// semidefinite matrix `a`. `seed` fixes the Lanczos start and restart
/// vectors, making the output deterministic.
pub fn smallest_eigenpairs(
    a: &CsMat<f64>,
    k: usize,
    seed: u64,
) -> Result<EigenPairSet, SpectrumError> {
    let n = a.rows();
    if n == 0 {
        return Err(SpectrumError::Empty);
    }
    let k = k.min(n);
    if k == 0 {
        return Ok(EigenPairSet {
            eigenvalues: Vec::new(),
            eigenvectors: DMatrix::zeros(n, 0),
            residuals: Vec::new(),
        });
    }
    let mean_diag = (0..n)
        .map(|i| a.get(i, i).copied().unwrap_or(0.0))
        .sum::<f64>()
        / n as f64;
    let sigma = if mean_diag > 0.0 { 1e-3 * mean_diag } else { 1e-3 };
    let op = ShiftInvert::new(a, sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = LanczosState::start(n, &mut rng);
    let mut target = (2 * k + 40).max(80).min(n);
    let pairs = loop {
        state.extend_to(target, &op, &mut rng);
        let pairs = extract(&state, a, k);
        let converged = pairs.len() == k
            && pairs
                .iter()
                .all(|p| p.residual <= RESIDUAL_TOL * (1.0 + p.value.abs()));
        let exhausted = state.saturated || state.alphas.len() >= n;
        if converged || exhausted {
            break pairs;
        }
        target = (target + EXTEND_BY).min(n);
    };
    let mut eigenvalues = Vec::with_capacity(pairs.len());
    let mut residuals = Vec::with_capacity(pairs.len());
    let mut eigenvectors = DMatrix::zeros(n, pairs.len());
    for (col, mut pair) in pairs.into_iter().enumerate() {
        fix_sign(&mut pair.vector);
        eigenvalues.push(pair.value);
        residuals.push(pair.residual);
        for (row, &x) in pair.vector.iter().enumerate() {
            eigenvectors[(row, col)] = x;
        }
    }
    Ok(EigenPairSet {
        eigenvalues,
        eigenvectors,
        residuals,
    })
}
