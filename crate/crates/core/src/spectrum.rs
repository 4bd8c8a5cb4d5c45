//! Symmetric eigendecomposition and the Kronecker-product spectrum estimate.
//!
//! [`eig_sym`] is the exact oracle: a deterministic cyclic-sweep Jacobi
//! diagonalization used both as the production eigensolver for factor graphs
//! and as ground truth in every estimate-vs-exact comparison.
//!
//! [`KronSpectrumEstimate`] combines per-factor spectra into approximate
//! joint eigenpairs: for an index tuple (k₁, …, kₙ),
//!
//! ```text
//! μ = [1 − Π(1 − λ_{kᵢ})] · Π d_{(kᵢ)}        v = ⊗ v_{kᵢ}
//! ```
//!
//! where λ_{kᵢ}, v_{kᵢ} are the kᵢ-th smallest eigenpair of the factor's
//! normalized Laplacian and d_{(kᵢ)} is the kᵢ-th smallest degree. The two
//! ascending sorts are independent; the pairing is part of the estimate, not
//! an oversight. On regular factors the estimate is exact.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::graph::{product_graph, LoopMode, SparseGraph, TransitionGraph};

/// Jacobi sweep convergence threshold (relative off-diagonal Frobenius norm).
const JACOBI_TOL: f64 = 1e-12;
/// Maximum number of cyclic Jacobi sweeps.
const JACOBI_MAX_SWEEPS: usize = 100;
/// Two estimated eigenvalues are tied when |μᵢ − μⱼ| ≤ TIE_TOL · max(1, μⱼ).
const MU_TIE_TOL: f64 = 1e-9;
/// Default cap on materialized joint eigenvectors.
pub const DEFAULT_JOINT_CAP: usize = 200_000;

/// Ascending eigenvalues with sign-normalized orthonormal eigenvectors.
#[derive(Debug, Clone)]
pub struct SpectrumResult {
    pub eigenvalues: Vec<f64>,
    /// Column i is the eigenvector for `eigenvalues[i]`.
    pub vectors: Array2<f64>,
}

impl SpectrumResult {
    pub fn vector(&self, i: usize) -> ndarray::ArrayView1<'_, f64> {
        self.vectors.column(i)
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }
}

/// Flips each column so its first component with |x| > 1e-10 is positive.
pub fn normalize_sign_columns(m: &mut Array2<f64>) {
    for mut col in m.columns_mut() {
        if let Some(lead) = col.iter().find(|x| x.abs() > 1e-10) {
            if *lead < 0.0 {
                col.mapv_inplace(|x| -x);
            }
        }
    }
}

/// Same convention for a plain vector.
pub fn normalize_sign(v: &mut [f64]) {
    if let Some(lead) = v.iter().find(|x| x.abs() > 1e-10) {
        if *lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Exact eigendecomposition of a symmetric matrix by cyclic Jacobi sweeps.
///
/// Deterministic: rotations are applied in fixed row-major pair order, ties
/// in the ascending eigenvalue sort are broken by original index, and sign
/// normalization fixes each eigenvector's orientation.
pub fn eig_sym(m: &ArrayView2<f64>) -> Result<SpectrumResult> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Input(format!("matrix is {}x{}, not square", n, m.ncols())));
    }
    let mut scale: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 {
                return Err(Error::Input(format!(
                    "matrix asymmetric at ({i}, {j}): {} vs {}",
                    m[(i, j)],
                    m[(j, i)]
                )));
            }
            scale += m[(i, j)] * m[(i, j)];
        }
    }
    let scale = scale.sqrt().max(f64::MIN_POSITIVE);

    let mut a = m.to_owned();
    let mut v: Array2<f64> = Array2::eye(n);
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += 2.0 * a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= JACOBI_TOL * scale {
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                let app = a[(p, p)];
                let aqq = a[(q, q)];
                a[(p, p)] = app - t * apq;
                a[(q, q)] = aqq + t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(p, k)] = a[(k, p)];
                    a[(k, q)] = s * akp + c * akq;
                    a[(q, k)] = a[(k, q)];
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].partial_cmp(&a[(j, j)]).unwrap().then(i.cmp(&j)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vectors.column_mut(dst).assign(&v.column(src));
    }
    normalize_sign_columns(&mut vectors);
    Ok(SpectrumResult { eigenvalues, vectors })
}

// ---------------------------------------------------------------------------
// Joint-index arithmetic (nested row-major composition).
// ---------------------------------------------------------------------------

/// 0-based joint index of 0-based per-factor indices.
pub fn encode_joint(indices: &[usize], dims: &[usize]) -> usize {
    let mut joint = 0;
    for (&i, &d) in indices.iter().zip(dims) {
        joint = joint * d + i;
    }
    joint
}

/// Decodes a 0-based joint index into 0-based per-factor indices.
pub fn decode_joint(mut joint: usize, dims: &[usize], out: &mut [usize]) {
    for t in (0..dims.len()).rev() {
        out[t] = joint % dims[t];
        joint /= dims[t];
    }
}

/// 1-based joint index: I = ((i₁−1)·|S₂| + (i₂−1))·|S₃| + … + iₙ.
pub fn joint_index(individual: &[usize], dims: &[usize]) -> Result<usize> {
    if individual.len() != dims.len() || dims.is_empty() {
        return Err(Error::Input(format!(
            "index tuple of length {} does not match {} dims",
            individual.len(),
            dims.len()
        )));
    }
    let mut zero_based = Vec::with_capacity(dims.len());
    for (t, (&i, &d)) in individual.iter().zip(dims).enumerate() {
        if i < 1 || i > d {
            return Err(Error::Input(format!(
                "component {t} is {i}, outside 1..={d}"
            )));
        }
        zero_based.push(i - 1);
    }
    Ok(encode_joint(&zero_based, dims) + 1)
}

/// Inverse of [`joint_index`].
pub fn split_joint_index(joint: usize, dims: &[usize]) -> Result<Vec<usize>> {
    let total: usize = dims.iter().product();
    if dims.is_empty() || joint < 1 || joint > total {
        return Err(Error::Input(format!("joint index {joint} outside 1..={total}")));
    }
    let mut out = vec![0; dims.len()];
    decode_joint(joint - 1, dims, &mut out);
    out.iter_mut().for_each(|i| *i += 1);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Factor spectra and the Kronecker estimate.
// ---------------------------------------------------------------------------

/// Per-factor spectral data consumed by the joint estimate.
///
/// `spectrum` may be truncated to the k smallest eigenpairs when it comes
/// from sample-based training; the degree list always covers every state.
/// Degrees are reals because the sampled path only recovers them up to a
/// positive scale, which leaves the μ ordering unchanged.
#[derive(Debug, Clone)]
pub struct FactorSpectrum {
    pub spectrum: SpectrumResult,
    /// Ascending degree list (length = num_states).
    pub degrees_sorted: Vec<f64>,
    pub num_states: usize,
}

#[derive(Debug, Clone)]
pub struct FactorSpectra {
    pub factors: Vec<FactorSpectrum>,
}

impl FactorSpectra {
    /// Decomposes each factor graph's normalized Laplacian exactly.
    ///
    /// `LoopMode::Reflexive` adds a self-loop at every vertex before
    /// normalizing (degrees become d+1). Use it when the agents' dynamics
    /// allow staying in place, so the joint graph is the reflexive product.
    pub fn from_graphs(graphs: &[TransitionGraph], mode: LoopMode) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::Input("need at least one factor graph".into()));
        }
        let mut factors = Vec::with_capacity(graphs.len());
        for g in graphs {
            let n = g.num_states();
            let (matrix, mut degrees): (Array2<f64>, Vec<f64>) = match mode {
                LoopMode::Plain => {
                    (g.normalized_laplacian(), g.degree_vector().iter().map(|&d| d as f64).collect())
                }
                LoopMode::Reflexive => {
                    let deg: Vec<f64> = g.degree_vector().iter().map(|&d| (d + 1) as f64).collect();
                    let mut l = Array2::zeros((n, n));
                    for i in 0..n {
                        l[(i, i)] = 1.0 - 1.0 / deg[i];
                        for j in g.neighbors(i) {
                            l[(i, j)] = -1.0 / (deg[i] * deg[j]).sqrt();
                        }
                    }
                    (l, deg)
                }
            };
            let spectrum = eig_sym(&matrix.view())?;
            degrees.sort_by(|a, b| a.partial_cmp(b).unwrap());
            factors.push(FactorSpectrum { spectrum, degrees_sorted: degrees, num_states: n });
        }
        Ok(Self { factors })
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.num_states).collect()
    }

    pub fn joint_size(&self) -> usize {
        self.dims().iter().product()
    }

    /// Number of available eigenpairs per factor (≤ num_states).
    pub fn spectrum_lens(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.spectrum.len()).collect()
    }
}

/// One estimated joint eigenpair: μ plus the 1-based factor-index tuple.
/// The joint eigenvector is the Kronecker product of the factor vectors and
/// is only materialized on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct KronEigenpair {
    pub mu: f64,
    pub index_tuple: Vec<usize>,
}

impl KronEigenpair {
    /// Entry of the joint eigenvector at a 0-based joint state index.
    pub fn entry(&self, factors: &FactorSpectra, joint0: usize) -> f64 {
        let dims = factors.dims();
        let mut idx = vec![0usize; dims.len()];
        decode_joint(joint0, &dims, &mut idx);
        self.index_tuple
            .iter()
            .zip(idx)
            .zip(&factors.factors)
            .map(|((&k, i), f)| f.spectrum.vectors[(i, k - 1)])
            .product()
    }

    /// Full joint eigenvector under the nested row-major indexing.
    pub fn materialize(&self, factors: &FactorSpectra) -> Vec<f64> {
        let mut vec = vec![1.0];
        for (f, &k) in factors.factors.iter().zip(&self.index_tuple) {
            let col = f.spectrum.vector(k - 1);
            let mut next = Vec::with_capacity(vec.len() * f.num_states);
            for &v in &vec {
                for x in col.iter() {
                    next.push(v * x);
                }
            }
            vec = next;
        }
        vec
    }
}

/// Lazily enumerable Kronecker spectrum estimate over a set of factors.
pub struct KronSpectrumEstimate<'a> {
    factors: &'a FactorSpectra,
}

pub fn kron_spectrum_estimate(factors: &FactorSpectra) -> Result<KronSpectrumEstimate<'_>> {
    if factors.factors.iter().any(|f| f.num_states == 0) {
        return Err(Error::Input("factor with zero states".into()));
    }
    Ok(KronSpectrumEstimate { factors })
}

impl<'a> KronSpectrumEstimate<'a> {
    /// μ for a 1-based index tuple.
    pub fn mu(&self, tuple: &[usize]) -> Result<f64> {
        if tuple.len() != self.factors.factors.len() {
            return Err(Error::Input("tuple length does not match factor count".into()));
        }
        let mut bracket = 1.0;
        let mut degrees = 1.0;
        for (&k, f) in tuple.iter().zip(&self.factors.factors) {
            if k < 1 || k > f.spectrum.len() {
                return Err(Error::Input(format!(
                    "factor index {k} outside 1..={}",
                    f.spectrum.len()
                )));
            }
            bracket *= 1.0 - f.spectrum.eigenvalues[k - 1];
            degrees *= f.degrees_sorted[k - 1];
        }
        let mu = (1.0 - bracket) * degrees;
        // Non-negative in exact arithmetic; clamp roundoff.
        Ok(if mu < 0.0 && mu > -1e-9 { 0.0 } else { mu })
    }

    /// Every index tuple in lexicographic order.
    pub fn iter_all(&self) -> impl Iterator<Item = KronEigenpair> + '_ {
        let lens = self.factors.spectrum_lens();
        TupleIter::new(lens).map(move |tuple| {
            let mu = self.mu(&tuple).expect("in-range tuple");
            KronEigenpair { mu, index_tuple: tuple }
        })
    }

    /// All tuples achieving the `j` smallest distinct μ values (ties kept),
    /// without materializing any eigenvector.
    ///
    /// When the full tuple lattice is too large to enumerate, each factor is
    /// restricted to its smallest indices plus the largest one; small μ come
    /// from small eigenvalues and degrees, while the top index is kept so
    /// degenerate bipartite pairs are still found.
    pub fn smallest(&self, j: usize) -> Vec<KronEigenpair> {
        let lens = self.factors.spectrum_lens();
        let total: usize = lens.iter().product();
        let mut pairs: Vec<KronEigenpair> = if total <= DEFAULT_JOINT_CAP {
            self.iter_all().collect()
        } else {
            let cap = (j + 6).max(8);
            let index_sets: Vec<Vec<usize>> = lens
                .iter()
                .map(|&len| {
                    let mut set: Vec<usize> = (1..=len.min(cap)).collect();
                    if len > cap {
                        set.push(len);
                    }
                    set
                })
                .collect();
            SubsetTupleIter::new(index_sets)
                .map(|tuple| {
                    let mu = self.mu(&tuple).expect("in-range tuple");
                    KronEigenpair { mu, index_tuple: tuple }
                })
                .collect()
        };
        pairs.sort_by(|a, b| a.mu.partial_cmp(&b.mu).unwrap().then(a.index_tuple.cmp(&b.index_tuple)));
        let mut kept = Vec::new();
        let mut distinct = 0;
        let mut last: Option<f64> = None;
        for p in pairs {
            let tied = last.is_some_and(|l| (p.mu - l).abs() <= MU_TIE_TOL * l.max(1.0));
            if !tied {
                distinct += 1;
                if distinct > j {
                    break;
                }
                last = Some(p.mu);
            }
            kept.push(p);
        }
        kept
    }
}

struct TupleIter {
    lens: Vec<usize>,
    current: Vec<usize>,
    done: bool,
}

impl TupleIter {
    fn new(lens: Vec<usize>) -> Self {
        let done = lens.iter().any(|&l| l == 0);
        let current = vec![1; lens.len()];
        Self { lens, current, done }
    }
}

impl Iterator for TupleIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let out = self.current.clone();
        for t in (0..self.lens.len()).rev() {
            if self.current[t] < self.lens[t] {
                self.current[t] += 1;
                return Some(out);
            }
            self.current[t] = 1;
        }
        self.done = true;
        Some(out)
    }
}

struct SubsetTupleIter {
    sets: Vec<Vec<usize>>,
    cursor: Vec<usize>,
    done: bool,
}

impl SubsetTupleIter {
    fn new(sets: Vec<Vec<usize>>) -> Self {
        let done = sets.iter().any(Vec::is_empty);
        let cursor = vec![0; sets.len()];
        Self { sets, cursor, done }
    }
}

impl Iterator for SubsetTupleIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let out: Vec<usize> = self.cursor.iter().zip(&self.sets).map(|(&c, s)| s[c]).collect();
        for t in (0..self.sets.len()).rev() {
            if self.cursor[t] + 1 < self.sets[t].len() {
                self.cursor[t] += 1;
                return Some(out);
            }
            self.cursor[t] = 0;
        }
        self.done = true;
        Some(out)
    }
}

/// A joint Fiedler candidate: the estimated eigenpair plus its materialized,
/// sign-normalized joint eigenvector.
#[derive(Debug, Clone)]
pub struct FiedlerCandidate {
    pub mu: f64,
    pub index_tuple: Vec<usize>,
    pub vector: Vec<f64>,
}

/// Returns every tuple whose μ ties the second element of the ascending μ
/// multiset. When the smallest μ is degenerate this includes the tied
/// smallest tuples as well, reproducing the two-candidate behaviour on
/// disconnected product estimates. Candidates are ordered by index tuple.
pub fn joint_fiedler_candidates(factors: &FactorSpectra, cap: usize) -> Result<Vec<FiedlerCandidate>> {
    let joint = factors.joint_size();
    if joint < 2 {
        return Err(Error::Degenerate("joint space has a single state".into()));
    }
    if joint > cap {
        return Err(Error::Resource(format!(
            "joint space of {joint} states exceeds materialization cap {cap}"
        )));
    }
    let est = kron_spectrum_estimate(factors)?;
    let smallest = est.smallest(2);
    if smallest.len() < 2 {
        return Err(Error::Degenerate("fewer than two estimated eigenvalues".into()));
    }
    let target = {
        let mut mus: Vec<f64> = smallest.iter().map(|p| p.mu).collect();
        mus.sort_by(|a, b| a.partial_cmp(b).unwrap());
        mus[1]
    };
    let mut candidates: Vec<FiedlerCandidate> = smallest
        .into_iter()
        .filter(|p| (p.mu - target).abs() <= MU_TIE_TOL * target.max(1.0))
        .map(|p| {
            let mut vector = p.materialize(factors);
            normalize_sign(&mut vector);
            FiedlerCandidate { mu: p.mu, index_tuple: p.index_tuple, vector }
        })
        .collect();
    candidates.sort_by(|a, b| a.index_tuple.cmp(&b.index_tuple));
    Ok(candidates)
}

/// λ₂ and the Fiedler vector of the unnormalized Laplacian of a graph,
/// computed with the dense oracle.
pub fn exact_fiedler(graph: &TransitionGraph) -> Result<(f64, Vec<f64>)> {
    if graph.num_states() < 2 {
        return Err(Error::Degenerate("graph has fewer than two states".into()));
    }
    let spec = eig_sym(&graph.laplacian().view())?;
    Ok((spec.eigenvalues[1], spec.vector(1).to_vec()))
}

/// Exact joint Fiedler pair of the materialized product of `graphs`.
/// Used only as an oracle in studies and tests; fails beyond `cap` states.
pub fn exact_joint_fiedler(
    graphs: &[TransitionGraph],
    mode: LoopMode,
    cap: usize,
) -> Result<(f64, Vec<f64>)> {
    let joint = product_graph(graphs, mode, cap)?;
    exact_fiedler(&joint)
}

// ---------------------------------------------------------------------------
// Sparse Fiedler solver for joint graphs beyond the dense cap.
// ---------------------------------------------------------------------------

/// λ₂ and Fiedler vector of a large sparse graph by block inverse iteration
/// with Rayleigh–Ritz refinement, deflating the constant kernel vector.
///
/// On a disconnected graph λ₂ = 0 and a zero-sum component indicator is
/// returned directly. Deterministic: the starting block is fixed.
pub fn sparse_fiedler(g: &SparseGraph) -> Result<(f64, Vec<f64>)> {
    let n = g.num_states();
    if n < 2 {
        return Err(Error::Degenerate("graph has fewer than two states".into()));
    }
    let comps = g.components();
    let num_comps = comps.iter().copied().max().unwrap() + 1;
    if num_comps > 1 {
        let in_first = comps.iter().filter(|&&c| c == 0).count() as f64;
        let rest = n as f64 - in_first;
        let mut v: Vec<f64> = comps
            .iter()
            .map(|&c| if c == 0 { rest / n as f64 } else { -in_first / n as f64 })
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        normalize_sign(&mut v);
        return Ok((0.0, v));
    }

    const BLOCK: usize = 4;
    let block = BLOCK.min(n - 1);
    // Fixed pseudo-random starting block.
    let mut xs: Vec<Vec<f64>> = (0..block)
        .map(|b| (0..n).map(|i| ((i * (b + 3) + 7) as f64 * 0.7391 + b as f64).sin()).collect())
        .collect();
    for x in &mut xs {
        deflate_constant(x);
    }
    orthonormalize(&mut xs);

    let mut ritz_vals = vec![0.0; block];
    let mut buf = vec![0.0; n];
    for _outer in 0..400 {
        // Y = L⁻¹ X on the complement of the constant vector.
        let mut ys = Vec::with_capacity(block);
        for x in &xs {
            let y = cg_solve(g, x, 6 * n, 1e-12)?;
            ys.push(y);
        }
        for y in &mut ys {
            deflate_constant(y);
        }
        orthonormalize(&mut ys);

        // Rayleigh–Ritz on the block.
        let mut t = Array2::zeros((block, block));
        let mut lys = Vec::with_capacity(block);
        for y in &ys {
            g.laplacian_apply(y, &mut buf);
            lys.push(buf.clone());
        }
        for i in 0..block {
            for j in 0..block {
                t[(i, j)] = dot(&ys[i], &lys[j]);
            }
        }
        // Symmetrize roundoff before the dense solve.
        for i in 0..block {
            for j in (i + 1)..block {
                let avg = 0.5 * (t[(i, j)] + t[(j, i)]);
                t[(i, j)] = avg;
                t[(j, i)] = avg;
            }
        }
        let small = eig_sym(&t.view())?;
        let mut rotated: Vec<Vec<f64>> = vec![vec![0.0; n]; block];
        for (bi, row) in rotated.iter_mut().enumerate() {
            for (yj, y) in ys.iter().enumerate() {
                let w = small.vectors[(yj, bi)];
                for (r, &yv) in row.iter_mut().zip(y) {
                    *r += w * yv;
                }
            }
        }
        ritz_vals.copy_from_slice(&small.eigenvalues);
        xs = rotated;

        // Converged when the smallest Ritz pair has a tiny relative residual.
        g.laplacian_apply(&xs[0], &mut buf);
        let lam = ritz_vals[0];
        let res: f64 = buf
            .iter()
            .zip(&xs[0])
            .map(|(&lx, &x)| (lx - lam * x) * (lx - lam * x))
            .sum::<f64>()
            .sqrt();
        if res <= 1e-9 * lam.abs().max(1e-12) {
            break;
        }
    }
    let mut fiedler = xs.swap_remove(0);
    deflate_constant(&mut fiedler);
    let norm = dot(&fiedler, &fiedler).sqrt();
    fiedler.iter_mut().for_each(|x| *x /= norm);
    normalize_sign(&mut fiedler);
    Ok((ritz_vals[0], fiedler))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn deflate_constant(x: &mut [f64]) {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= mean);
}

fn orthonormalize(xs: &mut Vec<Vec<f64>>) {
    let mut kept: Vec<Vec<f64>> = Vec::with_capacity(xs.len());
    for mut x in xs.drain(..) {
        for k in &kept {
            let proj = dot(&x, k);
            x.iter_mut().zip(k.iter()).for_each(|(xi, &ki)| *xi -= proj * ki);
        }
        let norm = dot(&x, &x).sqrt();
        if norm > 1e-14 {
            x.iter_mut().for_each(|v| *v /= norm);
            kept.push(x);
        }
    }
    *xs = kept;
}

/// Conjugate gradient for L y = b on the complement of the constant vector
/// (b must be zero-sum; L is PSD with kernel = constants on a connected graph).
fn cg_solve(g: &SparseGraph, b: &[f64], max_iter: usize, tol: f64) -> Result<Vec<f64>> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    deflate_constant(&mut r);
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let b_norm = rr.sqrt().max(f64::MIN_POSITIVE);
    let mut ap = vec![0.0; n];
    for _ in 0..max_iter {
        if rr.sqrt() <= tol * b_norm {
            break;
        }
        g.laplacian_apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        deflate_constant(&mut r);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Ok(x)
}

/// sin of the largest principal angle between the column spans of two
/// orthonormal bases (columns). Small values mean matching subspaces.
pub fn max_principal_angle_sin(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.nrows() != b.nrows() {
        return Err(Error::Input("bases have different row counts".into()));
    }
    // M = B − A (AᵀB); the largest singular value of M is sin(θ_max).
    let atb = a.t().dot(b);
    let m = b - &a.dot(&atb);
    let mtm = m.t().dot(&m);
    let spec = eig_sym(&mtm.view())?;
    Ok(spec.eigenvalues.last().copied().unwrap_or(0.0).max(0.0).sqrt())
}
