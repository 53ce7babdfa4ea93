//! Finite-dimensional Hilbert-space building blocks: ladder operators,
//! Fock and coherent states, tensor products, partial trace, and the
//! Uhlmann fidelity used throughout the transfer simulations.
//!
//! States are `DVector<C64>` (pure) or `DMatrix<C64>` (density matrices);
//! composite systems are ordered left-to-right, with the leftmost factor
//! varying slowest in the flattened index.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{eigh, expm, sqrtm_psd};
use crate::{Error, Result, C64};

/// Annihilation operator on a `dim`-level truncation.
pub fn destroy(dim: usize) -> DMatrix<C64> {
    let mut a = DMatrix::<C64>::zeros(dim, dim);
    for n in 1..dim {
        a[(n - 1, n)] = C64::from((n as f64).sqrt());
    }
    a
}

/// Creation operator on a `dim`-level truncation.
pub fn create(dim: usize) -> DMatrix<C64> {
    destroy(dim).adjoint()
}

/// Number operator diag(0, 1, ..., dim-1).
pub fn number(dim: usize) -> DMatrix<C64> {
    DMatrix::<C64>::from_fn(dim, dim, |i, j| {
        if i == j {
            C64::from(i as f64)
        } else {
            C64::from(0.0)
        }
    })
}

/// Identity operator.
pub fn identity(dim: usize) -> DMatrix<C64> {
    DMatrix::<C64>::identity(dim, dim)
}

/// Fock (number) state |n> in a `dim`-level truncation.
pub fn fock(dim: usize, n: usize) -> Result<DVector<C64>> {
    if n >= dim {
        return Err(Error::Dimension(format!(
            "fock level {n} does not fit in dimension {dim}"
        )));
    }
    let mut v = DVector::<C64>::zeros(dim);
    v[n] = C64::from(1.0);
    Ok(v)
}

/// Truncated coherent state |alpha>, renormalized on the truncation.
pub fn coherent(dim: usize, alpha: C64) -> DVector<C64> {
    let mut v = DVector::<C64>::zeros(dim);
    let mut amp = C64::from(1.0);
    v[0] = amp;
    for n in 1..dim {
        amp *= alpha / C64::from((n as f64).sqrt());
        v[n] = amp;
    }
    let norm = v.norm();
    v / C64::from(norm)
}

/// Displacement operator D(alpha) = exp(alpha a^dag - conj(alpha) a).
pub fn displacement(dim: usize, alpha: C64) -> DMatrix<C64> {
    let gen = create(dim) * alpha - destroy(dim) * alpha.conj();
    expm(&gen)
}

/// Generalized Laguerre polynomial L_n^(k)(x) by the three-term recurrence.
fn laguerre(n: usize, k: f64, x: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let mut prev = 1.0;
    let mut cur = 1.0 + k - x;
    for i in 1..n {
        let fi = i as f64;
        let next = ((2.0 * fi + 1.0 + k - x) * cur - (fi + k) * prev) / (fi + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Matrix element <m|D(beta)|n> of the displacement operator in the
/// untruncated Fock basis:
/// sqrt(n!/m!) beta^(m-n) e^(-|beta|^2/2) L_n^(m-n)(|beta|^2) for m >= n.
/// Using these closed-form elements avoids the truncation error a finite
/// matrix exponential would introduce near the edge of the space.
pub fn displacement_element(m: usize, n: usize, beta: C64) -> C64 {
    if m < n {
        return displacement_element(n, m, -beta).conj();
    }
    let k = m - n;
    let x = beta.norm_sqr();
    let mut pref = 1.0;
    for i in (n + 1)..=m {
        pref /= (i as f64).sqrt();
    }
    beta.powu(k as u32) * C64::from(pref * (-0.5 * x).exp() * laguerre(n, k as f64, x))
}

/// Density matrix |psi><psi| of a pure state.
pub fn pure_density(psi: &DVector<C64>) -> DMatrix<C64> {
    psi * psi.adjoint()
}

/// Kronecker product of two operators (left factor varies slowest).
pub fn kron(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a.kronecker(b)
}

/// Kronecker product of two pure states.
pub fn kron_vec(a: &DVector<C64>, b: &DVector<C64>) -> DVector<C64> {
    let mut out = DVector::<C64>::zeros(a.len() * b.len());
    for i in 0..a.len() {
        for j in 0..b.len() {
            out[i * b.len() + j] = a[i] * b[j];
        }
    }
    out
}

/// Kronecker product of a list of operators.
pub fn kron_all(ops: &[&DMatrix<C64>]) -> DMatrix<C64> {
    assert!(!ops.is_empty(), "kron_all needs at least one factor");
    let mut acc = ops[0].clone();
    for op in &ops[1..] {
        acc = acc.kronecker(op);
    }
    acc
}

/// Lift `op` acting on subsystem `which` of a product space with the given
/// factor dimensions, padding all other factors with identities.
pub fn embed(op: &DMatrix<C64>, dims: &[usize], which: usize) -> Result<DMatrix<C64>> {
    if which >= dims.len() {
        return Err(Error::Dimension(format!(
            "subsystem {which} out of range for {} factors",
            dims.len()
        )));
    }
    if op.nrows() != dims[which] || op.ncols() != dims[which] {
        return Err(Error::Dimension(format!(
            "operator is {}x{}, subsystem {which} has dimension {}",
            op.nrows(),
            op.ncols(),
            dims[which]
        )));
    }
    let mut acc = if which == 0 {
        op.clone()
    } else {
        identity(dims[0])
    };
    for (k, &d) in dims.iter().enumerate().skip(1) {
        let factor = if k == which { op.clone() } else { identity(d) };
        acc = acc.kronecker(&factor);
    }
    Ok(acc)
}

/// Reorder the tensor factors of a composite density matrix: output factor
/// `k` is input factor `perm[k]`, so `perm = [1, 0]` swaps a bipartite
/// system's halves.
pub fn permute_factors(rho: &DMatrix<C64>, dims: &[usize], perm: &[usize]) -> Result<DMatrix<C64>> {
    let total: usize = dims.iter().product();
    if rho.nrows() != total || rho.ncols() != total {
        return Err(Error::Dimension(format!(
            "density matrix is {}x{}, factor dimensions multiply to {total}",
            rho.nrows(),
            rho.ncols()
        )));
    }
    let m = dims.len();
    let mut seen = vec![false; m];
    if perm.len() != m
        || perm
            .iter()
            .any(|&p| p >= m || std::mem::replace(&mut seen[p], true))
    {
        return Err(Error::Dimension(format!(
            "permutation {perm:?} is not a rearrangement of {m} factors"
        )));
    }
    let new_dims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
    let mut old_strides = vec![1usize; m];
    for k in (0..m.saturating_sub(1)).rev() {
        old_strides[k] = old_strides[k + 1] * dims[k + 1];
    }
    let mut new_strides = vec![1usize; m];
    for k in (0..m.saturating_sub(1)).rev() {
        new_strides[k] = new_strides[k + 1] * new_dims[k + 1];
    }
    let map_flat = |flat_new: usize| -> usize {
        let mut flat_old = 0;
        for k in 0..m {
            let digit = (flat_new / new_strides[k]) % new_dims[k];
            flat_old += digit * old_strides[perm[k]];
        }
        flat_old
    };
    let mut out = DMatrix::<C64>::zeros(total, total);
    for i in 0..total {
        let oi = map_flat(i);
        for j in 0..total {
            out[(i, j)] = rho[(oi, map_flat(j))];
        }
    }
    Ok(out)
}

/// Partial trace over the subsystems NOT listed in `keep`; `keep` indices
/// refer to `dims` and the kept factors stay in their original order.
pub fn ptrace(rho: &DMatrix<C64>, dims: &[usize], keep: &[usize]) -> Result<DMatrix<C64>> {
    let total: usize = dims.iter().product();
    if rho.nrows() != total || rho.ncols() != total {
        return Err(Error::Dimension(format!(
            "density matrix is {}x{}, factor dimensions multiply to {total}",
            rho.nrows(),
            rho.ncols()
        )));
    }
    let mut keep_sorted = keep.to_vec();
    keep_sorted.sort_unstable();
    keep_sorted.dedup();
    if keep_sorted.len() != keep.len() || keep_sorted.iter().any(|&k| k >= dims.len()) {
        return Err(Error::Dimension(
            "keep list must be unique, sorted-compatible subsystem indices".into(),
        ));
    }

    let kept_dims: Vec<usize> = keep_sorted.iter().map(|&k| dims[k]).collect();
    let traced: Vec<usize> = (0..dims.len())
        .filter(|k| !keep_sorted.contains(k))
        .collect();
    let traced_dims: Vec<usize> = traced.iter().map(|&k| dims[k]).collect();
    let kept_total: usize = kept_dims.iter().product();
    let traced_total: usize = traced_dims.iter().product::<usize>().max(1);

    // Strides of each factor in the flattened composite index.
    let mut strides = vec![1usize; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * dims[k + 1];
    }

    let flat_index = |multi_keep: usize, multi_trace: usize| -> usize {
        let mut idx = 0;
        let mut mk = multi_keep;
        for (pos, &k) in keep_sorted.iter().enumerate().rev() {
            let d = kept_dims[pos];
            idx += (mk % d) * strides[k];
            mk /= d;
        }
        let mut mt = multi_trace;
        for (pos, &k) in traced.iter().enumerate().rev() {
            let d = traced_dims[pos];
            idx += (mt % d) * strides[k];
            mt /= d;
        }
        idx
    };

    let mut out = DMatrix::<C64>::zeros(kept_total, kept_total);
    for i in 0..kept_total {
        for j in 0..kept_total {
            let mut s = C64::from(0.0);
            for t in 0..traced_total {
                s += rho[(flat_index(i, t), flat_index(j, t))];
            }
            out[(i, j)] = s;
        }
    }
    Ok(out)
}

/// Uhlmann fidelity F(rho, sigma) = tr sqrt(sqrt(rho) sigma sqrt(rho)).
/// For a pure sigma = |psi><psi| this equals sqrt(<psi|rho|psi>).
pub fn fidelity(rho: &DMatrix<C64>, sigma: &DMatrix<C64>) -> Result<f64> {
    if rho.nrows() != sigma.nrows() || rho.ncols() != sigma.ncols() {
        return Err(Error::Dimension(format!(
            "fidelity of {}x{} against {}x{}",
            rho.nrows(),
            rho.ncols(),
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let sr = sqrtm_psd(rho);
    let inner = &sr * sigma * &sr;
    let (vals, _) = eigh(&inner);
    let f: f64 = vals.iter().map(|&v| v.max(0.0).sqrt()).sum();
    Ok(f.min(1.0))
}

/// Fidelity of a (possibly mixed) state against a pure target:
/// sqrt(<psi|rho|psi>), the Uhlmann fidelity specialized to pure sigma.
pub fn fidelity_to_pure(rho: &DMatrix<C64>, psi: &DVector<C64>) -> Result<f64> {
    if rho.nrows() != psi.len() {
        return Err(Error::Dimension(format!(
            "state dimension {} against target dimension {}",
            rho.nrows(),
            psi.len()
        )));
    }
    let val = (psi.adjoint() * rho * psi)[(0, 0)].re;
    Ok(val.max(0.0).sqrt().min(1.0))
}

/// Expectation value <op> = tr(rho op), returning the real part.
pub fn expect(rho: &DMatrix<C64>, op: &DMatrix<C64>) -> f64 {
    (op * rho).trace().re
}

/// Trace of a density matrix (should be ~1).
pub fn trace_re(rho: &DMatrix<C64>) -> f64 {
    rho.trace().re
}

/// Purity tr(rho^2).
pub fn purity(rho: &DMatrix<C64>) -> f64 {
    (rho * rho).trace().re
}
