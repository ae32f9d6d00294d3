use crate::error::{Error, Result};
use crate::ndgrad::{gemm, Real, Tensor};

fn unit_rows<T: Real>(m: &Tensor<T>) -> Vec<T> {
    let d = m.cols();
    let mut out = m.data().to_vec();
    for row in out.chunks_mut(d) {
        let norm = row.iter().map(|&x| x * x).sum::<T>().sqrt();
        if norm > T::zero() {
            row.iter_mut().for_each(|x| *x = *x / norm);
        } else {
            row.iter_mut().for_each(|x| *x = T::zero());
        }
    }
    out
}

/// Per-word maximum cosine similarity against the other text.
///
/// `q` is `m×d`, `c` is `n×d`; masks mark real (non-padding) rows. Cosine
/// with a zero vector is 0. Returns `(r_q, r_c)` with padding entries set to 0.
pub fn relatedness<T: Real>(
    q: &Tensor<T>,
    c: &Tensor<T>,
    q_mask: &[bool],
    c_mask: &[bool],
) -> Result<(Vec<T>, Vec<T>)> {
    if q.shape().len() != 2 || c.shape().len() != 2 || q.cols() != c.cols() {
        return Err(Error::Invalid(format!(
            "relatedness: incompatible shapes {:?} and {:?}",
            q.shape(),
            c.shape()
        )));
    }
    let (m, n, d) = (q.rows(), c.rows(), q.cols());
    if q_mask.len() != m || c_mask.len() != n {
        return Err(Error::Invalid("relatedness: mask length differs from row count".into()));
    }
    if !q_mask.iter().any(|&b| b) || !c_mask.iter().any(|&b| b) {
        return Err(Error::Invalid("relatedness: one side has no real tokens".into()));
    }
    let qn = unit_rows(q);
    let cn = unit_rows(c);
    let mut sim = vec![T::zero(); m * n];
    gemm(m, d, n, &qn, false, &cn, true, &mut sim, false);
    let one = T::one();
    let mut r_q = vec![T::zero(); m];
    let mut r_c = vec![T::zero(); n];
    let mut col_best = vec![T::neg_infinity(); n];
    for i in 0..m {
        if !q_mask[i] {
            continue;
        }
        let mut best = T::neg_infinity();
        for j in 0..n {
            if !c_mask[j] {
                continue;
            }
            let s = sim[i * n + j].max(-one).min(one);
            best = best.max(s);
            col_best[j] = col_best[j].max(s);
        }
        r_q[i] = best;
    }
    for j in 0..n {
        if c_mask[j] {
            r_c[j] = col_best[j];
        }
    }
    Ok((r_q, r_c))
}
