use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::ndgrad::{Real, Tensor};

use super::relatedness::relatedness;

/// Conv-ready inputs for a batch of (question, candidate) pairs.
///
/// Each side is `[batch, len + width - 1, dim + 1]`: word vectors with the
/// relatedness feature appended, right-padded with zero rows. Every sequence
/// carries at least `width - 1` trailing zero rows, so every window that
/// starts on a real token exists and extra padding only adds windows that are
/// masked out. Masks are over conv output positions: position `t` of row `b`
/// is valid iff `t` is a real token of row `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch<T> {
    pub question: Tensor<T>,
    pub question_mask: Vec<bool>,
    pub candidate: Tensor<T>,
    pub candidate_mask: Vec<bool>,
}

fn pack<T: Real>(seqs: &[(&Tensor<T>, &[T])], width: usize) -> Result<(Tensor<T>, Vec<bool>)> {
    let dim = seqs[0].0.cols();
    let longest = seqs.iter().map(|(m, _)| m.rows()).max().unwrap_or(0);
    let padded = longest + width - 1;
    let feat = dim + 1;
    let mut data = vec![T::zero(); seqs.len() * padded * feat];
    let mut mask = vec![false; seqs.len() * longest];
    for (b, (emb, rel)) in seqs.iter().enumerate() {
        if emb.cols() != dim {
            return Err(Error::Invalid("pair batch: mixed embedding dimensions".into()));
        }
        for i in 0..emb.rows() {
            let dst = &mut data[(b * padded + i) * feat..(b * padded + i + 1) * feat];
            dst[..dim].copy_from_slice(emb.row(i));
            dst[dim] = rel[i];
            mask[b * longest + i] = true;
        }
    }
    Ok((Tensor::new(vec![seqs.len(), padded, feat], data)?, mask))
}

impl<T: Real> PairBatch<T> {
    /// Builds the batch from per-pair word-vector matrices of the real tokens.
    pub fn from_embeddings(pairs: &[(Tensor<T>, Tensor<T>)], kernel_width: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Invalid("pair batch: no pairs".into()));
        }
        if kernel_width == 0 {
            return Err(Error::Config("kernel width must be at least 1".into()));
        }
        let mut rel = Vec::with_capacity(pairs.len());
        for (q, c) in pairs {
            let (r_q, r_c) = relatedness(q, c, &vec![true; q.rows()], &vec![true; c.rows()])?;
            rel.push((r_q, r_c));
        }
        let qs: Vec<(&Tensor<T>, &[T])> = pairs.iter().zip(&rel).map(|((q, _), (r, _))| (q, r.as_slice())).collect();
        let cs: Vec<(&Tensor<T>, &[T])> = pairs.iter().zip(&rel).map(|((_, c), (_, r))| (c, r.as_slice())).collect();
        let (question, question_mask) = pack(&qs, kernel_width)?;
        let (candidate, candidate_mask) = pack(&cs, kernel_width)?;
        Ok(Self {
            question,
            question_mask,
            candidate,
            candidate_mask,
        })
    }

    /// Looks up both token lists of every pair in `table`.
    pub fn from_tokens(pairs: &[(&[String], &[String])], table: &EmbeddingTable, kernel_width: usize) -> Result<Self> {
        let mut embedded = Vec::with_capacity(pairs.len());
        for (q, c) in pairs {
            let (qe, _) = table.embed_sequence(q)?;
            let (ce, _) = table.embed_sequence(c)?;
            embedded.push((qe.cast::<T>(), ce.cast::<T>()));
        }
        Self::from_embeddings(&embedded, kernel_width)
    }

    pub fn len(&self) -> usize {
        self.question.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_masks_and_feature_column() {
        let q = Tensor::<f64>::from_f64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let c1 = Tensor::<f64>::from_f64(&[1, 2], &[1.0, 0.0]).unwrap();
        let c2 = Tensor::<f64>::from_f64(&[3, 2], &[0.0, 2.0, 1.0, 1.0, -1.0, 0.0]).unwrap();
        let batch = PairBatch::from_embeddings(&[(q.clone(), c1), (q, c2)], 3).unwrap();
        assert_eq!(batch.question.shape(), &[2, 4, 3]);
        assert_eq!(batch.candidate.shape(), &[2, 5, 3]);
        assert_eq!(batch.question_mask, vec![true, true, true, true]);
        assert_eq!(batch.candidate_mask, vec![true, false, false, true, true, true]);
        // question word 0 against candidate 1 = [1, 0]: cosine 1
        assert!((batch.question.row(0)[2] - 1.0).abs() < 1e-12);
        // padding rows stay zero, feature included
        assert!(batch.question.row(2).iter().all(|&x| x == 0.0));
        assert!(batch.candidate.row(1).iter().all(|&x| x == 0.0));
    }
}
