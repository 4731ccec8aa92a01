//! Single-head pixel-to-token cross-attention with a tanh gate.

use crate::diffcore::{DiffError, Graph, Real, Var};

/// Graph handles of one level's attention weights (`in x out` layouts).
#[derive(Clone, Copy, Debug)]
pub struct CrossAttnVars {
    pub tproj_w: Var,
    pub tproj_b: Var,
    pub wq_w: Var,
    pub wq_b: Var,
    pub wk_w: Var,
    pub wk_b: Var,
    pub wv_w: Var,
    pub wv_b: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput {
    /// Softmax weights, `N x hw x l`.
    pub weights: Var,
    /// `tanh(A)` laid out as `N x c x h x w`.
    pub gate: Var,
    /// `tanh(A) * Q`.
    pub output: Var,
}

/// Gates the feature map `query` (`N x c x h x w`) by its attention over
/// report tokens `embedding` (`N x l x d_e`).
///
/// Per batch item: `K = V = E·P`, `A = softmax((Q̄·Wq)(K·Wk)ᵀ / √c)·(V·Wv)`
/// with the softmax taken over token positions, and the output is
/// `tanh(A) ⊙ Q`. With `attend_padding` off, positions `>= valid[n]` are
/// excluded from the softmax.
pub fn cross_attention<T: Real>(
    g: &mut Graph<T>,
    query: Var,
    embedding: Var,
    valid: &[usize],
    p: &CrossAttnVars,
    attend_padding: bool,
) -> Result<AttentionOutput, DiffError> {
    let (n, c, h, w) = g.value(query).nchw("cross_attention")?;
    let emb_shape = g.value(embedding).shape().to_vec();
    let [en, l, _] = emb_shape[..] else {
        return Err(DiffError::Rank { op: "cross_attention", expected: 3, found: emb_shape.len() });
    };
    if en != n {
        return Err(DiffError::shape("cross_attention", "batch", n, en));
    }
    if l == 0 {
        return Err(DiffError::invalid("cross_attention", "report has zero token positions"));
    }
    let wq_out = g.value(p.wq_w).shape().get(1).copied().unwrap_or(0);
    if wq_out != c {
        return Err(DiffError::shape("cross_attention", "level channels", wq_out, c));
    }

    let pixels = g.to_tokens(query)?;
    let kv = g.linear(embedding, p.tproj_w, Some(p.tproj_b))?;
    let q = g.linear(pixels, p.wq_w, Some(p.wq_b))?;
    let k = g.linear(kv, p.wk_w, Some(p.wk_b))?;
    let v = g.linear(kv, p.wv_w, Some(p.wv_b))?;
    let scores = g.bmm(q, k, true)?;
    let scores = g.scale(scores, T::one() / T::lit(c as f64).sqrt())?;
    let weights = if attend_padding { g.rowsoftmax(scores)? } else { g.masked_rowsoftmax(scores, valid)? };
    let a = g.bmm(weights, v, false)?;
    let gate = g.tanh(a)?;
    let gate = g.from_tokens(gate, h, w)?;
    let output = g.mul(gate, query)?;
    Ok(AttentionOutput { weights, gate, output })
}
