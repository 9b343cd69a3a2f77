use ndarray::Array2;
use poster_nn::{softmax_rows, Matrix};

use super::ExtractionError;

/// Additive attention bias over `n` sentences followed by `m` captions.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBias {
    pub n: usize,
    pub m: usize,
    pub matrix: Matrix,
}

impl AttentionBias {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            matrix: Array2::zeros((n + m, n + m)),
        }
    }

    pub fn order(&self) -> usize {
        self.n + self.m
    }

    pub fn is_zero(&self) -> bool {
        self.matrix.iter().all(|&v| v == 0.0)
    }
}

/// Builds the reference-derived bias. For every graph `i` referred to by the
/// sentence set `J` (`t = |J| > 0`), adds `h1/t` between caption row `n + i`
/// and each `j ∈ J` (both directions) and `h2/t` between every ordered pair
/// of distinct sentences in `J`.
///
/// `refs` holds `(sentence, graph)` pairs; duplicates are ignored.
///
/// # Panics
/// If a pair names a sentence `>= n` or a graph `>= m`.
pub fn build_attention_bias(n: usize, m: usize, refs: &[(usize, usize)], h1: f64, h2: f64) -> AttentionBias {
    for &(s, g) in refs {
        assert!(s < n && g < m, "reference ({s}, {g}) out of range for n={n}, m={m}");
    }
    let mut bias = AttentionBias::zeros(n, m);
    let a = &mut bias.matrix;
    for graph in 0..m {
        let mut referring: Vec<usize> = refs.iter().filter(|(_, g)| *g == graph).map(|(s, _)| *s).collect();
        referring.sort_unstable();
        referring.dedup();
        if referring.is_empty() {
            continue;
        }
        let t = referring.len() as f64;
        let row = n + graph;
        for &j in &referring {
            a[[row, j]] += h1 / t;
            a[[j, row]] += h1 / t;
        }
        for &j in &referring {
            for &k in &referring {
                if j != k {
                    a[[j, k]] += h2 / t;
                }
            }
        }
    }
    bias
}

fn scores(q: &Matrix, k: &Matrix, d_k: usize) -> Result<Matrix, ExtractionError> {
    if q.ncols() != k.ncols() {
        return Err(ExtractionError::Dimension(format!(
            "query width {} != key width {}",
            q.ncols(),
            k.ncols()
        )));
    }
    if d_k == 0 {
        return Err(ExtractionError::Dimension("d_k must be positive".into()));
    }
    Ok(q.dot(&k.t()) / (d_k as f64).sqrt())
}

/// `softmax(Q Kᵀ / sqrt(d_k))`
pub fn scaled_dot_attention(q: &Matrix, k: &Matrix, d_k: usize) -> Result<Matrix, ExtractionError> {
    Ok(softmax_rows(&scores(q, k, d_k)?))
}

/// `softmax(Q Kᵀ / sqrt(d_k) + A)`
pub fn biased_attention(q: &Matrix, k: &Matrix, a: &Matrix, d_k: usize) -> Result<Matrix, ExtractionError> {
    let logits = scores(q, k, d_k)?;
    if a.dim() != logits.dim() {
        return Err(ExtractionError::Dimension(format!(
            "bias is {:?}, attention logits are {:?}",
            a.dim(),
            logits.dim()
        )));
    }
    Ok(softmax_rows(&(logits + a)))
}
