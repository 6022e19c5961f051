//! Stock graph: sector/correlation initialization and learnable refinement.

use graphsent_autograd::{Graph, Tensor, Var};

use crate::{Error, Result};

/// Minimum number of jointly observed days for a correlation.
pub const MIN_OVERLAP: usize = 30;

#[derive(Clone, Debug, PartialEq)]
pub struct MarketGraph {
    pub n_nodes: usize,
    pub sector: Vec<usize>,
    /// Row-major `N x N` symmetric weights in `[0, 1]` with unit diagonal.
    pub edges: Vec<f64>,
    pub alpha: f64,
}

impl MarketGraph {
    pub fn edge(&self, i: usize, j: usize) -> f64 {
        self.edges[i * self.n_nodes + j]
    }
}

/// Pearson correlation over positions where both inputs are finite.
pub fn pearson_overlap(a: &[f64], b: &[f64]) -> (f64, usize) {
    let pairs: Vec<(f64, f64)> = a
        .iter()
        .zip(b)
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|(&x, &y)| (x, y))
        .collect();
    let n = pairs.len();
    if n < 2 {
        return (0.0, n);
    }
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    let den = (saa * sbb).sqrt();
    (if den > 0.0 { sab / den } else { 0.0 }, n)
}

/// `e_ij = alpha * [sector_i == sector_j] + (1 - alpha) * max(0, rho_ij)`
/// with Pearson `rho` over training-period daily returns (NaN = missing).
pub fn init_edges(returns: &[Vec<f64>], sector: &[usize], alpha: f64) -> Result<MarketGraph> {
    let n = returns.len();
    if sector.len() != n {
        return Err(Error::Graph(format!("{} return series but {} sector labels", n, sector.len())));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Graph(format!("alpha must lie in [0,1], got {alpha}")));
    }
    let mut edges = vec![0.0; n * n];
    for i in 0..n {
        edges[i * n + i] = 1.0;
        for j in i + 1..n {
            let (rho, overlap) = pearson_overlap(&returns[i], &returns[j]);
            if overlap < MIN_OVERLAP {
                return Err(Error::Graph(format!(
                    "stocks {i} and {j} share only {overlap} training days (need {MIN_OVERLAP})"
                )));
            }
            let same = if sector[i] == sector[j] { 1.0 } else { 0.0 };
            let e = alpha * same + (1.0 - alpha) * rho.max(0.0);
            edges[i * n + j] = e;
            edges[j * n + i] = e;
        }
    }
    Ok(MarketGraph {
        n_nodes: n,
        sector: sector.to_vec(),
        edges,
        alpha,
    })
}

/// Symmetrizes, clips to `[0, 1]` and pins the diagonal to 1.
pub fn project_edges(e: &mut [f64], n: usize) {
    for i in 0..n {
        e[i * n + i] = 1.0;
        for j in i + 1..n {
            let v = (0.5 * (e[i * n + j] + e[j * n + i])).clamp(0.0, 1.0);
            e[i * n + j] = v;
            e[j * n + i] = v;
        }
    }
}

/// Off-diagonal mask and identity for `n` nodes.
fn diag_consts(g: &mut Graph, n: usize) -> (Var, Var) {
    let mut off = vec![1.0; n * n];
    let mut eye = vec![0.0; n * n];
    for i in 0..n {
        off[i * n + i] = 0.0;
        eye[i * n + i] = 1.0;
    }
    (
        g.constant(Tensor::new(&[n, n], off).expect("square")),
        g.constant(Tensor::new(&[n, n], eye).expect("square")),
    )
}

/// Learned edge update from node representations `h` of shape `[.., N, d]`:
/// `raw_ij = sigmoid(w_e . [h_i, h_j] + b_e)`, symmetrized by averaging with
/// its transpose, diagonal reset to 1. `w_e` is `[2d, 1]`, `b_e` is `[1]`.
pub fn refine_edges(g: &mut Graph, h: Var, w_e: Var, b_e: Var) -> Result<Var> {
    let sh = g.shape(h).to_vec();
    if sh.len() < 2 {
        return Err(Error::Graph(format!("node representations need shape [.., N, d], got {sh:?}")));
    }
    let n = sh[sh.len() - 2];
    let d = sh[sh.len() - 1];
    if g.shape(w_e) != [2 * d, 1] {
        return Err(Error::Graph(format!(
            "edge weights must be [{}, 1], got {:?}",
            2 * d,
            g.shape(w_e)
        )));
    }
    if !g.value(h).is_finite() {
        return Err(Error::Numeric("non-finite node representation".into()));
    }
    let w1 = g.slice(w_e, 0, 0, d)?;
    let w2 = g.slice(w_e, 0, d, 2 * d)?;
    let a = g.matmul(h, w1)?;
    let b = g.matmul(h, w2)?;
    let bt = g.transpose(b)?;
    let s = g.add(a, bt)?;
    let s = g.add(s, b_e)?;
    let raw = g.sigmoid(s);
    let rt = g.transpose(raw)?;
    let sym = g.add(raw, rt)?;
    let sym = g.scale(sym, 0.5);
    let (off, eye) = diag_consts(g, n);
    let masked = g.mul(sym, off)?;
    Ok(g.add(masked, eye)?)
}

/// The `k` strongest and `k` weakest off-diagonal edges as `(i, j, weight)`.
pub fn extreme_edges(edges: &[f64], n: usize, k: usize) -> (Vec<(usize, usize, f64)>, Vec<(usize, usize, f64)>) {
    let mut all: Vec<(usize, usize, f64)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| (i, j, edges[i * n + j]))
        .collect();
    all.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let top = all.iter().take(k).copied().collect();
    let bottom = all.iter().rev().take(k).copied().collect();
    (top, bottom)
}
