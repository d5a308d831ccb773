//! Laplacian-based graph convolutions written two ways: the dense matrix
//! formula and the equivalent per-node message passing form.
//!
//! Spectral layer: with `L = I − D^{-1/2} W D^{-1/2}` and eigenvectors `V`,
//! `y_j = σ(Σ_i V F_ij Vᵀ x_i)` for diagonal filters `F_ij`. As message
//! passing, `M(h_v, h_w) = L̃_vw h_w` with `(L̃_vw)_ij = (V F_ij Vᵀ)_vw` and
//! `U(h, m) = σ(m)`.
//!
//! Kipf-Welling layer: `H' = σ(D̃^{-1/2} Ã D̃^{-1/2} H W)` with `Ã = A + I`.
//! As message passing, `M(h_v, h_w) = Ã_vw (deg v · deg w)^{-1/2} h_w` and
//! `U(h, m) = σ(Wᵀ m)`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sigma {
    #[default]
    Relu,
    Identity,
}

impl Sigma {
    fn apply(self, v: f64) -> f64 {
        match self {
            Sigma::Relu => v.max(0.0),
            Sigma::Identity => v,
        }
    }
}

fn to_dmatrix(t: &Tensor) -> Result<DMatrix<f64>> {
    let (r, c) = t.dims2()?;
    Ok(DMatrix::from_row_slice(r, c, t.data()))
}

fn from_dmatrix(m: &DMatrix<f64>) -> Tensor {
    let data = (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
        .map(|(i, j)| m[(i, j)])
        .collect();
    Tensor::new(&[m.nrows(), m.ncols()], data).expect("consistent shape")
}

fn square_symmetric(w: &Tensor) -> Result<DMatrix<f64>> {
    let m = to_dmatrix(w)?;
    if m.nrows() != m.ncols() {
        return dim_err(format!("adjacency must be square, got {:?}", w.shape()));
    }
    for i in 0..m.nrows() {
        for j in 0..i {
            if m[(i, j)] != m[(j, i)] {
                return Err(Error::Contract(format!(
                    "adjacency is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(m)
}

/// `I − D^{-1/2} W D^{-1/2}`; isolated nodes get a zero scaling.
pub fn normalized_laplacian(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let deg: f64 = w.row(i).iter().sum();
            if deg > 0.0 {
                1.0 / deg.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        delta - inv_sqrt[i] * w[(i, j)] * inv_sqrt[j]
    })
}

/// Eigenpairs sorted by ascending eigenvalue; each eigenvector's first
/// nonzero component is positive.
pub fn sorted_eigenvectors(l: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = l.nrows();
    let eig = SymmetricEigen::new(l.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut v = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).clone_owned();
        if let Some(first) = col.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        v.set_column(dst, &col);
    }
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    (values, v)
}

/// A spectral layer with diagonal filters `F_ij`, `i < d1`, `j < d2`.
#[derive(Debug, Clone)]
pub struct SpectralLayer {
    pub laplacian: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
    /// `filters[i][j]` holds the diagonal of `F_ij` (length `N`).
    pub filters: Vec<Vec<Vec<f64>>>,
    pub sigma: Sigma,
}

impl SpectralLayer {
    /// `filters` has shape `[d1, d2, N]`.
    pub fn new(adjacency: &Tensor, filters: &Tensor, sigma: Sigma) -> Result<Self> {
        let w = square_symmetric(adjacency)?;
        let n = w.nrows();
        let (d1, d2) = match filters.shape() {
            [d1, d2, len] if *len == n => (*d1, *d2),
            s => return dim_err(format!("filters must be [d1, d2, {n}], got {s:?}")),
        };
        let laplacian = normalized_laplacian(&w);
        let (eigenvalues, eigenvectors) = sorted_eigenvectors(&laplacian);
        let filters = (0..d1)
            .map(|i| {
                (0..d2)
                    .map(|j| filters.data()[(i * d2 + j) * n..(i * d2 + j + 1) * n].to_vec())
                    .collect()
            })
            .collect();
        Ok(Self {
            laplacian,
            eigenvalues,
            eigenvectors,
            filters,
            sigma,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.laplacian.nrows()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.filters.len(), self.filters.first().map_or(0, Vec::len))
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (d1, _) = self.dims();
        if x.shape() != [self.num_nodes(), d1] {
            return dim_err(format!(
                "input must be [{}, {d1}], got {:?}",
                self.num_nodes(),
                x.shape()
            ));
        }
        Ok(())
    }

    /// `(L̃_vw)_ij = (V F_ij Vᵀ)_vw` as an `N×N×d1×d2` array.
    pub fn pair_operators(&self) -> Vec<Vec<DMatrix<f64>>> {
        let n = self.num_nodes();
        let (d1, d2) = self.dims();
        let v = &self.eigenvectors;
        (0..n)
            .map(|a| {
                (0..n)
                    .map(|b| {
                        DMatrix::from_fn(d1, d2, |i, j| {
                            (0..n)
                                .map(|k| v[(a, k)] * self.filters[i][j][k] * v[(b, k)])
                                .sum()
                        })
                    })
                    .collect()
            })
            .collect()
    }
}

/// `y_j = σ(Σ_i V F_ij Vᵀ x_i)` evaluated with dense matrix products.
pub fn spectral_layer_dense(x: &Tensor, layer: &SpectralLayer) -> Result<Tensor> {
    layer.check_input(x)?;
    let (d1, d2) = layer.dims();
    let xm = to_dmatrix(x)?;
    let v = &layer.eigenvectors;
    let spectral_x: Vec<_> = (0..d1).map(|i| v.transpose() * xm.column(i)).collect();
    let mut y = DMatrix::zeros(layer.num_nodes(), d2);
    for j in 0..d2 {
        let mut acc = nalgebra::DVector::zeros(layer.num_nodes());
        for (i, sx) in spectral_x.iter().enumerate() {
            let filtered = sx.component_mul(&nalgebra::DVector::from_column_slice(&layer.filters[i][j]));
            acc += v * filtered;
        }
        y.set_column(j, &acc);
    }
    Ok(from_dmatrix(&y.map(|e| layer.sigma.apply(e))))
}

/// Same layer as message passing: `m_v = Σ_w L̃_vwᵀ h_w`, `h_v' = σ(m_v)`.
pub fn spectral_as_mpnn(x: &Tensor, layer: &SpectralLayer) -> Result<Tensor> {
    layer.check_input(x)?;
    let n = layer.num_nodes();
    let (_, d2) = layer.dims();
    let ops = layer.pair_operators();
    let mut out = Vec::with_capacity(n * d2);
    for row in &ops {
        let mut message = nalgebra::DVector::zeros(d2);
        for (w, op) in row.iter().enumerate() {
            let h_w = nalgebra::DVector::from_column_slice(x.row(w));
            message += op.transpose() * h_w;
        }
        out.extend(message.iter().map(|&m| layer.sigma.apply(m)));
    }
    Tensor::new(&[n, d2], out)
}

/// Kipf-Welling graph convolution layer.
#[derive(Debug, Clone)]
pub struct GcnLayer {
    /// `Ã = A + I`.
    pub adjacency_self_loops: DMatrix<f64>,
    pub degrees: Vec<f64>,
    pub weight: DMatrix<f64>,
    pub sigma: Sigma,
}

impl GcnLayer {
    pub fn new(adjacency: &Tensor, weight: &Tensor, sigma: Sigma) -> Result<Self> {
        let a = square_symmetric(adjacency)?;
        let n = a.nrows();
        let a_tilde = a + DMatrix::identity(n, n);
        let degrees: Vec<f64> = (0..n).map(|i| a_tilde.row(i).iter().sum()).collect();
        if let Some(v) = degrees.iter().position(|&d| d <= 0.0) {
            return Err(Error::Contract(format!(
                "node {v} has non-positive degree after adding self loops"
            )));
        }
        Ok(Self {
            adjacency_self_loops: a_tilde,
            degrees,
            weight: to_dmatrix(weight)?,
            sigma,
        })
    }

    /// `c_vw = Ã_vw (deg v · deg w)^{-1/2}`.
    pub fn coefficient(&self, v: usize, w: usize) -> f64 {
        self.adjacency_self_loops[(v, w)] / (self.degrees[v] * self.degrees[w]).sqrt()
    }

    fn check_input(&self, h: &Tensor) -> Result<usize> {
        let (rows, cols) = h.dims2()?;
        if rows != self.degrees.len() || cols != self.weight.nrows() {
            return dim_err(format!(
                "input must be [{}, {}], got {:?}",
                self.degrees.len(),
                self.weight.nrows(),
                h.shape()
            ));
        }
        Ok(rows)
    }
}

/// `σ(D̃^{-1/2} Ã D̃^{-1/2} H W)` with dense products.
pub fn gcn_dense(h: &Tensor, layer: &GcnLayer) -> Result<Tensor> {
    layer.check_input(h)?;
    let d_inv_sqrt = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        layer.degrees.len(),
        layer.degrees.iter().map(|d| 1.0 / d.sqrt()),
    ));
    let l = &d_inv_sqrt * &layer.adjacency_self_loops * &d_inv_sqrt;
    let out = l * to_dmatrix(h)? * &layer.weight;
    Ok(from_dmatrix(&out.map(|e| layer.sigma.apply(e))))
}

/// Per-node message passing form: `m_v = Σ_w c_vw h_w`, `h_v' = σ(Wᵀ m_v)`.
pub fn gcn_as_mpnn(h: &Tensor, layer: &GcnLayer) -> Result<Tensor> {
    let n = layer.check_input(h)?;
    let d_in = layer.weight.nrows();
    let d_out = layer.weight.ncols();
    let mut out = Vec::with_capacity(n * d_out);
    for v in 0..n {
        let mut message = vec![0.0; d_in];
        for w in 0..n {
            let c = layer.coefficient(v, w);
            if c != 0.0 {
                for (m, x) in message.iter_mut().zip(h.row(w)) {
                    *m += c * x;
                }
            }
        }
        for j in 0..d_out {
            let pre: f64 = (0..d_in).map(|i| layer.weight[(i, j)] * message[i]).sum();
            out.push(layer.sigma.apply(pre));
        }
    }
    Tensor::new(&[n, d_out], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_adjacency(n: usize) -> Tensor {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 1..n {
            t.data_mut()[i * n + i - 1] = 1.0;
            t.data_mut()[(i - 1) * n + i] = 1.0;
        }
        t
    }

    #[test]
    fn identity_filters_reproduce_input() {
        let n = 4;
        let d = 2;
        let mut f = Tensor::zeros(&[d, d, n]);
        for i in 0..d {
            for k in 0..n {
                f.data_mut()[(i * d + i) * n + k] = 1.0;
            }
        }
        let layer = SpectralLayer::new(&path_adjacency(n), &f, Sigma::Identity).unwrap();
        let x = Tensor::new(&[n, d], (0..8).map(|v| v as f64 - 3.0).collect()).unwrap();
        let y = spectral_layer_dense(&x, &layer).unwrap();
        assert!(y.max_abs_diff(&x).unwrap() < 1e-12);
        let y2 = spectral_as_mpnn(&x, &layer).unwrap();
        assert!(y2.max_abs_diff(&x).unwrap() < 1e-12);
    }

    #[test]
    fn zero_filters_give_sigma_of_zero() {
        let f = Tensor::zeros(&[2, 3, 3]);
        let layer = SpectralLayer::new(&path_adjacency(3), &f, Sigma::Relu).unwrap();
        let x = Tensor::full(&[3, 2], 1.5);
        let y = spectral_layer_dense(&x, &layer).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eigenvectors_are_orthonormal_and_sorted() {
        let layer = SpectralLayer::new(&path_adjacency(5), &Tensor::zeros(&[1, 1, 5]), Sigma::Relu).unwrap();
        let v = &layer.eigenvectors;
        let gram = v.transpose() * v;
        assert!((gram - DMatrix::<f64>::identity(5, 5)).abs().max() < 1e-10);
        assert!(layer.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        let l = &layer.laplacian;
        assert!((l - l.transpose()).abs().max() == 0.0);
    }

    #[test]
    fn non_symmetric_adjacency_is_rejected() {
        let mut w = path_adjacency(3);
        w.data_mut()[1] = 0.5;
        assert!(matches!(
            SpectralLayer::new(&w, &Tensor::zeros(&[1, 1, 3]), Sigma::Relu),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn single_node_graph() {
        let w = Tensor::zeros(&[1, 1]);
        let f = Tensor::new(&[2, 1, 1], vec![0.5, -2.0]).unwrap();
        let layer = SpectralLayer::new(&w, &f, Sigma::Identity).unwrap();
        let x = Tensor::new(&[1, 2], vec![3.0, 1.0]).unwrap();
        // V = [1]: y = 0.5*3 + (-2)*1
        let y = spectral_layer_dense(&x, &layer).unwrap();
        assert!((y.data()[0] + 0.5).abs() < 1e-14);
        let y2 = spectral_as_mpnn(&x, &layer).unwrap();
        assert!((y2.data()[0] + 0.5).abs() < 1e-14);
    }

    #[test]
    fn gcn_disconnected_self_loops_is_identity() {
        let layer = GcnLayer::new(&Tensor::zeros(&[2, 2]), &Tensor::identity(3), Sigma::Identity).unwrap();
        let h = Tensor::new(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.25, -1.0]).unwrap();
        assert_eq!(gcn_as_mpnn(&h, &layer).unwrap(), h);
        assert_eq!(layer.coefficient(0, 0), 1.0);
    }

    #[test]
    fn gcn_single_edge_cross_coefficient() {
        let layer = GcnLayer::new(&path_adjacency(2), &Tensor::identity(1), Sigma::Identity).unwrap();
        assert_eq!(layer.coefficient(0, 1), 0.5);
        assert_eq!(layer.coefficient(1, 0), 0.5);
    }
}
