//! Forward and backward kernels. All loops run in a fixed order so results
//! are bitwise reproducible.

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// `c[n x m] = a[n x k] * b[k x m]`
pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    let mut c = vec![0.0; n * m];
    for i in 0..n {
        let ci = &mut c[i * m..(i + 1) * m];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let bp = &b[p * m..(p + 1) * m];
            for (c, &b) in ci.iter_mut().zip(bp) {
                *c += aip * b;
            }
        }
    }
    c
}

/// `da[n x k] += dc[n x m] * b^T`
pub fn matmul_grad_a(dc: &[f64], b: &[f64], n: usize, k: usize, m: usize, da: &mut [f64]) {
    for i in 0..n {
        let dci = &dc[i * m..(i + 1) * m];
        for p in 0..k {
            let bp = &b[p * m..(p + 1) * m];
            let mut s = 0.0;
            for (x, y) in dci.iter().zip(bp) {
                s += x * y;
            }
            da[i * k + p] += s;
        }
    }
}

/// `db[k x m] += a^T * dc[n x m]`
pub fn matmul_grad_b(a: &[f64], dc: &[f64], n: usize, k: usize, m: usize, db: &mut [f64]) {
    for i in 0..n {
        let dci = &dc[i * m..(i + 1) * m];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let dbp = &mut db[p * m..(p + 1) * m];
            for (d, &g) in dbp.iter_mut().zip(dci) {
                *d += aip * g;
            }
        }
    }
}

pub struct LinearGrads {
    pub dx: Tensor,
    pub dw: Tensor,
    pub db: Tensor,
}

fn linear_dims(x: &Tensor, w: &Tensor) -> Result<(usize, usize, usize)> {
    if w.shape().len() != 2 {
        return Err(Error::invalid(format!("weight must be 2-D, got {:?}", w.shape())));
    }
    let (k, m) = (w.shape()[0], w.shape()[1]);
    if x.cols() != k {
        return Err(Error::invalid(format!(
            "input width {} does not match weight {:?}",
            x.cols(),
            w.shape()
        )));
    }
    Ok((x.rows(), k, m))
}

/// `y = x W + b`
pub fn linear_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, k, m) = linear_dims(x, w)?;
    if b.len() != m {
        return Err(Error::invalid(format!("bias has {} entries, expected {m}", b.len())));
    }
    let mut y = matmul(x.data(), w.data(), n, k, m);
    for row in y.chunks_mut(m) {
        for (v, bias) in row.iter_mut().zip(b.data()) {
            *v += bias;
        }
    }
    Tensor::matrix(n, m, y)
}

pub fn linear_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<LinearGrads> {
    let (n, k, m) = linear_dims(x, w)?;
    if dy.rows() != n || dy.cols() != m {
        return Err(Error::invalid(format!(
            "output gradient shape {:?} does not match {n}x{m}",
            dy.shape()
        )));
    }
    let mut dx = vec![0.0; n * k];
    matmul_grad_a(dy.data(), w.data(), n, k, m, &mut dx);
    let mut dw = vec![0.0; k * m];
    matmul_grad_b(x.data(), dy.data(), n, k, m, &mut dw);
    let mut db = vec![0.0; m];
    for row in dy.data().chunks(m) {
        for (d, g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    Ok(LinearGrads {
        dx: Tensor::new(x.shape().to_vec(), dx)?,
        dw: Tensor::new(w.shape().to_vec(), dw)?,
        db: Tensor::new(vec![m], db)?,
    })
}

#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Derivative of elu expressed through its output.
#[inline]
pub fn elu_grad_from_output(x: f64, y: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        y + 1.0
    }
}

#[inline]
pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// Incoming neighbourhoods in CSR form. Each destination lists its sources
/// in ascending order and always includes itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    n: usize,
    offsets: Vec<usize>,
    sources: Vec<usize>,
}

impl Adjacency {
    /// Builds the symmetric neighbourhood of an undirected edge list plus
    /// self-loops. Duplicate edges and explicit self-loops collapse.
    pub fn from_undirected(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut lists: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::invalid(format!(
                    "edge ({a}, {b}) references a node outside 0..{n}"
                )));
            }
            lists[a].push(b);
            lists[b].push(a);
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut sources = Vec::new();
        offsets.push(0);
        for mut l in lists {
            l.sort_unstable();
            l.dedup();
            sources.extend(l);
            offsets.push(sources.len());
        }
        Ok(Adjacency { n, offsets, sources })
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_entries(&self) -> usize {
        self.sources.len()
    }

    pub fn sources(&self, dst: usize) -> &[usize] {
        &self.sources[self.offsets[dst]..self.offsets[dst + 1]]
    }

    pub fn range(&self, dst: usize) -> std::ops::Range<usize> {
        self.offsets[dst]..self.offsets[dst + 1]
    }
}

/// Attention-weighted neighbour aggregation.
///
/// For each destination `i` and source `j` in its neighbourhood:
/// `u_ij = s_src[j] + s_dst[i]`, `e_ij = leaky_relu(u_ij)`,
/// `alpha_ij = softmax_j(e_ij)`, `out_i = sum_j alpha_ij z_j`.
/// Returns `(out, alpha, u)` with `alpha` and `u` in CSR order.
pub fn attention_forward(
    z: &[f64],
    width: usize,
    s_src: &[f64],
    s_dst: &[f64],
    adj: &Adjacency,
    slope: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = adj.num_nodes();
    let mut out = vec![0.0; n * width];
    let mut alpha = vec![0.0; adj.num_entries()];
    let mut pre = vec![0.0; adj.num_entries()];
    for i in 0..n {
        let range = adj.range(i);
        let srcs = adj.sources(i);
        let mut max = f64::NEG_INFINITY;
        for (e, &j) in range.clone().zip(srcs) {
            let u = s_src[j] + s_dst[i];
            pre[e] = u;
            let s = leaky_relu(u, slope);
            alpha[e] = s;
            max = max.max(s);
        }
        let mut denom = 0.0;
        for e in range.clone() {
            let w = (alpha[e] - max).exp();
            alpha[e] = w;
            denom += w;
        }
        let oi = &mut out[i * width..(i + 1) * width];
        for (e, &j) in range.zip(srcs) {
            alpha[e] /= denom;
            let a = alpha[e];
            for (o, &zj) in oi.iter_mut().zip(&z[j * width..(j + 1) * width]) {
                *o += a * zj;
            }
        }
    }
    (out, alpha, pre)
}

pub struct AttentionGrads {
    pub dz: Vec<f64>,
    pub ds_src: Vec<f64>,
    pub ds_dst: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn attention_backward(
    dout: &[f64],
    z: &[f64],
    width: usize,
    alpha: &[f64],
    pre: &[f64],
    adj: &Adjacency,
    slope: f64,
) -> AttentionGrads {
    let n = adj.num_nodes();
    let mut dz = vec![0.0; n * width];
    let mut ds_src = vec![0.0; n];
    let mut ds_dst = vec![0.0; n];
    let mut dalpha = Vec::new();
    for i in 0..n {
        let range = adj.range(i);
        let srcs = adj.sources(i);
        let doi = &dout[i * width..(i + 1) * width];
        dalpha.clear();
        let mut weighted = 0.0;
        for (e, &j) in range.clone().zip(srcs) {
            let zj = &z[j * width..(j + 1) * width];
            let mut d = 0.0;
            for (g, v) in doi.iter().zip(zj) {
                d += g * v;
            }
            dalpha.push(d);
            weighted += alpha[e] * d;
            let dzj = &mut dz[j * width..(j + 1) * width];
            for (acc, g) in dzj.iter_mut().zip(doi) {
                *acc += alpha[e] * g;
            }
        }
        for ((e, &j), d) in range.zip(srcs).zip(&dalpha) {
            let de = alpha[e] * (d - weighted);
            let du = if pre[e] > 0.0 { de } else { slope * de };
            ds_src[j] += du;
            ds_dst[i] += du;
        }
    }
    AttentionGrads { dz, ds_src, ds_dst }
}

/// Mean of `w * (pred - target)^2` over entries with `w = 1`; zero when no
/// entry is selected.
pub fn masked_mse(pred: &[f64], target: &[f64], weight: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.len() != weight.len() {
        return Err(Error::invalid(format!(
            "mse operands differ in length: {}, {}, {}",
            pred.len(),
            target.len(),
            weight.len()
        )));
    }
    let count: f64 = weight.iter().sum();
    if count == 0.0 {
        return Ok(0.0);
    }
    let mut s = 0.0;
    for ((p, t), w) in pred.iter().zip(target).zip(weight) {
        if *w != 0.0 {
            let d = p - t;
            s += w * d * d;
        }
    }
    Ok(s / count)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight_passes_input_through() {
        let x = Tensor::matrix(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.0, 4.0]).unwrap();
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 4] = 1.0;
        }
        let w = Tensor::matrix(3, 3, eye).unwrap();
        let y = linear_forward(&x, &w, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn linear_hand_arithmetic() {
        let x = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let w = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::vector(vec![3.0, 4.0]);
        assert_eq!(linear_forward(&x, &w, &b).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn linear_shape_mismatch() {
        let x = Tensor::matrix(1, 3, vec![1.0; 3]).unwrap();
        let w = Tensor::matrix(2, 2, vec![1.0; 4]).unwrap();
        assert!(linear_forward(&x, &w, &Tensor::zeros(&[2])).is_err());
        let x = Tensor::matrix(1, 2, vec![1.0; 2]).unwrap();
        assert!(linear_forward(&x, &w, &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn adjacency_includes_self_loops() {
        let adj = Adjacency::from_undirected(3, &[(0, 1), (1, 0)]).unwrap();
        assert_eq!(adj.sources(0), &[0, 1]);
        assert_eq!(adj.sources(1), &[0, 1]);
        assert_eq!(adj.sources(2), &[2]);
        assert!(Adjacency::from_undirected(2, &[(0, 2)]).is_err());
    }

    #[test]
    fn attention_weights_sum_to_one() {
        let adj = Adjacency::from_undirected(4, &[(0, 1), (1, 2), (2, 3), (0, 3)]).unwrap();
        let z = vec![0.1, -0.3, 0.5, 0.2, -0.7, 0.9, 1.1, 0.0];
        let (_, alpha, _) = attention_forward(&z, 2, &[0.3, -1.0, 2.0, 0.1], &[0.5, 0.4, -0.2, 0.0], &adj, 0.2);
        for i in 0..4 {
            let s: f64 = adj.range(i).map(|e| alpha[e]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mse_cases() {
        assert_eq!(masked_mse(&[1.0, 2.0], &[1.0, 2.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(masked_mse(&[0.0, 0.0], &[1.0, 1.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(masked_mse(&[5.0, 0.0], &[1.0, 1.0], &[0.0, 0.0]).unwrap(), 0.0);
        let a = masked_mse(&[0.5, 9.0], &[1.0, 1.0], &[1.0, 0.0]).unwrap();
        let b = masked_mse(&[0.5, -4.0], &[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert_eq!(a, b);
        assert!(masked_mse(&[0.0], &[1.0, 1.0], &[1.0, 1.0]).is_err());
    }
}
