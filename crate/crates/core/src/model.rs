//! Small differentiable models with hand-written backward passes.
//!
//! [`Mlp`] is a ReLU multilayer perceptron with a softmax cross-entropy head.
//! Parameters live in one flat list, `[w0, b0, w1, b1, ...]`, with weights
//! stored `[out, in]` row-major; that order is the registration order the
//! optimizers see.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Loss value and its gradient with respect to each parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grads: Vec<Tensor>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<Tensor>,
}

/// Row-major `c[m x n] = a[m x k] * b[k x n]` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    debug_assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: the debug assertions above spell out the bounds every caller
    // satisfies; all slices are distinct allocations.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Mlp {
    /// He-uniform weights from `seed`, zero biases.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        Self::check_sizes(sizes)?;
        let mut rng = SplitMix64::new(seed);
        let mut params = Vec::with_capacity(2 * (sizes.len() - 1));
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.uniform(-bound, bound))
                .collect();
            params.push(Tensor::new(data, vec![fan_out, fan_in])?);
            params.push(Tensor::zeros(&[fan_out]));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        Self::check_sizes(sizes)?;
        let params = sizes
            .windows(2)
            .flat_map(|w| [Tensor::zeros(&[w[1], w[0]]), Tensor::zeros(&[w[1]])])
            .collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn from_params(sizes: &[usize], params: Vec<Tensor>) -> Result<Self> {
        let template = Self::zeros(sizes)?;
        if params.len() != template.params.len() {
            return Err(Error::ArityMismatch {
                expected: template.params.len(),
                found: params.len(),
            });
        }
        for (p, t) in params.iter().zip(&template.params) {
            t.check_same_shape(p)?;
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params,
        })
    }

    fn check_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "MLP needs at least two non-zero layer sizes, got {sizes:?}"
            )));
        }
        Ok(())
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.params.iter().map(|p| p.shape().to_vec()).collect()
    }

    fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    fn check_batch(&self, x: &Tensor, y: Option<&[usize]>) -> Result<usize> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: vec![shape.first().copied().unwrap_or(0), self.input_dim()],
                found: shape.to_vec(),
            });
        }
        let batch = shape[0];
        if batch == 0 {
            return Err(Error::EmptyTensor);
        }
        if let Some(y) = y {
            if y.len() != batch {
                return Err(Error::CountMismatch {
                    images: batch,
                    labels: y.len(),
                });
            }
            let classes = self.num_classes();
            if let Some(&label) = y.iter().find(|&&l| l >= classes) {
                return Err(Error::InvalidLabel {
                    label,
                    num_classes: classes,
                });
            }
        }
        Ok(batch)
    }

    /// Pre-activations of every layer for a batch; the last entry is the logits.
    fn forward_cache(&self, x: &[f64], batch: usize) -> Vec<Vec<f64>> {
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(self.num_layers());
        for l in 0..self.num_layers() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = self.params[2 * l].data();
            let b = self.params[2 * l + 1].data();
            let mut z = vec![0.0; batch * fan_out];
            {
                let input: &[f64] = if l == 0 { x } else { &relu(&pre[l - 1]) };
                gemm(batch, fan_in, fan_out, input, (fan_in, 1), w, (1, fan_in), &mut z);
            }
            for row in z.chunks_exact_mut(fan_out) {
                for (zi, bi) in row.iter_mut().zip(b) {
                    *zi += bi;
                }
            }
            pre.push(z);
        }
        pre
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let batch = self.check_batch(x, None)?;
        let logits = self.forward_cache(x.data(), batch).pop().unwrap();
        Tensor::new(logits, vec![batch, self.num_classes()])
    }

    /// Mean cross-entropy of the batch and exact gradients for every parameter.
    pub fn forward_backward(&self, x: &Tensor, y: &[usize]) -> Result<LossGrad> {
        let batch = self.check_batch(x, Some(y))?;
        let classes = self.num_classes();
        let pre = self.forward_cache(x.data(), batch);
        let logits = pre.last().unwrap();

        let mut delta = vec![0.0; batch * classes];
        let mut loss = 0.0;
        let inv_b = 1.0 / batch as f64;
        for (i, (row, d)) in logits
            .chunks_exact(classes)
            .zip(delta.chunks_exact_mut(classes))
            .enumerate()
        {
            let (log_z, max) = log_sum_exp(row);
            loss += log_z - (row[y[i]] - max);
            for (dj, &zj) in d.iter_mut().zip(row) {
                *dj = (zj - max - log_z).exp() * inv_b;
            }
            d[y[i]] -= inv_b;
        }
        loss *= inv_b;

        let mut grads: Vec<Tensor> = Vec::with_capacity(self.params.len());
        for l in (0..self.num_layers()).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let activ = if l == 0 { None } else { Some(relu(&pre[l - 1])) };
            let input: &[f64] = activ.as_deref().unwrap_or(x.data());

            let mut dw = vec![0.0; fan_out * fan_in];
            gemm(fan_out, batch, fan_in, &delta, (1, fan_out), input, (fan_in, 1), &mut dw);
            let mut db = vec![0.0; fan_out];
            for row in delta.chunks_exact(fan_out) {
                for (s, d) in db.iter_mut().zip(row) {
                    *s += d;
                }
            }
            grads.push(Tensor::from_vec(db));
            grads.push(Tensor::new(dw, vec![fan_out, fan_in])?);

            if l > 0 {
                let w = self.params[2 * l].data();
                let mut prev = vec![0.0; batch * fan_in];
                gemm(batch, fan_out, fan_in, &delta, (fan_out, 1), w, (fan_in, 1), &mut prev);
                for (p, &z) in prev.iter_mut().zip(&pre[l - 1]) {
                    if z <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        grads.reverse();
        Ok(LossGrad { loss, grads })
    }

    /// Mean cross-entropy only.
    pub fn loss(&self, x: &Tensor, y: &[usize]) -> Result<f64> {
        Ok(self.evaluate(x, y, usize::MAX)?.loss)
    }

    /// Loss and accuracy over a dataset, processed `chunk` rows at a time.
    pub fn evaluate(&self, x: &Tensor, y: &[usize], chunk: usize) -> Result<Evaluation> {
        let n = self.check_batch(x, Some(y))?;
        let (dim, classes) = (self.input_dim(), self.num_classes());
        let chunk = chunk.max(1);
        let mut total_loss = 0.0;
        let mut correct = 0usize;
        for start in (0..n).step_by(chunk) {
            let end = (start + chunk).min(n);
            let rows = &x.data()[start * dim..end * dim];
            let logits = self.forward_cache(rows, end - start).pop().unwrap();
            for (row, &label) in logits.chunks_exact(classes).zip(&y[start..end]) {
                let (log_z, max) = log_sum_exp(row);
                total_loss += log_z - (row[label] - max);
                if argmax(row) == label {
                    correct += 1;
                }
            }
        }
        Ok(Evaluation {
            loss: total_loss / n as f64,
            accuracy: correct as f64 / n as f64,
        })
    }
}

fn relu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| v.max(0.0)).collect()
}

/// `(log sum exp(z - max), max)`
fn log_sum_exp(row: &[f64]) -> (f64, f64) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s = row.iter().fold(0.0, |acc, &z| acc + (z - max).exp());
    (s.ln(), max)
}

/// Index of the largest element; ties go to the lowest index.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Row-wise softmax of a `[B, C]` tensor.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let shape = logits.shape();
    if shape.len() != 2 {
        return Err(Error::ShapeMismatch {
            expected: vec![0, 0],
            found: shape.to_vec(),
        });
    }
    let classes = shape[1];
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(classes) {
        let (log_z, max) = log_sum_exp(row);
        out.extend(row.iter().map(|&z| (z - max - log_z).exp()));
    }
    Tensor::new(out, shape.to_vec())
}

/// `0.5 * ||theta - target||^2`.
pub fn quadratic_bowl(theta: &Tensor, target: &Tensor) -> Result<LossGrad> {
    let diff = theta.sub(target)?;
    Ok(LossGrad {
        loss: 0.5 * diff.sum_squares(),
        grads: vec![diff],
    })
}

/// Chained Rosenbrock: `sum_i 100 (x_{i+1} - x_i^2)^2 + (1 - x_i)^2`.
pub fn rosenbrock(theta: &Tensor) -> Result<LossGrad> {
    let x = theta.data();
    if x.len() < 2 {
        return Err(Error::InvalidConfig(
            "rosenbrock needs at least two coordinates".into(),
        ));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() - 1 {
        let a = x[i + 1] - x[i] * x[i];
        let b = 1.0 - x[i];
        loss += 100.0 * a * a + b * b;
        grad[i] += -400.0 * x[i] * a - 2.0 * b;
        grad[i + 1] += 200.0 * a;
    }
    Ok(LossGrad {
        loss,
        grads: vec![Tensor::new(grad, theta.shape().to_vec())?],
    })
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` at the listed coordinates.
pub fn central_difference(
    x: &Tensor,
    coords: &[usize],
    h: f64,
    mut f: impl FnMut(&Tensor) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(coords.len());
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// Denominator floor for relative errors, so near-zero gradients compare absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub index: usize,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Compare analytic MLP gradients against central differences.
///
/// With `max_coords = Some(k)`, at most `k` coordinates per tensor are probed,
/// chosen by `seed`; `None` checks every coordinate.
pub fn grad_check(
    model: &Mlp,
    x: &Tensor,
    y: &[usize],
    h: f64,
    tol: f64,
    max_coords: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!("h = {h} must be > 0")));
    }
    let analytic = model.forward_backward(x, y)?;
    let mut rng = SplitMix64::new(seed);
    let mut checks = Vec::with_capacity(model.params.len());
    for (index, p) in model.params.iter().enumerate() {
        let mut coords: Vec<usize> = (0..p.len()).collect();
        if let Some(k) = max_coords {
            if k < coords.len() {
                rng.shuffle(&mut coords);
                coords.truncate(k);
                coords.sort_unstable();
            }
        }
        let mut probe_model = model.clone();
        let numeric = central_difference(p, &coords, h, |perturbed| {
            probe_model.params[index] = perturbed.clone();
            probe_model.loss(x, y)
        })?;
        let max_rel_error = coords
            .iter()
            .zip(&numeric)
            .map(|(&c, &n)| relative_error(analytic.grads[index].data()[c], n))
            .fold(0.0, f64::max);
        checks.push(ParamCheck {
            index,
            checked: coords.len(),
            max_rel_error,
        });
    }
    let max_rel_error = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        params: checks,
        max_rel_error,
        tol,
        passed: max_rel_error < tol,
    })
}
