//! Desk-scale trainable tasks implementing the step/eval interface.
//!
//! A task separates the differentiable surrogate driving `step` from the
//! true metric measured by `eval`; the two need not agree, and eval need
//! not be differentiable at all. Step and eval are deterministic given their
//! inputs and the member's explicit noise stream.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::core::{CoreError, HyperValue, HyperparamSpec, HyperparamVector, ParamVector, Prior};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("non-finite loss: training diverged")]
    NonFiniteLoss,
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// A pluggable step/eval pair.
pub trait Task: Send + Sync {
    fn name(&self) -> &'static str;

    /// Parameter dimensionality, fixed for the lifetime of an experiment.
    fn dim(&self) -> usize;

    fn hyperparam_specs(&self) -> &[HyperparamSpec];

    /// Initial parameters for one member, drawn from its init stream.
    fn init(&self, rng: &mut dyn RngCore) -> ParamVector;

    /// One iterative update of θ conditioned on h.
    fn step(
        &self,
        theta: &ParamVector,
        h: &HyperparamVector,
        rng: &mut dyn RngCore,
    ) -> Result<ParamVector, TaskError>;

    /// Measure the true performance metric (higher is better).
    fn eval(&self, theta: &ParamVector, rng: &mut dyn RngCore) -> f64;
}

// ---------------------------------------------------------------------------
// Toy quadratic
// ---------------------------------------------------------------------------

/// The two-worker toy problem: maximize Q(θ) = 1.2 − (θ0² + θ1²) while only
/// the surrogate Q̂(θ|h) = 1.2 − (h0·θ0² + h1·θ1²) can be differentiated.
/// h weights the update direction; gradient ascent on the surrogate gives
/// θi ← θi·(1 − 2·lr·hi).
#[derive(Debug, Clone)]
pub struct QuadraticTask {
    pub lr: f64,
    specs: Vec<HyperparamSpec>,
}

impl QuadraticTask {
    pub fn new(lr: f64) -> Self {
        let specs = ["h0", "h1"]
            .iter()
            .map(|n| {
                HyperparamSpec::new(*n, Prior::Uniform { lo: 0.0, hi: 1.0 })
                    .expect("static spec is valid")
            })
            .collect();
        Self { lr, specs }
    }
}

impl Default for QuadraticTask {
    fn default() -> Self {
        Self::new(0.01)
    }
}

/// Q̂(θ|h), the differentiable surrogate.
pub fn quadratic_surrogate(theta: &[f64], h: &[f64]) -> f64 {
    1.2 - (h[0] * theta[0] * theta[0] + h[1] * theta[1] * theta[1])
}

/// ∂Q̂/∂θ.
pub fn quadratic_surrogate_grad(theta: &[f64], h: &[f64]) -> [f64; 2] {
    [-2.0 * h[0] * theta[0], -2.0 * h[1] * theta[1]]
}

/// Q(θ), the true objective.
pub fn quadratic_objective(theta: &[f64]) -> f64 {
    1.2 - (theta[0] * theta[0] + theta[1] * theta[1])
}

impl Task for QuadraticTask {
    fn name(&self) -> &'static str {
        "quadratic"
    }

    fn dim(&self) -> usize {
        2
    }

    fn hyperparam_specs(&self) -> &[HyperparamSpec] {
        &self.specs
    }

    fn init(&self, _rng: &mut dyn RngCore) -> ParamVector {
        ParamVector::new(vec![0.9, 0.9]).expect("finite")
    }

    fn step(
        &self,
        theta: &ParamVector,
        h: &HyperparamVector,
        _rng: &mut dyn RngCore,
    ) -> Result<ParamVector, TaskError> {
        let th = theta.values();
        let hv = [h.num("h0")?, h.num("h1")?];
        let grad = quadratic_surrogate_grad(th, &hv);
        Ok(ParamVector::new(vec![
            th[0] + self.lr * grad[0],
            th[1] + self.lr * grad[1],
        ])?)
    }

    fn eval(&self, theta: &ParamVector, _rng: &mut dyn RngCore) -> f64 {
        quadratic_objective(theta.values())
    }
}

/// The toy's explore: additive Gaussian noise with standard deviation
/// `sigma` on each numeric coordinate of h, clamped to [0, 1].
pub fn explore_direction(
    h: &HyperparamVector,
    sigma: f64,
    rng: &mut dyn RngCore,
) -> HyperparamVector {
    if sigma == 0.0 {
        return h.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated by config");
    let mut out = h.clone();
    for (name, value) in h.iter() {
        if let HyperValue::Num(v) = value {
            out.set(name.clone(), HyperValue::Num((v + normal.sample(rng)).clamp(0.0, 1.0)));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Noisy quadratic
// ---------------------------------------------------------------------------

/// Gradient descent with a learning-rate hyperparameter on a fixed
/// positive-definite quadratic; eval is the exact objective plus zero-mean
/// Gaussian observation noise. Exercises eval windows and t-test selection.
#[derive(Debug, Clone)]
pub struct NoisyQuadraticTask {
    pub curvatures: Vec<f64>,
    pub noise: f64,
    specs: Vec<HyperparamSpec>,
}

impl NoisyQuadraticTask {
    pub fn new(curvatures: Vec<f64>, noise: f64) -> Self {
        assert!(curvatures.iter().all(|l| *l > 0.0), "curvatures must be positive");
        assert!(noise >= 0.0);
        let specs = vec![HyperparamSpec::new("lr", Prior::LogUniform { lo: 1e-3, hi: 1.0 })
            .expect("static spec is valid")];
        Self { curvatures, noise, specs }
    }

    /// −½·θᵀAθ, maximized at the origin.
    pub fn objective(&self, theta: &[f64]) -> f64 {
        -0.5 * theta
            .iter()
            .zip(&self.curvatures)
            .map(|(t, l)| l * t * t)
            .sum::<f64>()
    }
}

impl Default for NoisyQuadraticTask {
    fn default() -> Self {
        Self::new(vec![0.5, 1.0, 2.0, 4.0], 0.1)
    }
}

impl Task for NoisyQuadraticTask {
    fn name(&self) -> &'static str {
        "noisy-quadratic"
    }

    fn dim(&self) -> usize {
        self.curvatures.len()
    }

    fn hyperparam_specs(&self) -> &[HyperparamSpec] {
        &self.specs
    }

    fn init(&self, rng: &mut dyn RngCore) -> ParamVector {
        let normal = Normal::new(0.0, 1.0).unwrap();
        ParamVector::new((0..self.dim()).map(|_| 2.0 * normal.sample(rng)).collect())
            .expect("finite init")
    }

    fn step(
        &self,
        theta: &ParamVector,
        h: &HyperparamVector,
        _rng: &mut dyn RngCore,
    ) -> Result<ParamVector, TaskError> {
        let lr = h.num("lr")?;
        Ok(ParamVector::new(
            theta
                .values()
                .iter()
                .zip(&self.curvatures)
                .map(|(t, l)| t - lr * l * t)
                .collect(),
        )?)
    }

    fn eval(&self, theta: &ParamVector, rng: &mut dyn RngCore) -> f64 {
        let exact = self.objective(theta.values());
        if self.noise == 0.0 {
            exact
        } else {
            exact + Normal::new(0.0, self.noise).unwrap().sample(rng)
        }
    }
}

// ---------------------------------------------------------------------------
// Logistic regression
// ---------------------------------------------------------------------------

/// Dataset and optimization constants for the logistic-regression task.
#[derive(Debug, Clone)]
pub struct LogisticParams {
    pub data_seed: u64,
    pub dim: usize,
    pub n_train: usize,
    pub n_val: usize,
    /// Distance between the two class means.
    pub separation: f64,
    pub batch: usize,
    pub lr_prior: (f64, f64),
    pub l2_prior: (f64, f64),
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            data_seed: 7,
            dim: 5,
            n_train: 2000,
            n_val: 500,
            separation: 2.2,
            batch: 32,
            lr_prior: (1e-4, 10.0),
            l2_prior: (1e-6, 1e-1),
        }
    }
}

/// Binary classification on two seeded Gaussian blobs; step is one minibatch
/// gradient step on L2-regularized log-loss, eval is validation accuracy.
/// θ holds the weight vector followed by the bias.
pub struct LogisticRegressionTask {
    params: LogisticParams,
    // row-major features and ±1 labels
    train_x: Vec<f64>,
    train_y: Vec<f64>,
    val_x: Vec<f64>,
    val_y: Vec<f64>,
    specs: Vec<HyperparamSpec>,
}

impl LogisticRegressionTask {
    pub fn new(params: LogisticParams) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(params.data_seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let d = params.dim;

        let mut direction: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
        let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut direction {
            *v *= params.separation / 2.0 / norm;
        }

        let n = params.n_train + params.n_val;
        let mut xs = Vec::with_capacity(n * d);
        let mut ys = Vec::with_capacity(n);
        for i in 0..n {
            // alternating labels keep both splits exactly balanced
            let y = if i % 2 == 0 { 1.0 } else { -1.0 };
            ys.push(y);
            for &mu in &direction {
                xs.push(normal.sample(&mut rng) + y * mu);
            }
        }
        let split = params.n_train * d;
        let (train_x, val_x) = (xs[..split].to_vec(), xs[split..].to_vec());
        let (train_y, val_y) = (
            ys[..params.n_train].to_vec(),
            ys[params.n_train..].to_vec(),
        );

        let specs = vec![
            HyperparamSpec::new(
                "l2",
                Prior::LogUniform { lo: params.l2_prior.0, hi: params.l2_prior.1 },
            )
            .expect("static spec is valid"),
            HyperparamSpec::new(
                "lr",
                Prior::LogUniform { lo: params.lr_prior.0, hi: params.lr_prior.1 },
            )
            .expect("static spec is valid"),
        ];
        Self { params, train_x, train_y, val_x, val_y, specs }
    }

    fn row<'a>(&self, xs: &'a [f64], i: usize) -> &'a [f64] {
        &xs[i * self.params.dim..(i + 1) * self.params.dim]
    }

    /// log(1 + e^{-z}) without overflow.
    fn log_loss(z: f64) -> f64 {
        if z > 0.0 {
            (-z).exp().ln_1p()
        } else {
            -z + z.exp().ln_1p()
        }
    }

    /// σ(−z) = 1/(1+e^z) without overflow.
    fn sigmoid_neg(z: f64) -> f64 {
        if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        }
    }

    /// Mean L2-regularized log-loss over the given training rows (the bias,
    /// θ's last entry, is not regularized).
    pub fn batch_loss(&self, theta: &[f64], l2: f64, indices: &[usize]) -> f64 {
        let d = self.params.dim;
        let (w, b) = (&theta[..d], theta[d]);
        let mut loss = 0.0;
        for &i in indices {
            let x = self.row(&self.train_x, i);
            let z = self.train_y[i] * (dot(w, x) + b);
            loss += Self::log_loss(z);
        }
        loss / indices.len() as f64 + 0.5 * l2 * dot(w, w)
    }

    /// Analytic gradient of `batch_loss` with respect to θ.
    pub fn batch_grad(&self, theta: &[f64], l2: f64, indices: &[usize]) -> Vec<f64> {
        let d = self.params.dim;
        let (w, b) = (&theta[..d], theta[d]);
        let mut grad = vec![0.0; d + 1];
        let scale = 1.0 / indices.len() as f64;
        for &i in indices {
            let x = self.row(&self.train_x, i);
            let y = self.train_y[i];
            let z = y * (dot(w, x) + b);
            let s = -Self::sigmoid_neg(z) * y * scale;
            for (g, xv) in grad[..d].iter_mut().zip(x) {
                *g += s * xv;
            }
            grad[d] += s;
        }
        for (g, wv) in grad[..d].iter_mut().zip(w) {
            *g += l2 * wv;
        }
        grad
    }

    pub fn n_train(&self) -> usize {
        self.params.n_train
    }

    fn accuracy(&self, theta: &[f64]) -> f64 {
        let d = self.params.dim;
        let (w, b) = (&theta[..d], theta[d]);
        let mut correct = 0usize;
        for i in 0..self.val_y.len() {
            let z = dot(w, self.row(&self.val_x, i)) + b;
            let pred = if z > 0.0 { 1.0 } else { -1.0 };
            if pred == self.val_y[i] {
                correct += 1;
            }
        }
        correct as f64 / self.val_y.len() as f64
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Task for LogisticRegressionTask {
    fn name(&self) -> &'static str {
        "logistic-regression"
    }

    fn dim(&self) -> usize {
        self.params.dim + 1
    }

    fn hyperparam_specs(&self) -> &[HyperparamSpec] {
        &self.specs
    }

    fn init(&self, _rng: &mut dyn RngCore) -> ParamVector {
        ParamVector::new(vec![0.0; self.dim()]).expect("finite")
    }

    fn step(
        &self,
        theta: &ParamVector,
        h: &HyperparamVector,
        rng: &mut dyn RngCore,
    ) -> Result<ParamVector, TaskError> {
        let lr = h.num("lr")?;
        let l2 = h.num("l2")?;
        let indices: Vec<usize> = (0..self.params.batch)
            .map(|_| rng.gen_range(0..self.params.n_train))
            .collect();
        let loss = self.batch_loss(theta.values(), l2, &indices);
        if !loss.is_finite() {
            return Err(TaskError::NonFiniteLoss);
        }
        let grad = self.batch_grad(theta.values(), l2, &indices);
        let next: Vec<f64> = theta
            .values()
            .iter()
            .zip(&grad)
            .map(|(t, g)| t - lr * g)
            .collect();
        Ok(ParamVector::new(next)?)
    }

    fn eval(&self, theta: &ParamVector, _rng: &mut dyn RngCore) -> f64 {
        self.accuracy(theta.values())
    }
}
