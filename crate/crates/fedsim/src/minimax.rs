//! Stationarity proxy for generic smooth minimax problems and a quadratic
//! toy with a closed-form saddle.

use fedot_core::Matrix;

use crate::FedError;

/// `min_x max_y L(x, y)` with explicit partial gradients.
pub trait MinimaxObjective {
    fn grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64>;
    fn grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64>;
}

/// Runs `burst` gradient-ascent steps of size `eta` in `y` from `y0`, then
/// returns `‖∇ₓL(x, y_burst)‖`. Upper-biased estimate of `‖∇Λ(x)‖` for
/// `Λ(x) = max_y L(x, y)`.
pub fn stationarity_proxy_generic<M: MinimaxObjective>(obj: &M, x: &[f64], y0: &[f64], burst: usize, eta: f64) -> Result<f64, FedError> {
    if burst == 0 {
        return Err(FedError::InvalidArgument("ascent burst must be at least 1".into()));
    }
    let mut y = y0.to_vec();
    for _ in 0..burst {
        let g = obj.grad_y(x, &y);
        y.iter_mut().zip(&g).for_each(|(yi, gi)| *yi += eta * gi);
    }
    Ok(obj.grad_x(x, &y).iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// `L(x, y) = ½a‖x − c‖² + xᵀBy − ½μ‖y‖²`: strongly convex-concave with the
/// unique saddle `(aI + BBᵀ/μ) x* = a c`, `y* = Bᵀx*/μ`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticToy {
    pub a: f64,
    pub b: Matrix,
    pub mu: f64,
    pub c: Vec<f64>,
}

impl QuadraticToy {
    pub fn new(a: f64, b: Matrix, mu: f64, c: Vec<f64>) -> Result<Self, FedError> {
        if !(a > 0.0) || !(mu > 0.0) {
            return Err(FedError::InvalidArgument("a and mu must be positive".into()));
        }
        if b.rows() != c.len() {
            return Err(FedError::InvalidArgument(format!("B has {} rows but c has {} entries", b.rows(), c.len())));
        }
        Ok(Self { a, b, mu, c })
    }

    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        let dx: f64 = x.iter().zip(&self.c).map(|(xi, ci)| (xi - ci) * (xi - ci)).sum();
        let bilinear: f64 = x.iter().zip(self.b.matvec(y)).map(|(xi, v)| xi * v).sum();
        0.5 * self.a * dx + bilinear - 0.5 * self.mu * y.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn saddle(&self) -> Result<(Vec<f64>, Vec<f64>), FedError> {
        let mut lhs = self.b.matmul(&self.b.transpose()).scaled(1.0 / self.mu);
        for i in 0..lhs.rows() {
            lhs[(i, i)] += self.a;
        }
        let rhs: Vec<f64> = self.c.iter().map(|v| self.a * v).collect();
        let x = fedot_core::numkit::linalg::solve(&lhs, &rhs)?;
        let y = self.b.matvec_t(&x).iter().map(|v| v / self.mu).collect();
        Ok((x, y))
    }

    /// Simultaneous gradient descent-ascent from `(x0, y0)`.
    pub fn run_gda(&self, x0: &[f64], y0: &[f64], eta_x: f64, eta_y: f64, steps: usize) -> (Vec<f64>, Vec<f64>) {
        let (mut x, mut y) = (x0.to_vec(), y0.to_vec());
        for _ in 0..steps {
            let gx = self.grad_x(&x, &y);
            let gy = self.grad_y(&x, &y);
            x.iter_mut().zip(&gx).for_each(|(v, g)| *v -= eta_x * g);
            y.iter_mut().zip(&gy).for_each(|(v, g)| *v += eta_y * g);
        }
        (x, y)
    }
}

impl MinimaxObjective for QuadraticToy {
    fn grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.c).zip(self.b.matvec(y)).map(|((xi, ci), by)| self.a * (xi - ci) + by).collect()
    }

    fn grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.b.matvec_t(x).iter().zip(y).map(|(bx, yi)| bx - self.mu * yi).collect()
    }
}
