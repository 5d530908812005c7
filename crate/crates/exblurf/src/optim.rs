//! Adam and RMSProp, written against f64 scalars so the same update rules
//! drive both the f64 reference API and the f32-stored training state.

/// Adam moment decay rates and epsilon.
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// RMSProp square-average decay and epsilon.
pub const RMSPROP_DECAY: f64 = 0.95;
pub const RMSPROP_EPS: f64 = 1e-8;

/// One Adam update with bias correction at step `t` (1-based). Returns the
/// new parameter and moments.
#[inline]
pub fn adam_update(
    param: f64,
    grad: f64,
    m: f64,
    v: f64,
    t: u64,
    lr: f64,
) -> (f64, f64, f64) {
    let m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * grad;
    let v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * grad * grad;
    let m_hat = m / (1.0 - ADAM_BETA1.powi(t as i32));
    let v_hat = v / (1.0 - ADAM_BETA2.powi(t as i32));
    let param = param - lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    (param, m, v)
}

/// One RMSProp update. Returns the new parameter and square average.
#[inline]
pub fn rmsprop_update(param: f64, grad: f64, sq: f64, lr: f64) -> (f64, f64) {
    let sq = RMSPROP_DECAY * sq + (1.0 - RMSPROP_DECAY) * grad * grad;
    let param = param - lr * grad / (sq.sqrt() + RMSPROP_EPS);
    (param, sq)
}

/// Adam over an f64 parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, len: usize) -> Self {
        Adam { lr, t: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        self.t += 1;
        for i in 0..params.len() {
            let (p, m, v) = adam_update(params[i], grads[i], self.m[i], self.v[i], self.t, self.lr);
            params[i] = p;
            self.m[i] = m;
            self.v[i] = v;
        }
    }
}

/// RMSProp over an f64 parameter vector.
#[derive(Debug, Clone)]
pub struct RmsProp {
    pub lr: f64,
    pub sq: Vec<f64>,
}

impl RmsProp {
    pub fn new(lr: f64, len: usize) -> Self {
        RmsProp { lr, sq: vec![0.0; len] }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        for i in 0..params.len() {
            let (p, sq) = rmsprop_update(params[i], grads[i], self.sq[i], self.lr);
            params[i] = p;
            self.sq[i] = sq;
        }
    }
}
