//! Discrete-time spiking neurons.
//!
//! All models share the same skeleton:
//!
//! ```text
//! m[t] = lambda * u[t-1] + I[t]
//! s[t] = 1 if m[t] >= theta[t] else 0
//! u[t] = m[t] - theta[t] * s[t]
//! ```
//!
//! LIF uses a fixed `theta = v_th`. PLIF makes `lambda = sigmoid(w)` a
//! trainable per-layer scalar. ALIF raises the threshold with an adaptation
//! trace: `a[t] = rho * a[t-1] + s[t-1]`, `theta[t] = v_th + beta * a[t]`.
//!
//! The derivative of the spike function is replaced by a triangle of
//! half-width `gamma` centred on the threshold.

use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ResetGrad {
    /// The `-theta * s` reset term carries no gradient.
    #[default]
    Detached,
    /// The reset term is differentiated through the surrogate.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum NeuronModel {
    #[default]
    Lif,
    Plif,
    Alif { beta: f64, rho: f64 },
}

impl NeuronModel {
    pub const ALIF_BETA: f64 = 0.1;
    pub const ALIF_RHO: f64 = 0.9;

    pub fn alif() -> Self {
        NeuronModel::Alif {
            beta: Self::ALIF_BETA,
            rho: Self::ALIF_RHO,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct NeuronConfig {
    pub lambda: f64,
    pub v_th: f64,
    pub gamma: f64,
    pub reset_grad: ResetGrad,
    pub model: NeuronModel,
    /// Replaces the hard threshold by `sigmoid(k * (m - theta))` with its
    /// exact derivative. Only meant for finite-difference checks.
    #[cfg_attr(feature = "serde", serde(skip_serializing_if = "Option::is_none"))]
    pub relaxed: Option<f64>,
}

impl Default for NeuronConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            v_th: 1.0,
            gamma: 1.0,
            reset_grad: ResetGrad::Detached,
            model: NeuronModel::Lif,
            relaxed: None,
        }
    }
}

impl NeuronConfig {
    pub fn validate(&self) -> Result<()> {
        use crate::error::Error::InvalidConfig;
        use alloc::format;
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(InvalidConfig(format!("lambda {} not in [0, 1)", self.lambda)));
        }
        if !(self.v_th > 0.0) {
            return Err(InvalidConfig(format!("v_th {} must be positive", self.v_th)));
        }
        if !(self.gamma > 0.0) {
            return Err(InvalidConfig(format!("gamma {} must be positive", self.gamma)));
        }
        if let Some(k) = self.relaxed {
            if !(k > 0.0) {
                return Err(InvalidConfig(format!("relaxation slope {k} must be positive")));
            }
        }
        if let NeuronModel::Alif { rho, .. } = self.model {
            if !(0.0..=1.0).contains(&rho) {
                return Err(InvalidConfig(format!("ALIF rho {rho} not in [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn is_alif(&self) -> bool {
        matches!(self.model, NeuronModel::Alif { .. })
    }

    pub fn is_plif(&self) -> bool {
        matches!(self.model, NeuronModel::Plif)
    }

    #[inline]
    fn fire<F: Scalar>(&self, x: F) -> F {
        match self.relaxed {
            None => heaviside(x),
            Some(k) => F::one() / (F::one() + (-F::from_f64(k) * x).exp()),
        }
    }

    #[inline]
    fn fire_grad<F: Scalar>(&self, m: F, theta: F, gamma: F) -> F {
        match self.relaxed {
            None => triangle(m, theta, gamma),
            Some(k) => {
                let s = self.fire(m - theta);
                F::from_f64(k) * s * (F::one() - s)
            }
        }
    }

    fn alif_consts<F: Scalar>(&self) -> Option<(F, F)> {
        match self.model {
            NeuronModel::Alif { beta, rho } => Some((F::from_f64(beta), F::from_f64(rho))),
            _ => None,
        }
    }
}

pub fn sigmoid(w: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-w))
}

/// Inverse of [`sigmoid`], used to initialise PLIF decay parameters.
pub fn logit(p: f64) -> f64 {
    libm::log(p / (1.0 - p))
}

/// Triangle surrogate `(1/gamma^2) * max(0, gamma - |m - theta|)`.
#[inline]
pub fn triangle<F: Scalar>(m: F, theta: F, gamma: F) -> F {
    let d = gamma - (m - theta).abs();
    if d > F::zero() {
        d / (gamma * gamma)
    } else {
        F::zero()
    }
}

/// Elementwise surrogate derivative around the configured threshold.
pub fn surrogate<F: Scalar>(m: &Tensor<F>, cfg: &NeuronConfig) -> Tensor<F> {
    let (th, g) = (F::from_f64(cfg.v_th), F::from_f64(cfg.gamma));
    m.map(|v| triangle(v, th, g))
}

/// Live state of one population.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronState<F> {
    /// Membrane potential before firing.
    pub m: Tensor<F>,
    /// Membrane potential after reset.
    pub u: Tensor<F>,
    pub s: Tensor<F>,
    /// Threshold adaptation trace (ALIF only).
    pub a: Option<Tensor<F>>,
}

impl<F: Scalar> NeuronState<F> {
    pub fn zeros(shape: &[usize], cfg: &NeuronConfig) -> Self {
        Self {
            m: Tensor::zeros(shape),
            u: Tensor::zeros(shape),
            s: Tensor::zeros(shape),
            a: cfg.is_alif().then(|| Tensor::zeros(shape)),
        }
    }
}

/// Values retained from a forward step for the surrogate backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronCache<F> {
    pub m: Tensor<F>,
    /// ALIF adaptation value used at this step.
    pub a: Option<Tensor<F>>,
    /// PLIF needs `u[t-1]` for its decay gradient.
    pub u_prev: Option<Tensor<F>>,
}

impl<F: Scalar> NeuronCache<F> {
    pub fn bytes(&self) -> u64 {
        self.m.bytes()
            + self.a.as_ref().map_or(0, |a| a.bytes())
            + self.u_prev.as_ref().map_or(0, |u| u.bytes())
    }

    /// Spikes as emitted in the forward step, recomputed from the cache.
    pub fn spikes(&self, cfg: &NeuronConfig) -> Tensor<F> {
        let th = F::from_f64(cfg.v_th);
        match (&self.a, cfg.alif_consts::<F>()) {
            (Some(a), Some((beta, _))) => self
                .m
                .zip_map(a, "spikes", |m, a| cfg.fire(m - (th + beta * a)))
                .unwrap(),
            _ => self.m.map(|m| cfg.fire(m - th)),
        }
    }
}

#[inline]
fn heaviside<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one()
    } else {
        F::zero()
    }
}

/// Advances `state` by one step under input current `current` with decay
/// `lambda`, returning the backward cache.
pub fn step_in_place<F: Scalar>(
    state: &mut NeuronState<F>,
    current: &Tensor<F>,
    lambda: F,
    cfg: &NeuronConfig,
) -> Result<NeuronCache<F>> {
    if current.shape() != state.u.shape() {
        return Err(shape_err("neuron step", current.shape(), state.u.shape()));
    }
    let th = F::from_f64(cfg.v_th);
    let u_prev = cfg.is_plif().then(|| state.u.clone());
    let a_now = match (cfg.alif_consts::<F>(), state.a.as_mut()) {
        (Some((_, rho)), Some(a)) => {
            for (a, &s) in a.data_mut().iter_mut().zip(state.s.data()) {
                *a = rho * *a + s;
            }
            Some(a.clone())
        }
        _ => None,
    };
    let beta = cfg.alif_consts::<F>().map(|(b, _)| b);
    let n = current.len();
    let (m, u, s) = (
        state.m.data_mut(),
        state.u.data_mut(),
        state.s.data_mut(),
    );
    let i = current.data();
    for k in 0..n {
        let theta = match (&a_now, beta) {
            (Some(a), Some(beta)) => th + beta * a.data()[k],
            _ => th,
        };
        let mk = lambda * u[k] + i[k];
        let sk = cfg.fire(mk - theta);
        m[k] = mk;
        s[k] = sk;
        u[k] = mk - theta * sk;
    }
    Ok(NeuronCache {
        m: state.m.clone(),
        a: a_now,
        u_prev,
    })
}

/// One LIF step with the configured decay: returns the next state.
pub fn lif_step<F: Scalar>(
    state: &NeuronState<F>,
    current: &Tensor<F>,
    cfg: &NeuronConfig,
) -> Result<NeuronState<F>> {
    let mut next = state.clone();
    step_in_place(&mut next, current, F::from_f64(cfg.lambda), cfg)?;
    Ok(next)
}

/// One PLIF step with decay `sigmoid(w)`.
pub fn plif_step<F: Scalar>(
    state: &NeuronState<F>,
    current: &Tensor<F>,
    w: f64,
    cfg: &NeuronConfig,
) -> Result<(NeuronState<F>, NeuronCache<F>)> {
    let mut next = state.clone();
    let cache = step_in_place(&mut next, current, F::from_f64(sigmoid(w)), cfg)?;
    Ok((next, cache))
}

/// One ALIF step; `cfg.model` must be [`NeuronModel::Alif`].
pub fn alif_step<F: Scalar>(
    state: &NeuronState<F>,
    current: &Tensor<F>,
    cfg: &NeuronConfig,
) -> Result<(NeuronState<F>, NeuronCache<F>)> {
    let mut next = state.clone();
    let cache = step_in_place(&mut next, current, F::from_f64(cfg.lambda), cfg)?;
    Ok((next, cache))
}

/// Gradients flowing backwards in time into step `t` of one population.
///
/// `g_u` is dL/du[t] (through m[t+1]); `g_a` is dL/da[t+1] (ALIF).
/// Missing entries are zero. Temporally truncated regimes always pass an
/// empty carry.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronCarry<F> {
    pub g_u: Option<Tensor<F>>,
    pub g_a: Option<Tensor<F>>,
}

impl<F> Default for NeuronCarry<F> {
    fn default() -> Self {
        Self { g_u: None, g_a: None }
    }
}

/// Result of one neuron backward step.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronGrad<F> {
    /// dL/dm[t], equal to the gradient with respect to the input current.
    pub delta: Tensor<F>,
    /// PLIF: dL/dw contribution of this step.
    pub g_decay: F,
}

/// Surrogate backward through one step.
///
/// `g_s` is the spatial gradient with respect to the emitted spikes. On
/// return `carry` holds the gradients for step `t-1`.
pub fn step_backward<F: Scalar>(
    cache: &NeuronCache<F>,
    g_s: &Tensor<F>,
    carry: &mut NeuronCarry<F>,
    lambda: F,
    cfg: &NeuronConfig,
) -> Result<NeuronGrad<F>> {
    if g_s.shape() != cache.m.shape() {
        return Err(shape_err("neuron backward", g_s.shape(), cache.m.shape()));
    }
    let n = g_s.len();
    let th = F::from_f64(cfg.v_th);
    let gamma = F::from_f64(cfg.gamma);
    let exact = cfg.reset_grad == ResetGrad::Exact;
    let alif = cfg.alif_consts::<F>();
    let zero = F::zero();
    let g_u = carry.g_u.take();
    let g_a = carry.g_a.take();
    if alif.is_none() && cache.u_prev.is_none() && cfg.relaxed.is_none() {
        return Ok(lif_backward(&cache.m, g_s, g_u, carry, lambda, th, gamma, exact));
    }
    let mut delta = Tensor::zeros(g_s.shape());
    let mut g_a_new = alif.map(|_| Tensor::<F>::zeros(g_s.shape()));
    let mut g_decay = zero;
    {
        let m = cache.m.data();
        let gs = g_s.data();
        let d = delta.data_mut();
        for k in 0..n {
            let theta = match (&cache.a, alif) {
                (Some(a), Some((beta, _))) => th + beta * a.data()[k],
                _ => th,
            };
            let h = cfg.fire_grad(m[k], theta, gamma);
            let gu = g_u.as_ref().map_or(zero, |g| g.data()[k]);
            let ga = g_a.as_ref().map_or(zero, |g| g.data()[k]);
            let mut gs_tot = gs[k] + ga;
            if exact {
                gs_tot -= theta * gu;
            }
            d[k] = gs_tot * h + gu;
            if let (Some(gan), Some((beta, rho))) = (g_a_new.as_mut(), alif) {
                let s = cfg.fire(m[k] - theta);
                let mut g_theta = -(gs_tot * h);
                if exact {
                    g_theta -= s * gu;
                }
                gan.data_mut()[k] = rho * ga + beta * g_theta;
            }
            if let Some(up) = &cache.u_prev {
                g_decay += d[k] * up.data()[k];
            }
        }
    }
    if cache.u_prev.is_some() {
        // d lambda / d w for lambda = sigmoid(w)
        g_decay *= lambda * (F::one() - lambda);
    }
    carry.g_u = Some(delta.scale(lambda));
    carry.g_a = g_a_new;
    Ok(NeuronGrad { delta, g_decay })
}

/// [`step_backward`] for plain LIF with the triangle surrogate, same
/// arithmetic in a branch-light loop.
#[allow(clippy::too_many_arguments)]
fn lif_backward<F: Scalar>(
    m: &Tensor<F>,
    g_s: &Tensor<F>,
    g_u: Option<Tensor<F>>,
    carry: &mut NeuronCarry<F>,
    lambda: F,
    th: F,
    gamma: F,
    exact: bool,
) -> NeuronGrad<F> {
    let zero = F::zero();
    let mut delta = Tensor::zeros(g_s.shape());
    let mut next = Tensor::zeros(g_s.shape());
    let (d, nx) = (delta.data_mut(), next.data_mut());
    let (m, gs) = (m.data(), g_s.data());
    match &g_u {
        None => {
            for k in 0..d.len() {
                d[k] = (gs[k] + zero) * triangle(m[k], th, gamma) + zero;
                nx[k] = d[k] * lambda;
            }
        }
        Some(gu) => {
            let gu = gu.data();
            for k in 0..d.len() {
                let mut gs_tot = gs[k] + zero;
                if exact {
                    gs_tot -= th * gu[k];
                }
                d[k] = gs_tot * triangle(m[k], th, gamma) + gu[k];
                nx[k] = d[k] * lambda;
            }
        }
    }
    carry.g_u = Some(next);
    carry.g_a = None;
    NeuronGrad {
        delta,
        g_decay: zero,
    }
}

/// Single-step backward of a LIF population without temporal carry-in:
/// returns `(dL/dI[t], dL/du[t-1])`.
pub fn lif_step_backward<F: Scalar>(
    cached_m: &Tensor<F>,
    g_s: &Tensor<F>,
    g_u_next: Option<&Tensor<F>>,
    cfg: &NeuronConfig,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let cache = NeuronCache {
        m: cached_m.clone(),
        a: None,
        u_prev: None,
    };
    let mut carry = NeuronCarry {
        g_u: g_u_next.cloned(),
        g_a: None,
    };
    let lif = NeuronConfig {
        model: NeuronModel::Lif,
        ..*cfg
    };
    let g = step_backward(&cache, g_s, &mut carry, F::from_f64(cfg.lambda), &lif)?;
    Ok((g.delta, carry.g_u.unwrap()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    fn t1(v: f64) -> Tensor<f64> {
        Tensor::from_f64(&[1], &[v]).unwrap()
    }

    fn state(u: f64, cfg: &NeuronConfig) -> NeuronState<f64> {
        let mut s = NeuronState::zeros(&[1], cfg);
        s.u = t1(u);
        s
    }

    #[test]
    fn lif_supra_threshold() {
        let cfg = NeuronConfig::default();
        let s = lif_step(&state(0.0, &cfg), &t1(1.2), &cfg).unwrap();
        assert_eq!(s.m.data()[0], 1.2);
        assert_eq!(s.s.data()[0], 1.0);
        assert!((s.u.data()[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn lif_zero() {
        let cfg = NeuronConfig::default();
        let s = lif_step(&state(0.0, &cfg), &t1(0.0), &cfg).unwrap();
        assert_eq!((s.m.data()[0], s.s.data()[0], s.u.data()[0]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn lif_sub_threshold() {
        let cfg = NeuronConfig::default();
        let s = lif_step(&state(0.2, &cfg), &t1(0.5), &cfg).unwrap();
        assert!((s.m.data()[0] - 0.52).abs() < 1e-15);
        assert_eq!(s.s.data()[0], 0.0);
        assert_eq!(s.u.data()[0], s.m.data()[0]);
    }

    #[test]
    fn lif_rejects_shape_mismatch() {
        let cfg = NeuronConfig::default();
        let st = NeuronState::<f64>::zeros(&[2], &cfg);
        assert!(lif_step(&st, &t1(1.0), &cfg).is_err());
    }

    #[test]
    fn surrogate_values() {
        let cfg = NeuronConfig::default();
        assert_eq!(surrogate(&t1(1.0), &cfg).data()[0], 1.0);
        assert_eq!(surrogate(&t1(2.0), &cfg).data()[0], 0.0);
        assert_eq!(surrogate(&t1(0.0), &cfg).data()[0], 0.0);
        let narrow = NeuronConfig {
            gamma: 0.5,
            ..cfg
        };
        assert_eq!(surrogate(&t1(1.25), &narrow).data()[0], 1.0);
    }

    #[test]
    fn surrogate_integrates_to_one() {
        for &gamma in &[0.3, 0.5, 1.0, 2.0] {
            let cfg = NeuronConfig {
                gamma,
                ..NeuronConfig::default()
            };
            let (lo, hi, n) = (cfg.v_th - 3.0, cfg.v_th + 3.0, 60_000);
            let h = (hi - lo) / n as f64;
            let xs: Vec<f64> = (0..=n).map(|i| lo + i as f64 * h).collect();
            let ys = surrogate(&Tensor::from_f64(&[n + 1], &xs).unwrap(), &cfg);
            let y = ys.data();
            let integral: f64 =
                h * (y[0] / 2.0 + y[n] / 2.0 + y[1..n].iter().sum::<f64>());
            assert!((integral - 1.0).abs() <= 1e-6, "gamma {gamma}: {integral}");
        }
    }

    #[test]
    fn zero_decay_cuts_temporal_path() {
        let cfg = NeuronConfig {
            lambda: 0.0,
            ..NeuronConfig::default()
        };
        let m = Tensor::<f64>::from_f64(&[3], &[0.5, 1.1, 3.0]).unwrap();
        let gs = Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap();
        let gu = Tensor::from_f64(&[3], &[0.3, 0.3, 0.3]).unwrap();
        let (_, gprior) = lif_step_backward(&m, &gs, Some(&gu), &cfg).unwrap();
        assert!(gprior.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn spike_path_vanishes_outside_support() {
        let cfg = NeuronConfig::default();
        let m = Tensor::<f64>::from_f64(&[2], &[-0.5, 2.5]).unwrap();
        let gs = Tensor::from_f64(&[2], &[1.0, 1.0]).unwrap();
        let (gi, _) = lif_step_backward(&m, &gs, None, &cfg).unwrap();
        assert_eq!(gi.data(), &[0.0, 0.0]);
    }

    /// Single neuron, T = 2, detached reset, loss = c0*s[0] + c1*s[1] with the
    /// surrogate standing in for dS/dm. Unrolled by hand:
    ///   m0 = I0, m1 = lambda*(m0 - th*s0) + I1 and du0/dm0 = 1 (detached)
    ///   dL/dI1 = c1*H(m1)
    ///   dL/dI0 = c0*H(m0) + lambda*c1*H(m1)
    #[test]
    fn two_step_matches_hand_unrolled() {
        let cfg = NeuronConfig {
            lambda: 0.4,
            ..NeuronConfig::default()
        };
        let (i0, i1, c0, c1) = (1.3, 0.9, 0.7, -1.1);
        let mut st = NeuronState::<f64>::zeros(&[1], &cfg);
        let k0 = step_in_place(&mut st, &t1(i0), 0.4, &cfg).unwrap();
        let k1 = step_in_place(&mut st, &t1(i1), 0.4, &cfg).unwrap();
        let mut carry = NeuronCarry::default();
        let g1 = step_backward(&k1, &t1(c1), &mut carry, 0.4, &cfg).unwrap();
        let g0 = step_backward(&k0, &t1(c0), &mut carry, 0.4, &cfg).unwrap();
        let (m0, m1) = (k0.m.data()[0], k1.m.data()[0]);
        let h = |m: f64| triangle(m, 1.0, 1.0);
        assert!((m1 - (0.4 * (m0 - 1.0) + i1)).abs() < 1e-15);
        assert!((g1.delta.data()[0] - c1 * h(m1)).abs() <= 1e-12);
        assert!((g0.delta.data()[0] - (c0 * h(m0) + 0.4 * c1 * h(m1))).abs() <= 1e-12);
    }

    #[test]
    fn plif_with_frozen_decay_equals_lif() {
        let w = 0.37;
        let plif_cfg = NeuronConfig {
            model: NeuronModel::Plif,
            ..NeuronConfig::default()
        };
        let lif_cfg = NeuronConfig {
            lambda: sigmoid(w),
            ..NeuronConfig::default()
        };
        let inputs = [0.4, 1.3, 0.2, 0.9, 1.7, 0.0];
        let mut p = NeuronState::<f64>::zeros(&[1], &plif_cfg);
        let mut l = NeuronState::<f64>::zeros(&[1], &lif_cfg);
        for &i in &inputs {
            p = plif_step(&p, &t1(i), w, &plif_cfg).unwrap().0;
            l = lif_step(&l, &t1(i), &lif_cfg).unwrap();
            assert_eq!(p, l);
        }
    }

    #[test]
    fn alif_without_adaptation_equals_lif() {
        let lif = NeuronConfig::default();
        let alif = NeuronConfig {
            model: NeuronModel::Alif { beta: 0.0, rho: 0.9 },
            ..lif
        };
        let inputs = [0.4, 1.3, 0.2, 0.9, 1.7, 0.0, 2.5];
        let mut a = NeuronState::<f64>::zeros(&[1], &alif);
        let mut l = NeuronState::<f64>::zeros(&[1], &lif);
        for &i in &inputs {
            a = alif_step(&a, &t1(i), &alif).unwrap().0;
            l = lif_step(&l, &t1(i), &lif).unwrap();
            assert_eq!((&a.m, &a.u, &a.s), (&l.m, &l.u, &l.s));
        }
    }

    /// Constant input 1.5, lambda 0.1, v_th 1, beta 0.5, rho 0.9:
    ///   t0: a=0,   theta=1,    m=1.5,          s=1, u=0.5
    ///   t1: a=1,   theta=1.5,  m=0.05+1.5=1.55, s=1, u=0.05
    ///   t2: a=1.9, theta=1.95, m=0.005+1.5=1.505, s=0, u=1.505
    #[test]
    fn alif_hand_recursion() {
        let cfg = NeuronConfig {
            model: NeuronModel::Alif { beta: 0.5, rho: 0.9 },
            ..NeuronConfig::default()
        };
        let mut st = NeuronState::<f64>::zeros(&[1], &cfg);
        let mut spikes = vec![];
        let mut ms = vec![];
        for _ in 0..3 {
            st = alif_step(&st, &t1(1.5), &cfg).unwrap().0;
            spikes.push(st.s.data()[0]);
            ms.push(st.m.data()[0]);
        }
        assert_eq!(spikes, vec![1.0, 1.0, 0.0]);
        for (m, want) in ms.iter().zip([1.5, 1.55, 1.505]) {
            assert!((m - want).abs() < 1e-12);
        }
        assert!((st.a.unwrap().data()[0] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn zero_decay_forward_ignores_previous_state() {
        let cfg = NeuronConfig {
            lambda: 0.0,
            ..NeuronConfig::default()
        };
        let i = Tensor::from_f64(&[3], &[0.3, 1.2, 0.99]).unwrap();
        let base = NeuronState::<f64>::zeros(&[3], &cfg);
        let mut perturbed = base.clone();
        perturbed.u = Tensor::from_f64(&[3], &[5.0, -3.0, 0.8]).unwrap();
        let a = lif_step(&base, &i, &cfg).unwrap();
        let b = lif_step(&perturbed, &i, &cfg).unwrap();
        assert_eq!((a.m, a.s), (b.m, b.s));
    }

    #[test]
    fn config_validation() {
        assert!(NeuronConfig::default().validate().is_ok());
        for bad in [
            NeuronConfig {
                lambda: 1.0,
                ..Default::default()
            },
            NeuronConfig {
                v_th: 0.0,
                ..Default::default()
            },
            NeuronConfig {
                gamma: -1.0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
