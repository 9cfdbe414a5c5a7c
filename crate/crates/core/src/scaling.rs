//! Loss-scale policies: the adaptive per-layer bound derived from the
//! underflow probability of the GEMM product distribution, its
//! power-of-two post-processing and overflow cap, rescaling at branch
//! merges, plus the fixed and dynamic-backoff baselines.

use std::collections::HashMap;
use std::f64::consts::{FRAC_2_SQRT_PI, SQRT_2};

use crate::error::{CoreError, Result};
use crate::fp16::{floor_pow2, U_MAX, U_MIN};
use crate::graph::ScaledGradient;
use crate::tensor::{stats, Tensor};

/// Error function, accurate to well under 1e-9 absolute everywhere.
///
/// Small arguments use the positive-term confluent series
/// erf(x) = (2/sqrt(pi)) e^(-x^2) sum 2^n x^(2n+1) / (1*3*...*(2n+1));
/// larger arguments go through the classic continued fraction for erfc
/// evaluated with the modified Lentz scheme.
pub fn erf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let a = x.abs();
    if a == 0.0 {
        return x; // preserves signed zero
    }
    if a < 1.0 {
        let x2 = 2.0 * a * a;
        let mut term = a;
        let mut sum = a;
        let mut n = 0u32;
        while term > 1e-18 * sum {
            n += 1;
            term *= x2 / (2 * n + 1) as f64;
            sum += term;
        }
        let r = FRAC_2_SQRT_PI * (-a * a).exp() * sum;
        return r.copysign(x);
    }
    if a >= 6.0 {
        return 1f64.copysign(x);
    }
    // erfc(a) = e^(-a^2)/sqrt(pi) / (a + (1/2)/(a + 1/(a + (3/2)/(a + ...))))
    let mut f = a;
    let mut c = a;
    let mut d = 0.0f64;
    for n in 1..=300 {
        let an = n as f64 / 2.0;
        d = a + an * d;
        if d == 0.0 {
            d = 1e-300;
        }
        d = 1.0 / d;
        c = a + an / c;
        if c == 0.0 {
            c = 1e-300;
        }
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
    }
    let erfc = (-a * a).exp() / SQRT_PI / f;
    (1.0 - erfc).copysign(x)
}

const SQRT_PI: f64 = 1.772_453_850_905_516;

/// Inverse error function on (-1, 1).
///
/// Winitzki's logarithmic approximation provides the initial guess, then
/// Newton steps on `erf(x) - y` refine it; the achieved residual
/// |erf(erfinv(y)) - y| is far below the 1e-9 target.
pub fn erfinv(y: f64) -> Result<f64> {
    if !(y > -1.0 && y < 1.0) {
        return Err(CoreError::Domain(format!(
            "erfinv requires |y| < 1, got {y}"
        )));
    }
    if y == 0.0 {
        return Ok(y);
    }
    const A: f64 = 0.147;
    let l = (1.0 - y * y).ln();
    let t = 2.0 / (std::f64::consts::PI * A) + l / 2.0;
    let mut x = ((t * t - l / A).sqrt() - t).sqrt().copysign(y);
    for _ in 0..8 {
        let err = erf(x) - y;
        let deriv = FRAC_2_SQRT_PI * (-x * x).exp();
        if err == 0.0 || deriv < 1e-300 {
            break;
        }
        let mut step = err / deriv;
        let cap = 0.5 * (x.abs() + 1.0);
        if step.abs() > cap {
            step = cap.copysign(step);
        }
        let next = x - step;
        let done = (next - x).abs() <= 1e-15 * x.abs().max(1e-300);
        x = next;
        if done {
            break;
        }
    }
    Ok(x)
}

/// Knobs of the adaptive policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossScaleConfig {
    /// Upper bound on the probability that a scaled product underflows.
    pub t_uf: f64,
    /// Underflow bound; the smallest positive binary16 magnitude by default.
    pub u: f64,
    /// Iterations between recomputations of the per-layer scale.
    pub update_frequency: u64,
}

impl Default for LossScaleConfig {
    fn default() -> Self {
        LossScaleConfig {
            t_uf: 1e-3,
            u: U_MIN,
            update_frequency: 1,
        }
    }
}

impl LossScaleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_uf > 0.0 && self.t_uf < 1.0) {
            return Err(CoreError::Domain(format!(
                "T_uf must lie in (0, 1), got {}",
                self.t_uf
            )));
        }
        if !(self.u > 0.0) {
            return Err(CoreError::Domain("u must be positive".into()));
        }
        if self.update_frequency == 0 {
            return Err(CoreError::Domain("update_frequency must be >= 1".into()));
        }
        Ok(())
    }
}

/// Sample statistics feeding the GEMM loss-scale bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GemmStats {
    pub mu_w: f64,
    pub sigma_w: f64,
    pub mu_g: f64,
    pub sigma_g: f64,
    /// Product std: sigma_p^2 = (sigma_w^2 + mu_w^2)(sigma_g^2 + mu_g^2).
    pub sigma_p: f64,
    pub max_abs_w: f64,
    pub max_abs_g: f64,
}

impl GemmStats {
    pub fn from_tensors(w: &Tensor, scaled_delta: &Tensor) -> Result<GemmStats> {
        let sw = stats(w)?;
        let sg = stats(scaled_delta)?;
        let sigma_p2 = (sw.var + sw.mean * sw.mean) * (sg.var + sg.mean * sg.mean);
        Ok(GemmStats {
            mu_w: sw.mean,
            sigma_w: sw.var.sqrt(),
            mu_g: sg.mean,
            sigma_g: sg.var.sqrt(),
            sigma_p: sigma_p2.sqrt(),
            max_abs_w: sw.max_abs,
            max_abs_g: sg.max_abs,
        })
    }
}

/// Lower bound on the loss scale for a GEMM layer:
/// `u / (sigma_p * sqrt(2) * erfinv(T_uf))`.
///
/// `scaled_delta` already carries the accumulated scale of downstream
/// layers, so the returned value is the additional local factor for this
/// layer. The degenerate all-zero case (sigma_p == 0) returns 1: no finite
/// scale prevents underflow of exact zeros.
pub fn gemm_loss_scale(w: &Tensor, scaled_delta: &Tensor, cfg: &LossScaleConfig) -> Result<f64> {
    let st = GemmStats::from_tensors(w, scaled_delta)?;
    raw_bound_from_sigma(st.sigma_p, cfg)
}

/// The bound itself, given the product std directly.
pub fn raw_bound_from_sigma(sigma_p: f64, cfg: &LossScaleConfig) -> Result<f64> {
    if sigma_p == 0.0 {
        return Ok(1.0);
    }
    if !sigma_p.is_finite() {
        return Err(CoreError::Domain(format!(
            "loss-scale bound needs finite statistics, got sigma_p = {sigma_p}"
        )));
    }
    Ok(cfg.u / (sigma_p * SQRT_2 * erfinv(cfg.t_uf)?))
}

/// Largest scale that cannot overflow the GEMM output:
/// `u_max / (max|W| * max|delta|)`, infinite when either operand is all
/// zero.
pub fn overflow_upper_bound(w: &Tensor, scaled_delta: &Tensor) -> f64 {
    let denom = w.max_abs() * scaled_delta.max_abs();
    if denom == 0.0 {
        f64::INFINITY
    } else {
        U_MAX / denom
    }
}

/// Post-processing of a raw scale: cap by the overflow upper bound (only
/// when the cap is smaller), then round down to the nearest power of two
/// so scaling and unscaling are exact in binary floating point.
pub fn postprocess(raw_beta: f64, alpha_max: f64) -> Result<f64> {
    if !raw_beta.is_finite() || raw_beta <= 0.0 {
        return Err(CoreError::Domain(format!(
            "postprocess requires a finite positive raw scale, got {raw_beta}"
        )));
    }
    if !(alpha_max > 0.0) {
        return Err(CoreError::Domain(format!(
            "postprocess requires alpha_max > 0, got {alpha_max}"
        )));
    }
    let candidate = if raw_beta <= alpha_max { raw_beta } else { alpha_max };
    floor_pow2(candidate)
}

/// Element-wise operations never update the loss scale.
pub fn passthrough_scale() -> f64 {
    1.0
}

/// Rescales the gradients meeting at a fan-out node to one common loss
/// scale before their summation.
///
/// Candidate scales are tried in descending order; a candidate is accepted
/// when every gradient, brought to that scale, stays below the binary16
/// overflow bound (the test uses the unscaled maxima `max|delta_j| /
/// alpha_j`). If no candidate passes, the smallest scale is used and the
/// warning flag is set. Outputs preserve the unscaled value `delta/alpha`
/// of every input.
pub fn branch_rescale(inputs: &[ScaledGradient]) -> Result<(Vec<ScaledGradient>, bool)> {
    if inputs.is_empty() {
        return Err(CoreError::Domain(
            "branch_rescale requires at least one input".into(),
        ));
    }
    if inputs.len() == 1 {
        return Ok((vec![inputs[0].clone()], false));
    }
    let unscaled_max: Vec<f64> = inputs
        .iter()
        .map(|sg| sg.delta.max_abs() / sg.alpha)
        .collect();
    let mut alphas: Vec<f64> = inputs.iter().map(|sg| sg.alpha).collect();
    alphas.sort_by(|a, b| b.partial_cmp(a).unwrap());
    alphas.dedup();
    let chosen = alphas
        .iter()
        .copied()
        .find(|&cand| unscaled_max.iter().all(|&m| cand * m < U_MAX));
    let (alpha, warning) = match chosen {
        Some(a) => (a, false),
        None => (*alphas.last().unwrap(), true),
    };
    let outs = inputs
        .iter()
        .map(|sg| ScaledGradient {
            alpha,
            delta: sg.delta.scaled(alpha / sg.alpha),
        })
        .collect();
    Ok((outs, warning))
}

/// Dynamic-backoff baseline state. Defaults follow the established
/// dynamic-scaling practice: start at 2^15, halve on overflow with floor
/// 1, double after 2000 clean steps, cap at 2^24.
#[derive(Debug, Clone, PartialEq)]
pub struct BackoffState {
    pub scale: f64,
    pub good_steps: u64,
    pub growth_interval: u64,
    pub max_scale: f64,
}

impl Default for BackoffState {
    fn default() -> Self {
        BackoffState {
            scale: 2f64.powi(15),
            good_steps: 0,
            growth_interval: 2000,
            max_scale: 2f64.powi(24),
        }
    }
}

/// One backoff update. Returns the scale for the next iteration and
/// whether the current weight update must be skipped.
pub fn backoff_step(state: &mut BackoffState, overflow_detected: bool) -> (f64, bool) {
    if overflow_detected {
        state.scale = (state.scale / 2.0).max(1.0);
        state.good_steps = 0;
        (state.scale, true)
    } else {
        state.good_steps += 1;
        if state.good_steps >= state.growth_interval {
            state.scale = (state.scale * 2.0).min(state.max_scale);
            state.good_steps = 0;
        }
        (state.scale, false)
    }
}

/// The loss-scale policy driving one training run.
#[derive(Debug, Clone)]
pub enum LossScalePolicy {
    None,
    Fixed(f64),
    Backoff(BackoffState),
    Adaptive(AdaptiveState),
}

/// Mutable per-run state of the adaptive policy: the config plus the
/// per-layer cache reused between recomputation iterations.
#[derive(Debug, Clone)]
pub struct AdaptiveState {
    pub cfg: LossScaleConfig,
    cached: HashMap<usize, f64>,
    iterations: u64,
    recompute: bool,
}

impl AdaptiveState {
    pub fn new(cfg: LossScaleConfig) -> AdaptiveState {
        AdaptiveState {
            cfg,
            cached: HashMap::new(),
            iterations: 0,
            recompute: true,
        }
    }
}

impl LossScalePolicy {
    /// Parses the policy grammar:
    /// `"none" | "fixed:<positive-real>" | "backoff" | "adaptive"`.
    pub fn parse(s: &str, cfg: LossScaleConfig) -> Result<LossScalePolicy> {
        cfg.validate()?;
        match s {
            "none" => Ok(LossScalePolicy::None),
            "backoff" => Ok(LossScalePolicy::Backoff(BackoffState::default())),
            "adaptive" => Ok(LossScalePolicy::Adaptive(AdaptiveState::new(cfg))),
            _ => {
                if let Some(v) = s.strip_prefix("fixed:") {
                    let a: f64 = v.parse().map_err(|_| {
                        CoreError::Domain(format!("bad fixed scale {v:?}"))
                    })?;
                    if !(a > 0.0 && a.is_finite()) {
                        return Err(CoreError::Domain(format!(
                            "fixed scale must be a positive real, got {a}"
                        )));
                    }
                    Ok(LossScalePolicy::Fixed(a))
                } else {
                    Err(CoreError::Domain(format!(
                        "unknown policy {s:?}; expected none | fixed:<r> | backoff | adaptive"
                    )))
                }
            }
        }
    }

    /// Scale applied to the initial error gradient, on top of the
    /// configured `alpha_init`.
    pub fn initial_scale(&self, alpha_init: f64) -> f64 {
        match self {
            LossScalePolicy::None => alpha_init,
            LossScalePolicy::Fixed(a) => a * alpha_init,
            LossScalePolicy::Backoff(st) => st.scale * alpha_init,
            LossScalePolicy::Adaptive(_) => alpha_init,
        }
    }

    /// Called once at the start of each backward pass; decides whether the
    /// adaptive policy recomputes this iteration or reuses its cache.
    pub fn begin_backward(&mut self) {
        if let LossScalePolicy::Adaptive(st) = self {
            st.recompute = st.iterations % st.cfg.update_frequency == 0;
            st.iterations += 1;
        }
    }

    /// Local scale for a linear layer about to run its input-gradient GEMM.
    /// Non-adaptive policies always answer 1.
    pub fn local_scale(&mut self, node_id: usize, w: &Tensor, scaled_delta: &Tensor) -> f64 {
        let st = match self {
            LossScalePolicy::Adaptive(st) => st,
            _ => return 1.0,
        };
        if !st.recompute {
            return st.cached.get(&node_id).copied().unwrap_or(1.0);
        }
        let beta = match gemm_loss_scale(w, scaled_delta, &st.cfg) {
            Ok(raw) if raw.is_finite() && raw > 0.0 => {
                let amax = overflow_upper_bound(w, scaled_delta);
                postprocess(raw, amax).unwrap_or(1.0)
            }
            // Degenerate or non-finite statistics: scaling is pointless and
            // the overflow flag reports the underlying problem.
            _ => 1.0,
        };
        st.cached.insert(node_id, beta);
        beta
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(self, LossScalePolicy::Adaptive(_))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fp16::is_pow2;
    use crate::tensor::Precision;

    #[test]
    fn erf_reference_points() {
        assert_eq!(erf(0.0), 0.0);
        // High-precision values (Abramowitz & Stegun table 7.1).
        assert!((erf(1.0) - 0.842_700_792_949_714_9).abs() < 1e-12);
        assert!((erf(0.5) - 0.520_499_877_813_046_5).abs() < 1e-12);
        assert!((erf(2.0) - 0.995_322_265_018_952_7).abs() < 1e-12);
        assert!((erf(3.5) - 0.999_999_256_901_627_7).abs() < 1e-12);
        assert_eq!(erf(7.0), 1.0);
        assert_eq!(erf(f64::INFINITY), 1.0);
        assert!((erf(-1.0) + erf(1.0)).abs() < 1e-16);
        assert!(erf(f64::NAN).is_nan());
    }

    #[test]
    fn erfinv_roundtrip_and_domain() {
        assert_eq!(erfinv(0.0).unwrap(), 0.0);
        for &y in &[
            1e-6, 1e-3, 0.01, 0.1, 0.5, 0.9, 0.999, 0.999_999, -1e-3, -0.7,
            1.0 - 1e-12,
        ] {
            let x = erfinv(y).unwrap();
            assert!(
                (erf(x) - y).abs() <= 1e-9,
                "roundtrip residual too large at y={y}: x={x}, erf(x)={}",
                erf(x)
            );
        }
        assert!(erfinv(1.0).is_err());
        assert!(erfinv(-1.0).is_err());
        assert!(erfinv(1.5).is_err());
        assert!(erfinv(f64::NAN).is_err());
    }

    #[test]
    fn erfinv_small_argument() {
        // Small-y limit is y*sqrt(pi)/2.
        let v = erfinv(1e-3).unwrap();
        assert!((v - 8.8623e-4).abs() < 1e-8, "erfinv(1e-3) = {v}");
    }

    #[test]
    fn gemm_bound_example() {
        // Tensors constructed to have exact population stats:
        // mu_w = 0, sigma_w = 0.1, mu_g = 0, sigma_g = 1e-6 -> sigma_p = 1e-7.
        let w = Tensor::vector(vec![0.1, -0.1], Precision::Fp32).unwrap();
        let g = Tensor::vector(vec![1e-6, -1e-6], Precision::Fp32).unwrap();
        let cfg = LossScaleConfig::default();
        let raw = gemm_loss_scale(&w, &g, &cfg).unwrap();
        let expected = cfg.u / (1e-7 * SQRT_2 * erfinv(cfg.t_uf).unwrap());
        assert!((raw - expected).abs() < 1e-9 * expected);
        assert!((raw - 475.6).abs() / 475.6 < 1e-3, "raw = {raw}");
        assert_eq!(floor_pow2(raw).unwrap(), 256.0);
    }

    #[test]
    fn gemm_bound_degenerate_and_unit() {
        let z = Tensor::vector(vec![0.0, 0.0], Precision::Fp32).unwrap();
        let g = Tensor::vector(vec![1.0, -1.0], Precision::Fp32).unwrap();
        let cfg = LossScaleConfig::default();
        assert_eq!(gemm_loss_scale(&z, &g, &cfg).unwrap(), 1.0);

        // The bound collapses to unity when sigma_p sits exactly at it.
        let sigma = cfg.u / (SQRT_2 * erfinv(cfg.t_uf).unwrap());
        assert!((raw_bound_from_sigma(sigma, &cfg).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bound_monotonicity() {
        let cfg = LossScaleConfig::default();
        let r1 = raw_bound_from_sigma(1e-7, &cfg).unwrap();
        let r2 = raw_bound_from_sigma(2e-7, &cfg).unwrap();
        assert!(r2 < r1);
        let big_u = LossScaleConfig {
            u: 2.0 * cfg.u,
            ..cfg
        };
        assert!(raw_bound_from_sigma(1e-7, &big_u).unwrap() > r1);
    }

    #[test]
    fn overflow_upper_bound_examples() {
        let w = Tensor::vector(vec![2.0, -1.0], Precision::Fp32).unwrap();
        let g = Tensor::vector(vec![4.0, 0.5], Precision::Fp32).unwrap();
        assert_eq!(overflow_upper_bound(&w, &g), 65504.0 / 8.0);

        let z = Tensor::vector(vec![0.0], Precision::Fp32).unwrap();
        assert_eq!(overflow_upper_bound(&w, &z), f64::INFINITY);

        let w1 = Tensor::vector(vec![1.0], Precision::Fp32).unwrap();
        let gm = Tensor::vector(vec![65504.0], Precision::Fp32).unwrap();
        assert_eq!(overflow_upper_bound(&w1, &gm), 1.0);
    }

    #[test]
    fn postprocess_examples() {
        assert_eq!(postprocess(475.6, 8188.0).unwrap(), 256.0);
        assert_eq!(postprocess(475.6, 100.0).unwrap(), 64.0);
        assert_eq!(postprocess(1.0, f64::INFINITY).unwrap(), 1.0);
        assert!(postprocess(f64::NAN, 10.0).is_err());
        assert!(postprocess(f64::INFINITY, 10.0).is_err());
        assert!(postprocess(-1.0, 10.0).is_err());
    }

    #[test]
    fn passthrough_is_unity() {
        assert_eq!(passthrough_scale(), 1.0);
    }

    fn sg(alpha: f64, vals: &[f32]) -> ScaledGradient {
        ScaledGradient {
            alpha,
            delta: Tensor::vector(vals.to_vec(), Precision::Fp32).unwrap(),
        }
    }

    #[test]
    fn branch_rescale_hand_traces() {
        // Candidate 8 passes: rescaled delta2 max = 100 * (8/2) = 400.
        let (out, warn) = branch_rescale(&[sg(8.0, &[1.0]), sg(2.0, &[100.0])]).unwrap();
        assert!(!warn);
        assert!(out.iter().all(|g| g.alpha == 8.0));
        assert_eq!(out[0].delta.data(), &[1.0]);
        assert_eq!(out[1].delta.data(), &[400.0]);

        // 32768 would push delta2 to 819200, past the overflow bound;
        // falls through to 4.
        let (out, warn) = branch_rescale(&[sg(32768.0, &[1.0]), sg(4.0, &[100.0])]).unwrap();
        assert!(!warn);
        assert!(out.iter().all(|g| g.alpha == 4.0));
        assert_eq!(out[1].delta.data(), &[100.0]);
        assert!((out[0].delta.data()[0] as f64 - 4.0 / 32768.0).abs() < 1e-12);

        // Single input comes back unchanged.
        let (out, warn) = branch_rescale(&[sg(16.0, &[3.0])]).unwrap();
        assert!(!warn);
        assert_eq!(out[0].alpha, 16.0);
        assert_eq!(out[0].delta.data(), &[3.0]);

        assert!(branch_rescale(&[]).is_err());
    }

    #[test]
    fn branch_rescale_warning_path() {
        // Even the smallest scale overflows; warning fires and the
        // smallest alpha is used anyway.
        let (out, warn) =
            branch_rescale(&[sg(4.0, &[60000.0]), sg(2.0, &[60000.0])]).unwrap();
        assert!(warn);
        assert!(out.iter().all(|g| g.alpha == 2.0));
    }

    #[test]
    fn backoff_rules() {
        let mut st = BackoffState::default();
        assert_eq!(st.scale, 2f64.powi(15));
        let (s, skip) = backoff_step(&mut st, true);
        assert_eq!((s, skip), (2f64.powi(14), true));

        // 2000 consecutive good steps double the scale.
        for i in 0..2000 {
            let (s, skip) = backoff_step(&mut st, false);
            assert!(!skip);
            if i < 1999 {
                assert_eq!(s, 2f64.powi(14));
            } else {
                assert_eq!(s, 2f64.powi(15));
            }
        }

        // Floor at 1.
        let mut st = BackoffState {
            scale: 1.0,
            ..BackoffState::default()
        };
        let (s, skip) = backoff_step(&mut st, true);
        assert_eq!((s, skip), (1.0, true));

        // Cap at max_scale.
        let mut st = BackoffState {
            scale: 2f64.powi(24),
            good_steps: 1999,
            ..BackoffState::default()
        };
        let (s, _) = backoff_step(&mut st, false);
        assert_eq!(s, 2f64.powi(24));
    }

    #[test]
    fn policy_parsing() {
        let cfg = LossScaleConfig::default();
        assert!(matches!(
            LossScalePolicy::parse("none", cfg).unwrap(),
            LossScalePolicy::None
        ));
        assert!(matches!(
            LossScalePolicy::parse("backoff", cfg).unwrap(),
            LossScalePolicy::Backoff(_)
        ));
        assert!(matches!(
            LossScalePolicy::parse("adaptive", cfg).unwrap(),
            LossScalePolicy::Adaptive(_)
        ));
        match LossScalePolicy::parse("fixed:128", cfg).unwrap() {
            LossScalePolicy::Fixed(a) => assert_eq!(a, 128.0),
            _ => panic!(),
        }
        match LossScalePolicy::parse("fixed:3.5", cfg).unwrap() {
            LossScalePolicy::Fixed(a) => assert_eq!(a, 3.5),
            _ => panic!(),
        }
        assert!(LossScalePolicy::parse("fixed:-2", cfg).is_err());
        assert!(LossScalePolicy::parse("fixed:abc", cfg).is_err());
        assert!(LossScalePolicy::parse("logmax", cfg).is_err());
    }

    #[test]
    fn adaptive_policy_produces_pow2_and_caches() {
        let w = Tensor::vector(vec![0.1, -0.1], Precision::Fp32).unwrap();
        let g = Tensor::vector(vec![1e-6, -1e-6], Precision::Fp32).unwrap();
        let cfg = LossScaleConfig {
            update_frequency: 3,
            ..LossScaleConfig::default()
        };
        let mut p = LossScalePolicy::parse("adaptive", cfg).unwrap();

        p.begin_backward();
        let b0 = p.local_scale(7, &w, &g);
        assert_eq!(b0, 256.0);
        assert!(is_pow2(b0));

        // Next two iterations reuse the cache even with different stats.
        let g2 = Tensor::vector(vec![1e-2, -1e-2], Precision::Fp32).unwrap();
        p.begin_backward();
        assert_eq!(p.local_scale(7, &w, &g2), 256.0);
        p.begin_backward();
        assert_eq!(p.local_scale(7, &w, &g2), 256.0);

        // Fourth backward recomputes.
        p.begin_backward();
        let b3 = p.local_scale(7, &w, &g2);
        assert_ne!(b3, 256.0);
        assert!(is_pow2(b3));
    }
}
