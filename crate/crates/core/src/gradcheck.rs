//! Central finite-difference check of [`fuse_backward`](crate::fusion::fuse_backward).
//!
//! The numerical side only ever calls the forward pass, perturbing one entry
//! of one parameter or input at a time and evaluating
//! `sum <upstream, fuse_sequence(..)>` on either side.

use num_traits::Float;
use rand::Rng;

use crate::error::Result;
use crate::fusion::{fuse_backward, fuse_sequence, init_params, FusionParams};
use crate::linalg::{dot, Matrix, TokenSequence};
use crate::rng;
use crate::Scalar;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_REL_TOL: f64 = 1e-4;
pub const DEFAULT_ABS_FLOOR: f64 = 1e-7;

/// Inputs to a single check.
#[derive(Debug, Clone)]
pub struct FusionInstance<T> {
    pub params: FusionParams<T>,
    pub original: TokenSequence<T>,
    pub low: TokenSequence<T>,
    pub high: TokenSequence<T>,
    pub upstream: Matrix<T>,
}

impl<T: Scalar> FusionInstance<T> {
    /// Tokens and upstream uniform on `[-1, 1)`, params from [`init_params`]
    /// scaled up by 2 so the softmax is away from uniform.
    pub fn random(dim: usize, positions: usize, seed: u64) -> Result<Self> {
        let base = init_params::<T>(dim, seed)?;
        let mut r = rng::seeded(seed ^ 0x9e37_79b9_7f4a_7c15);
        let two = T::lit(2.0);
        let scale = |m: &Matrix<T>| Matrix::new(m.rows(), m.cols(), m.as_slice().iter().map(|&x| x * two).collect());
        let params = FusionParams::new(scale(&base.w_q)?, scale(&base.w_k)?, scale(&base.w_v)?)?;
        let mut draw = |n: usize| -> Vec<T> { (0..n).map(|_| T::lit(r.gen_range(-1.0..1.0))).collect() };
        let n = dim * positions;
        let original = TokenSequence::new(positions, dim, draw(n))?;
        let low = TokenSequence::new(positions, dim, draw(n))?;
        let high = TokenSequence::new(positions, dim, draw(n))?;
        let upstream = Matrix::new(positions, dim, draw(n))?;
        Ok(Self {
            params,
            original,
            low,
            high,
            upstream,
        })
    }

    fn objective(&self) -> Result<T> {
        let out = fuse_sequence(&self.original, &self.low, &self.high, &self.params)?;
        Ok(dot(out.as_slice(), self.upstream.as_slice()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    WQ,
    WK,
    WV,
    Original,
    Low,
    High,
}

impl Target {
    pub const ALL: [Target; 6] = [
        Target::WQ,
        Target::WK,
        Target::WV,
        Target::Original,
        Target::Low,
        Target::High,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Target::WQ => "w_q",
            Target::WK => "w_k",
            Target::WV => "w_v",
            Target::Original => "v_o",
            Target::Low => "v_l",
            Target::High => "v_h",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub eps: f64,
    pub rel: f64,
    pub abs_floor: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            rel: DEFAULT_REL_TOL,
            abs_floor: DEFAULT_ABS_FLOOR,
        }
    }
}

/// Per-tensor summary.
#[derive(Debug, Clone)]
pub struct TargetReport {
    pub target: Target,
    pub entries: usize,
    pub failures: usize,
    pub max_rel: f64,
    pub max_abs: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub targets: Vec<TargetReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.targets.iter().all(|t| t.failures == 0)
    }

    pub fn entries(&self) -> usize {
        self.targets.iter().map(|t| t.entries).sum()
    }
}

/// An entry passes when `|a - n| <= abs_floor` or
/// `|a - n| / max(|a|, |n|) < rel`.
pub fn entry_passes(analytic: f64, numeric: f64, tol: &Tolerance) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= tol.abs_floor || diff / analytic.abs().max(numeric.abs()) < tol.rel
}

fn slot<T: Scalar>(inst: &mut FusionInstance<T>, target: Target) -> &mut [T] {
    match target {
        Target::WQ => inst.params.w_q.as_mut_slice(),
        Target::WK => inst.params.w_k.as_mut_slice(),
        Target::WV => inst.params.w_v.as_mut_slice(),
        Target::Original => seq_mut(&mut inst.original),
        Target::Low => seq_mut(&mut inst.low),
        Target::High => seq_mut(&mut inst.high),
    }
}

// Perturbations stay finite, so the sequence invariant holds.
fn seq_mut<T: Scalar>(s: &mut TokenSequence<T>) -> &mut [T] {
    s.matrix_mut().as_mut_slice()
}

/// Central-difference gradient of the objective with respect to one tensor.
pub fn numerical_gradient<T: Scalar>(inst: &FusionInstance<T>, target: Target, eps: f64) -> Result<Vec<T>> {
    let mut work = inst.clone();
    let n = slot(&mut work, target).len();
    let h = T::lit(eps);
    let mut grad = Vec::with_capacity(n);
    for i in 0..n {
        let x = slot(&mut work, target)[i];
        slot(&mut work, target)[i] = x + h;
        let plus = work.objective()?;
        slot(&mut work, target)[i] = x - h;
        let minus = work.objective()?;
        slot(&mut work, target)[i] = x;
        grad.push((plus - minus) / (h + h));
    }
    Ok(grad)
}

/// Compares every analytic gradient entry with its central difference.
pub fn check_instance<T: Scalar>(inst: &FusionInstance<T>, tol: &Tolerance) -> Result<GradCheckReport> {
    let g = fuse_backward(&inst.original, &inst.low, &inst.high, &inst.params, &inst.upstream)?;
    let mut targets = Vec::with_capacity(6);
    for target in Target::ALL {
        let analytic = match target {
            Target::WQ => &g.d_w_q,
            Target::WK => &g.d_w_k,
            Target::WV => &g.d_w_v,
            Target::Original => &g.d_v_o,
            Target::Low => &g.d_v_l,
            Target::High => &g.d_v_h,
        };
        let numeric = numerical_gradient(inst, target, tol.eps)?;
        let mut report = TargetReport {
            target,
            entries: numeric.len(),
            failures: 0,
            max_rel: 0.0,
            max_abs: 0.0,
        };
        for (&a, &n) in analytic.as_slice().iter().zip(&numeric) {
            let (a, n) = (a.as_f64(), n.as_f64());
            let diff = (a - n).abs();
            report.max_abs = report.max_abs.max(diff);
            if diff > tol.abs_floor {
                report.max_rel = report.max_rel.max(diff / Float::max(a.abs(), n.abs()));
            }
            if !entry_passes(a, n, tol) {
                report.failures += 1;
            }
        }
        targets.push(report);
    }
    Ok(GradCheckReport { targets })
}
