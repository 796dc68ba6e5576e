//! Best uniform rational approximation of fractional powers.
//!
//! For non-integer smoothness the kernel needs `z^(-α)` applied to a sparse
//! operator, which is approximated by a rational function `s(z⁻¹) =
//! p_r(z)/p_ℓ(z)`. The base approximant `ŝ ≈ x^γ`, `γ ∈ (0, 1)`, is computed
//! by iterative interval rebalancing: interpolate at nodes, measure the local
//! sup errors between nodes, and grow/shrink the subintervals until the
//! errors equioscillate. The interpolation step works in a Chebyshev basis
//! for stability; only the final result is converted to monomial coefficients
//! (degrees stay small, so the conversion is benign).
//!
//! Two error norms are supported: plain absolute error, and error relative to
//! `x^γ`. The spectral surrogate uses the relative norm — discrete spectra
//! span several decades, and the downstream guarantee (the surrogate stays
//! within a constant factor of the true power everywhere) is multiplicative,
//! which an absolute fit cannot deliver near the top of a wide spectrum.
//!
//! The composed surrogate splits `α = m_α + γ` with `m_α = max(1, ⌊α⌋)` and
//! handles the sign of `γ` by approximating either on the inverse-spectrum
//! interval directly (`γ > 0`) or on the rescaled spectrum `[λ_min/λ_max, 1]`
//! (`γ < 0`).

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Polynomial with ascending monomial coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    coeffs: Vec<f64>,
}

impl Poly {
    pub fn new(coeffs: Vec<f64>) -> Self {
        let mut p = Self { coeffs };
        p.trim();
        p
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![c])
    }

    /// The monomial `x^k`.
    pub fn monomial(k: usize) -> Self {
        let mut coeffs = vec![0.0; k + 1];
        coeffs[k] = 1.0;
        Self { coeffs }
    }

    fn trim(&mut self) {
        let scale = self.coeffs.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
        while self.coeffs.len() > 1 {
            let last = *self.coeffs.last().expect("nonempty");
            if last == 0.0 || last.abs() < 1e-14 * scale {
                self.coeffs.pop();
            } else {
                break;
            }
        }
        if self.coeffs.is_empty() {
            self.coeffs.push(0.0);
        }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn scale(&self, a: f64) -> Self {
        Self::new(self.coeffs.iter().map(|c| a * c).collect())
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            for (j, &b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Self::new(out)
    }

    pub fn add(&self, other: &Self) -> Self {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut out = vec![0.0; n];
        for (i, &a) in self.coeffs.iter().enumerate() {
            out[i] += a;
        }
        for (i, &b) in other.coeffs.iter().enumerate() {
            out[i] += b;
        }
        Self::new(out)
    }

    /// Substitutes `x -> a x`, i.e. returns `p(a x)` as a polynomial in `x`.
    pub fn compose_scale(&self, a: f64) -> Self {
        let mut pow = 1.0;
        let coeffs = self
            .coeffs
            .iter()
            .map(|&c| {
                let v = c * pow;
                pow *= a;
                v
            })
            .collect();
        Self::new(coeffs)
    }

    /// Reversal `x^deg · p(1/x)`; `deg` must be at least the degree of `p`.
    pub fn reversed(&self, deg: usize) -> Self {
        assert!(deg >= self.degree(), "reversal degree too small");
        let mut coeffs = vec![0.0; deg + 1];
        for (j, &c) in self.coeffs.iter().enumerate() {
            coeffs[deg - j] = c;
        }
        Self::new(coeffs)
    }

    /// Roots via the companion matrix of the monic normalization.
    pub fn roots(&self) -> Vec<nalgebra::Complex<f64>> {
        let n = self.degree();
        if n == 0 {
            return Vec::new();
        }
        let lead = *self.coeffs.last().expect("nonempty");
        let mut m = DMatrix::zeros(n, n);
        for i in 1..n {
            m[(i, i - 1)] = 1.0;
        }
        for i in 0..n {
            m[(i, n - 1)] = -self.coeffs[i] / lead;
        }
        m.complex_eigenvalues().iter().copied().collect()
    }
}

/// Chebyshev-basis polynomial on `[a, b]`, used internally during fitting.
#[derive(Debug, Clone)]
struct ChebPoly {
    coeffs: Vec<f64>,
    a: f64,
    b: f64,
}

impl ChebPoly {
    fn eval(&self, x: f64) -> f64 {
        // Clenshaw recurrence on the mapped variable.
        let xi = (2.0 * x - self.a - self.b) / (self.b - self.a);
        let (mut b1, mut b2) = (0.0, 0.0);
        for &c in self.coeffs.iter().rev() {
            let t = 2.0 * xi * b1 - b2 + c;
            b2 = b1;
            b1 = t;
        }
        b1 - xi * b2
    }

    /// Conversion to monomial coefficients (exact small-degree expansion).
    fn to_monomial(&self) -> Poly {
        let w = self.b - self.a;
        let xi = Poly::new(vec![-(self.a + self.b) / w, 2.0 / w]);
        let mut t_prev = Poly::constant(1.0);
        let mut t_cur = xi.clone();
        let mut acc = t_prev.scale(self.coeffs[0]);
        for (k, &c) in self.coeffs.iter().enumerate().skip(1) {
            if k > 1 {
                let t_next = xi.mul(&t_cur).scale(2.0).add(&t_prev.scale(-1.0));
                t_prev = t_cur;
                t_cur = t_next;
            }
            acc = acc.add(&t_cur.scale(c));
        }
        acc
    }
}

/// A rational minimax fit `num/den ≈ x^γ` on an interval.
#[derive(Debug, Clone)]
pub struct RationalFit {
    pub num: Poly,
    pub den: Poly,
    /// Estimated uniform error of the fit over the interval.
    pub sup_error: f64,
    /// Ratio spread of the local equioscillation errors at the final iterate
    /// (0 means perfectly balanced).
    pub balance: f64,
    pub iterations: usize,
}

const MAX_ITERS: usize = 100;
const BALANCE_TOL: f64 = 1e-12;

/// Best uniform rational approximation of `x^γ` (`0 < γ < 1`) on `[a, b]`
/// with numerator degree `num_deg` and denominator degree `den_deg`,
/// computed by interval rebalancing. Deterministic.
pub fn minimax_rational(
    gamma: f64,
    (a, b): (f64, f64),
    num_deg: usize,
    den_deg: usize,
) -> Result<RationalFit> {
    if !(0.0 < gamma && gamma < 1.0) {
        return Err(Error::Approximation(format!("exponent {gamma} outside (0, 1)")));
    }
    if !(a >= 0.0 && b > a) {
        return Err(Error::Approximation(format!("bad interval [{a}, {b}]")));
    }
    let n_nodes = num_deg + den_deg + 1;
    // Initial subinterval lengths: cluster toward the left end, where the
    // fractional power has its singular derivative.
    let lengths: Vec<f64> = (0..n_nodes + 1)
        .map(|j| {
            let t0 = j as f64 / (n_nodes + 1) as f64;
            let t1 = (j + 1) as f64 / (n_nodes + 1) as f64;
            t1.powi(3) - t0.powi(3)
        })
        .collect();
    rebalance_fit(&|x| x.powf(gamma), &|_| 1.0, (a, b), num_deg, den_deg, lengths)
}

/// Best rational approximation of `x^γ` (`0 < γ < 1`) on `[a, b]` with
/// `0 < a`, equioscillating the error *relative* to `x^γ`. The relative norm
/// is scale-free, so the fit stays within the reported factor of the true
/// power across intervals spanning many decades.
pub fn minimax_rational_relative(
    gamma: f64,
    (a, b): (f64, f64),
    num_deg: usize,
    den_deg: usize,
) -> Result<RationalFit> {
    if !(0.0 < gamma && gamma < 1.0) {
        return Err(Error::Approximation(format!("exponent {gamma} outside (0, 1)")));
    }
    if !(a > 0.0 && b > a) {
        return Err(Error::Approximation(format!(
            "relative fit needs 0 < a < b, got [{a}, {b}]"
        )));
    }
    let n_nodes = num_deg + den_deg + 1;
    // The relative error of a power is symmetric on a log axis, so start from
    // log-uniform subintervals.
    let ratio = b / a;
    let boundary = |j: usize| a * ratio.powf(j as f64 / (n_nodes + 1) as f64);
    let lengths: Vec<f64> = (0..n_nodes + 1).map(|j| boundary(j + 1) - boundary(j)).collect();
    rebalance_fit(&|x| x.powf(gamma), &|x| x.powf(-gamma), (a, b), num_deg, den_deg, lengths)
}

/// Shared rebalancing loop: fit `f` weighted by `w` (the tracked error is
/// `|f - p/q| · w`), starting from the given subinterval lengths.
fn rebalance_fit(
    f: &dyn Fn(f64) -> f64,
    w: &dyn Fn(f64) -> f64,
    (a, b): (f64, f64),
    num_deg: usize,
    den_deg: usize,
    mut lengths: Vec<f64>,
) -> Result<RationalFit> {
    let n_nodes = num_deg + den_deg + 1;
    let mut best: Option<(ChebPoly, ChebPoly, f64, f64, usize)> = None;
    for iter in 0..MAX_ITERS {
        let iterations = iter + 1;
        let total: f64 = lengths.iter().sum();
        let mut boundaries = Vec::with_capacity(n_nodes + 2);
        let mut acc = 0.0;
        boundaries.push(a);
        for &l in &lengths[..n_nodes] {
            acc += l;
            boundaries.push(a + (b - a) * acc / total);
        }
        boundaries.push(b);
        let nodes = &boundaries[1..=n_nodes];

        match interpolate_rational(f, nodes, (a, b), num_deg, den_deg) {
            Some((p, q)) => {
                // Local sup errors on each subinterval.
                let errs: Vec<f64> = (0..n_nodes + 1)
                    .map(|j| {
                        local_sup_error(f, w, &p, &q, boundaries[j], boundaries[j + 1])
                            .max(1e-300)
                    })
                    .collect();
                let emax = errs.iter().cloned().fold(0.0, f64::max);
                let emin = errs.iter().cloned().fold(f64::INFINITY, f64::min);
                let balance = (emax - emin) / emax;
                if best.as_ref().is_none_or(|&(_, _, e, _, _)| emax < e) {
                    best = Some((p, q, emax, balance, iterations));
                }
                if balance <= BALANCE_TOL {
                    break;
                }
                // Rebalance: grow subintervals with small error, shrink the
                // large ones, damped and clipped for stability.
                let gmean = errs.iter().map(|e| e.ln()).sum::<f64>() / errs.len() as f64;
                let gmean = gmean.exp();
                for (l, e) in lengths.iter_mut().zip(&errs) {
                    *l *= (gmean / e).powf(0.6).clamp(0.25, 4.0);
                }
            }
            None => {
                // Degenerate interpolant (pole inside the interval): relax
                // the node distribution toward uniform and retry.
                let mean = lengths.iter().sum::<f64>() / lengths.len() as f64;
                for l in lengths.iter_mut() {
                    *l = 0.5 * *l + 0.5 * mean;
                }
            }
        }
    }

    let (p, q, sup_error, balance, iterations) = best.ok_or_else(|| {
        Error::Approximation(format!(
            "no valid rational interpolant of type ({num_deg}, {den_deg}) on [{a}, {b}]"
        ))
    })?;
    let num = p.to_monomial();
    let den = q.to_monomial();
    Ok(RationalFit { num, den, sup_error, balance, iterations })
}

/// Rational interpolation through the nodes: returns Chebyshev-basis
/// numerator/denominator, or `None` when the denominator changes sign on
/// the interval (degenerate interpolant).
fn interpolate_rational(
    f: &dyn Fn(f64) -> f64,
    nodes: &[f64],
    (a, b): (f64, f64),
    num_deg: usize,
    den_deg: usize,
) -> Option<(ChebPoly, ChebPoly)> {
    let rows = nodes.len();
    let cols = num_deg + den_deg + 2;
    // One extra zero row makes the matrix square, so the SVD exposes the
    // full right singular basis including the null direction.
    let mut m = DMatrix::zeros(cols, cols);
    for (i, &x) in nodes.iter().enumerate() {
        let xi = (2.0 * x - a - b) / (b - a);
        let fx = f(x);
        let mut t_prev = 1.0;
        let mut t_cur = xi;
        for k in 0..=num_deg.max(den_deg) {
            let t = if k == 0 {
                1.0
            } else if k == 1 {
                xi
            } else {
                let t_next = 2.0 * xi * t_cur - t_prev;
                t_prev = t_cur;
                t_cur = t_next;
                t_next
            };
            if k <= num_deg {
                m[(i, k)] = t;
            }
            if k <= den_deg {
                m[(i, num_deg + 1 + k)] = -fx * t;
            }
        }
        // Normalize the row to balance the least-squares problem.
        let norm = m.row(i).norm();
        if norm > 0.0 {
            for j in 0..cols {
                m[(i, j)] /= norm;
            }
        }
    }
    debug_assert_eq!(rows + 1, cols);
    // Null vector: right singular vector for the smallest singular value.
    let svd = m.svd(false, true);
    let v_t = svd.v_t.as_ref()?;
    let mut k_min = 0;
    for (k, s) in svd.singular_values.iter().enumerate() {
        if *s < svd.singular_values[k_min] {
            k_min = k;
        }
    }
    let null: DVector<f64> = v_t.row(k_min).transpose();
    let p = ChebPoly { coeffs: null.as_slice()[..=num_deg].to_vec(), a, b };
    let q = ChebPoly { coeffs: null.as_slice()[num_deg + 1..].to_vec(), a, b };

    // Reject interpolants whose denominator is not single-signed.
    let samples = 64 * (den_deg + 1);
    let q0 = q.eval(a);
    if q0 == 0.0 {
        return None;
    }
    for k in 0..=samples {
        let x = a + (b - a) * k as f64 / samples as f64;
        if q.eval(x) * q0 <= 0.0 {
            return None;
        }
    }
    Some((p, q))
}

/// Max of |f - p/q| · w over a subinterval: coarse sampling plus
/// golden-section refinement around the best sample.
fn local_sup_error(
    f: &dyn Fn(f64) -> f64,
    w: &dyn Fn(f64) -> f64,
    p: &ChebPoly,
    q: &ChebPoly,
    lo: f64,
    hi: f64,
) -> f64 {
    let err = |x: f64| (f(x) - p.eval(x) / q.eval(x)).abs() * w(x);
    let samples = 32;
    let mut best_x = lo;
    let mut best_e = 0.0;
    for k in 0..=samples {
        let x = lo + (hi - lo) * k as f64 / samples as f64;
        let e = err(x);
        if e > best_e {
            best_e = e;
            best_x = x;
        }
    }
    // Golden-section around the best sample.
    let step = (hi - lo) / samples as f64;
    let (mut x1, mut x4) = ((best_x - step).max(lo), (best_x + step).min(hi));
    let phi = 0.5 * (5.0_f64.sqrt() - 1.0);
    let mut x2 = x4 - phi * (x4 - x1);
    let mut x3 = x1 + phi * (x4 - x1);
    let (mut e2, mut e3) = (err(x2), err(x3));
    for _ in 0..40 {
        if e2 > e3 {
            x4 = x3;
            x3 = x2;
            e3 = e2;
            x2 = x4 - phi * (x4 - x1);
            e2 = err(x2);
        } else {
            x1 = x2;
            x2 = x3;
            e2 = e3;
            x3 = x1 + phi * (x4 - x1);
            e3 = err(x3);
        }
    }
    best_e.max(e2).max(e3)
}

/// Rational surrogate for the inverse fractional power: polynomials with
/// `s(z⁻¹) = p_r(z)/p_ℓ(z) ≈ z^(-α)` for `z` in the spectral interval.
#[derive(Debug, Clone)]
pub struct FractionalPowerFit {
    pub alpha: f64,
    pub m: usize,
    /// Integer part `m_α = max(1, ⌊α⌋)`.
    pub m_alpha: usize,
    pub p_r: Poly,
    pub p_ell: Poly,
    /// Spectral interval the fit covers.
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl FractionalPowerFit {
    /// Builds the surrogate for `z^(-α)` over `[λ_min, λ_max]` with rational
    /// degree `m`.
    pub fn build(alpha: f64, m: usize, lambda_min: f64, lambda_max: f64) -> Result<Self> {
        if alpha <= 0.0 || !alpha.is_finite() {
            return Err(Error::Approximation(format!(
                "alpha must be positive and finite, got {alpha}"
            )));
        }
        if m == 0 {
            return Err(Error::Approximation("rational degree m must be >= 1".into()));
        }
        if !(lambda_min > 0.0 && lambda_max > lambda_min) {
            return Err(Error::Approximation(format!(
                "bad spectral interval [{lambda_min}, {lambda_max}]"
            )));
        }
        let m_alpha = (alpha.floor() as usize).max(1);
        let gamma = alpha - m_alpha as f64;

        let (p_r, p_ell) = if gamma.abs() < 1e-12 {
            // Integer order: s(z⁻¹) = z^(-m_α) exactly.
            (Poly::constant(1.0), Poly::monomial(m_alpha))
        } else if gamma > 0.0 {
            // ŝ ≈ x^γ on the inverted spectral interval, in the relative norm
            // so the factor holds uniformly across the spectrum.
            let fit =
                minimax_rational_relative(gamma, (1.0 / lambda_max, 1.0 / lambda_min), m, m + 1)?;
            // s(z⁻¹) = z^(-m_α) ŝ(z⁻¹) = rev(num) / (z^(m_α - 1) rev(den)).
            let p_r = fit.num.reversed(m);
            let p_ell = Poly::monomial(m_alpha - 1).mul(&fit.den.reversed(m + 1));
            (p_r, p_ell)
        } else {
            // ŝ ≈ x^|γ| on the rescaled spectrum [λ_min/λ_max, 1], applied to
            // λ_max⁻¹ z; multiplying by the exact z^(-m_α) preserves the
            // relative error. Type (m, m) keeps the composed denominator
            // degree within m + m_α, matching the positive branch.
            let c = -gamma;
            let fit = minimax_rational_relative(c, (lambda_min / lambda_max, 1.0), m, m)?;
            let scale = lambda_max.powf(c);
            let p_r = fit.num.compose_scale(1.0 / lambda_max).scale(scale);
            let p_ell = Poly::monomial(m_alpha).mul(&fit.den.compose_scale(1.0 / lambda_max));
            (p_r, p_ell)
        };

        let fit = Self { alpha, m, m_alpha, p_r, p_ell, lambda_min, lambda_max };
        fit.validate_poles()?;
        Ok(fit)
    }

    /// Evaluates `s(z⁻¹) ≈ z^(-α)`.
    pub fn eval_inv_power(&self, z: f64) -> f64 {
        self.p_r.eval(z) / self.p_ell.eval(z)
    }

    /// Roots of `p_ℓ` as (real parts, conjugate pairs). All roots must lie
    /// strictly below the spectral interval so that shifted operators stay
    /// positive definite.
    pub fn denominator_roots(&self) -> Result<DenominatorRoots> {
        let mut real = Vec::new();
        let mut pairs = Vec::new();
        let mut roots = self.p_ell.roots();
        roots.sort_by(|a, b| (a.re, a.im).partial_cmp(&(b.re, b.im)).expect("finite roots"));
        let mut used = vec![false; roots.len()];
        for i in 0..roots.len() {
            if used[i] {
                continue;
            }
            let r = roots[i];
            if r.im.abs() < 1e-9 * (1.0 + r.re.abs()) {
                real.push(r.re);
                used[i] = true;
            } else {
                // Find the conjugate partner.
                let mut matched = false;
                for j in i + 1..roots.len() {
                    if !used[j]
                        && (roots[j].re - r.re).abs() < 1e-6 * (1.0 + r.re.abs())
                        && (roots[j].im + r.im).abs() < 1e-6 * (1.0 + r.im.abs())
                    {
                        used[j] = true;
                        matched = true;
                        break;
                    }
                }
                if !matched {
                    return Err(Error::Approximation(
                        "denominator has an unpaired complex root".into(),
                    ));
                }
                used[i] = true;
                pairs.push((r.re, r.im.abs()));
            }
        }
        let lead = *self.p_ell.coeffs().last().expect("nonempty");
        Ok(DenominatorRoots { real, pairs, leading: lead })
    }

    fn validate_poles(&self) -> Result<()> {
        // Real roots must stay strictly below the spectrum so that shifted
        // matrices of the form A - rC remain positive definite; conjugate
        // pairs contribute quadratic factors (λ - a)² + b², which only become
        // singular when the imaginary part vanishes inside the spectrum.
        let margin = 1e-3 * self.lambda_min;
        for r in self.p_ell.roots() {
            if r.im.abs() < 1e-9 * (1.0 + r.re.abs()) {
                if r.re > self.lambda_min - margin {
                    return Err(Error::Approximation(format!(
                        "real denominator root {:.6e} intrudes into the spectral interval \
                         starting at {:.6e}",
                        r.re, self.lambda_min
                    )));
                }
            } else {
                let closest = r.re.clamp(self.lambda_min, self.lambda_max);
                let min_quad = (closest - r.re).powi(2) + r.im * r.im;
                let scale = r.re * r.re + r.im * r.im + self.lambda_min * self.lambda_min;
                if min_quad < 1e-12 * scale {
                    return Err(Error::Approximation(format!(
                        "denominator root {:.3e}+{:.3e}i makes a quadratic factor nearly \
                         singular on the spectrum",
                        r.re, r.im
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Root factorization of the denominator polynomial:
/// `p_ℓ(z) = leading · Π (z - r_i) · Π ((z - a_j)² + b_j²)`.
#[derive(Debug, Clone)]
pub struct DenominatorRoots {
    pub real: Vec<f64>,
    /// `(a, b)` for conjugate pairs `a ± b i`.
    pub pairs: Vec<(f64, f64)>,
    pub leading: f64,
}
