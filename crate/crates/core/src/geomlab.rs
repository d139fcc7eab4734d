//! Closed-form geometry of the shift machine model: the model polynomial,
//! two KL surfaces, finite-difference derivatives and zero-set extraction.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::machines::{self, SHIFT_MACHINE_STEPS};
use crate::probkit::{Alphabet, Dist};
use crate::smoothstep::{smooth_run, SmoothConfig};

/// Threshold below which `K` counts as zero.
pub const ZERO_TOL: f64 = 1e-9;

/// Raster values are clipped here for plotting.
pub const RASTER_CLIP: f64 = 0.01;

/// Gradient step.
pub const GRAD_STEP: f64 = 1e-5;

/// Base Hessian step, refined once by Richardson extrapolation.
pub const HESSIAN_STEP: f64 = 1e-3;

/// `w = (h, k)`: counter mass `h` on 2 (rest on 0) and mass `k` on `A` for
/// the first letter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftParam {
    pub h: f64,
    pub k: f64,
}

impl ShiftParam {
    pub fn new(h: f64, k: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&h) || !(0.0..=1.0).contains(&k) {
            return Err(Error::InvalidParameter(format!("({h}, {k}) is outside [0,1]²")));
        }
        Ok(Self { h, k })
    }
}

/// A letter of the shifted word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Letter {
    A,
    B,
}

impl Letter {
    pub const ALL: [Letter; 2] = [Letter::A, Letter::B];

    fn symbol(self) -> &'static str {
        match self {
            Letter::A => "A",
            Letter::B => "B",
        }
    }
}

/// The output alphabet `{A, B}`.
pub fn letters() -> std::sync::Arc<Alphabet> {
    Alphabet::new(["A", "B"]).expect("two distinct symbols")
}

fn delta(l: Letter, target: Letter) -> f64 {
    (l == target) as u8 as f64
}

/// Closed-form distribution of the output letter for input `(a2, a3)`.
pub fn shift_model(a2: Letter, a3: Letter, w: ShiftParam) -> Dist {
    let (h, k) = (w.h, w.k);
    let g = 1.0 - h;
    let p_a = g * g * k + 2.0 * h * g * delta(a2, Letter::A) + h * h * delta(a3, Letter::A);
    let p_b = g * g * (1.0 - k) + 2.0 * h * g * delta(a2, Letter::B) + h * h * delta(a3, Letter::B);
    Dist::new(letters(), vec![p_a, p_b]).expect("coefficients are a partition of unity")
}

/// The same distribution obtained by running the smooth relaxation of the
/// shift machine on `□ n a1 a2 a3 □` with the counter and `a1` mixed.
pub fn shift_simulate(a2: Letter, a3: Letter, w: ShiftParam) -> Result<Dist> {
    let m = machines::shift_machine();
    let sigma = m.sigma().clone();
    let word = format!("0A{}{}", a2.symbol(), a3.symbol());
    let input = m.parse_word(&word)?;
    let mut c = SmoothConfig::for_input(&m, &input, SHIFT_MACHINE_STEPS);
    let mut counter = vec![0.0; sigma.len()];
    counter[sigma.index_of("0")?] = 1.0 - w.h;
    counter[sigma.index_of("2")?] = w.h;
    let mut a1 = vec![0.0; sigma.len()];
    a1[sigma.index_of("A")?] = w.k;
    a1[sigma.index_of("B")?] = 1.0 - w.k;
    c.set_cell(0, &Dist::new(sigma.clone(), counter)?)?;
    c.set_cell(1, &Dist::new(sigma.clone(), a1)?)?;
    let out = smooth_run(&m, &c, SHIFT_MACHINE_STEPS)?;
    let cell = out.cell(1);
    Dist::new(letters(), vec![cell.prob("A")?, cell.prob("B")?])
}

/// The two KL surfaces studied for the shift model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Surface {
    /// Realizable truth at `w₀ = (1, 1)`: `K = -½ log g(h, k)`.
    Example1,
    /// Input `AB` with a fair coin label: `K = -½ log 4f(1-f)`.
    Example2,
}

impl Surface {
    /// Evaluates the polynomial formula, which extends past the box;
    /// `+∞` where the logarithm's argument is not positive.
    pub fn eval(self, h: f64, k: f64) -> f64 {
        match self {
            Surface::Example1 => {
                let g = example1_g(h, k);
                if g > 0.0 {
                    -0.5 * g.ln()
                } else {
                    f64::INFINITY
                }
            }
            Surface::Example2 => {
                let f = example2_f(h, k);
                let arg = 4.0 * f * (1.0 - f);
                if arg > 0.0 {
                    -0.5 * arg.ln()
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Surface::Example1 => "example1",
            Surface::Example2 => "example2",
        }
    }
}

fn example1_g(h: f64, k: f64) -> f64 {
    let g = (1.0 - h) * (1.0 - h);
    (g * k + h * h) * (g * (1.0 - k) + h * h)
}

/// `f(h, k) = (1-h)²k + 2h(1-h)`.
pub fn example2_f(h: f64, k: f64) -> f64 {
    (1.0 - h) * (1.0 - h) * k + 2.0 * h * (1.0 - h)
}

pub fn k_example1(w: ShiftParam) -> f64 {
    Surface::Example1.eval(w.h, w.k)
}

pub fn k_example2(w: ShiftParam) -> f64 {
    Surface::Example2.eval(w.h, w.k)
}

/// Finite-difference derivatives of a surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Derivatives {
    pub gradient: [f64; 2],
    pub hessian: [[f64; 2]; 2],
}

impl Derivatives {
    pub fn hessian_det(&self) -> f64 {
        self.hessian[0][0] * self.hessian[1][1] - self.hessian[0][1] * self.hessian[1][0]
    }

    pub fn gradient_norm(&self) -> f64 {
        self.gradient[0].hypot(self.gradient[1])
    }
}

/// Central-difference gradient (step `GRAD_STEP`) and Hessian (steps `s`
/// and `s/2` combined by Richardson extrapolation). The surface is
/// evaluated through its polynomial extension, so stencils may leave the
/// box; they may not reach a point where `K` is infinite.
pub fn grad_hessian(surface: Surface, w: ShiftParam) -> Result<Derivatives> {
    let f = |dh: f64, dk: f64| -> Result<f64> {
        let v = surface.eval(w.h + dh, w.k + dk);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::BoundaryProximity { h: w.h, k: w.k })
        }
    };
    let e = GRAD_STEP;
    let gradient = [(f(e, 0.0)? - f(-e, 0.0)?) / (2.0 * e), (f(0.0, e)? - f(0.0, -e)?) / (2.0 * e)];
    let hess_at = |s: f64| -> Result<[[f64; 2]; 2]> {
        let c = f(0.0, 0.0)?;
        let hh = (f(s, 0.0)? - 2.0 * c + f(-s, 0.0)?) / (s * s);
        let kk = (f(0.0, s)? - 2.0 * c + f(0.0, -s)?) / (s * s);
        let hk = (f(s, s)? - f(s, -s)? - f(-s, s)? + f(-s, -s)?) / (4.0 * s * s);
        Ok([[hh, hk], [hk, kk]])
    };
    let coarse = hess_at(HESSIAN_STEP)?;
    let fine = hess_at(HESSIAN_STEP / 2.0)?;
    let mut hessian = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            hessian[i][j] = (4.0 * fine[i][j] - coarse[i][j]) / 3.0;
        }
    }
    Ok(Derivatives { gradient, hessian })
}

/// `∇K = (f - ½)/(f(1-f)) · ∇f` for the second surface.
pub fn example2_gradient(w: ShiftParam) -> [f64; 2] {
    let (h, k) = (w.h, w.k);
    let f = example2_f(h, k);
    let df = [-2.0 * (1.0 - h) * k + 2.0 - 4.0 * h, (1.0 - h) * (1.0 - h)];
    let c = (f - 0.5) / (f * (1.0 - f));
    [c * df[0], c * df[1]]
}

/// Gradient of `-½ log g` obtained by differentiating `g` by hand.
pub fn example1_gradient(w: ShiftParam) -> [f64; 2] {
    let (h, k) = (w.h, w.k);
    let g2 = (1.0 - h) * (1.0 - h);
    let u = g2 * k + h * h;
    let v = g2 * (1.0 - k) + h * h;
    let du = [-2.0 * (1.0 - h) * k + 2.0 * h, g2];
    let dv = [-2.0 * (1.0 - h) * (1.0 - k) + 2.0 * h, -g2];
    [-0.5 * (du[0] / u + dv[0] / v), -0.5 * (du[1] / u + dv[1] / v)]
}

/// Points of the zero set and a clipped raster of `K` over `[0,1]²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroScan {
    pub surface: Surface,
    pub resolution: usize,
    /// `raster[i][j] = min(K(h_i, k_j), RASTER_CLIP)` with `h_i = i/(res-1)`.
    pub raster: Vec<Vec<f64>>,
    pub points: Vec<ShiftParam>,
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-13 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Rasterizes `K` and extracts zero-set points: grid points with
/// `K < ZERO_TOL`, plus golden-section minimizers along every grid row and
/// column that reach `K < ZERO_TOL`.
pub fn scan_zero_set(surface: Surface, resolution: usize) -> Result<ZeroScan> {
    if resolution < 32 {
        return Err(Error::InvalidParameter(format!("resolution must be at least 32, got {resolution}")));
    }
    let step = 1.0 / (resolution - 1) as f64;
    let coord = |i: usize| i as f64 * step;
    let mut raster = vec![vec![0.0; resolution]; resolution];
    let mut points = Vec::new();
    for (i, row) in raster.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let v = surface.eval(coord(i), coord(j));
            *cell = v.min(RASTER_CLIP);
            if v < ZERO_TOL {
                points.push(ShiftParam { h: coord(i), k: coord(j) });
            }
        }
    }
    let refine = |line: &dyn Fn(f64) -> f64| -> Option<f64> {
        let best = (0..resolution).min_by(|&a, &b| line(coord(a)).total_cmp(&line(coord(b))))?;
        let lo = coord(best.saturating_sub(1));
        let hi = coord((best + 1).min(resolution - 1));
        let x = golden_min(line, lo, hi);
        (line(x) < ZERO_TOL).then_some(x)
    };
    for i in 0..resolution {
        let h = coord(i);
        if let Some(k) = refine(&|k| surface.eval(h, k)) {
            points.push(ShiftParam { h, k });
        }
        let k = coord(i);
        if let Some(h) = refine(&|h| surface.eval(h, k)) {
            points.push(ShiftParam { h, k });
        }
    }
    Ok(ZeroScan { surface, resolution, raster, points })
}

impl ZeroScan {
    /// `h,k,K` rows of the raster.
    pub fn raster_csv(&self) -> String {
        let step = 1.0 / (self.resolution - 1) as f64;
        let mut out = String::from("h,k,K\n");
        for (i, row) in self.raster.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let _ = writeln!(out, "{:?},{:?},{:?}", i as f64 * step, j as f64 * step, v);
            }
        }
        out
    }

    /// `h,k` rows of the extracted zero-set points.
    pub fn points_csv(&self) -> String {
        let mut out = String::from("h,k\n");
        for p in &self.points {
            let _ = writeln!(out, "{:?},{:?}", p.h, p.k);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(h: f64, k: f64) -> ShiftParam {
        ShiftParam::new(h, k).unwrap()
    }

    #[test]
    fn model_corners() {
        for a2 in Letter::ALL {
            for a3 in Letter::ALL {
                let d = shift_model(a2, a3, w(1.0, 0.3));
                assert_eq!(d.prob(a3.symbol()).unwrap(), 1.0);
                assert_eq!(shift_model(a2, a3, w(0.0, 1.0)).prob("A").unwrap(), 1.0);
            }
        }
        assert!((shift_model(Letter::B, Letter::A, w(0.5, 0.5)).prob("A").unwrap() - 0.375).abs() < 1e-15);
        assert!(ShiftParam::new(1.1, 0.0).is_err());
    }

    #[test]
    fn simulation_agrees_with_model_on_a_coarse_grid() {
        for i in 0..=10 {
            for j in 0..=10 {
                let p = w(i as f64 / 10.0, j as f64 / 10.0);
                for a2 in Letter::ALL {
                    for a3 in Letter::ALL {
                        let m = shift_model(a2, a3, p);
                        let s = shift_simulate(a2, a3, p).unwrap();
                        assert!((m.weights()[0] - s.weights()[0]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn example1_values() {
        assert_eq!(k_example1(w(1.0, 1.0)), 0.0);
        assert!((k_example1(w(0.5, 0.5)) - (-0.5 * 0.140625f64.ln())).abs() < 1e-12);
        assert!((k_example1(w(0.5, 0.5)) - 0.98083).abs() < 1e-5);
        assert_eq!(k_example1(w(0.0, 1.0)), f64::INFINITY);
    }

    #[test]
    fn example1_is_the_average_over_the_two_mixed_inputs() {
        // -½ log g equals the expected -log p(a3 | a2 a3) over x uniform on
        // {AB, BA}, where the truth at (1, 1) outputs a3
        for &(h, k) in &[(0.3, 0.6), (0.9, 0.2), (0.5, 0.5)] {
            let p = w(h, k);
            let avg = -0.5
                * (shift_model(Letter::A, Letter::B, p).prob("B").unwrap().ln()
                    + shift_model(Letter::B, Letter::A, p).prob("A").unwrap().ln());
            assert!((avg - k_example1(p)).abs() < 1e-12);
        }
    }

    #[test]
    fn example2_values() {
        assert!(k_example2(w(0.0, 0.5)).abs() < 1e-15);
        assert!((example2_f(0.5, 0.5) - 0.625).abs() < 1e-15);
        assert!((k_example2(w(0.5, 0.5)) - (-0.5 * (4.0f64 * 0.625 * 0.375).ln())).abs() < 1e-12);
        assert!((k_example2(w(0.5, 0.5)) - 0.032269).abs() < 1e-5);
        assert_eq!(k_example2(w(0.0, 0.0)), f64::INFINITY);
    }

    #[test]
    fn example2_matches_its_kl_definition() {
        // q(AB) = 1 with a fair label, so K = -½ log 2p(A) - ½ log 2p(B)
        let p = w(0.3, 0.7);
        let m = shift_model(Letter::A, Letter::B, p);
        let kl = -0.5 * (2.0 * m.prob("A").unwrap()).ln() - 0.5 * (2.0 * m.prob("B").unwrap()).ln();
        assert!((kl - k_example2(p)).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_closed_forms() {
        let p = w(0.3, 0.2);
        let d = grad_hessian(Surface::Example2, p).unwrap();
        let g = example2_gradient(p);
        for i in 0..2 {
            assert!((d.gradient[i] - g[i]).abs() <= 1e-6 * g[i].abs().max(1e-6));
        }
        let corner = w(1.0, 1.0);
        let d = grad_hessian(Surface::Example1, corner).unwrap();
        let g = example1_gradient(corner);
        for i in 0..2 {
            assert!((d.gradient[i] - g[i]).abs() <= 1e-6);
        }
    }

    #[test]
    fn boundary_stencil_is_reported() {
        assert!(matches!(grad_hessian(Surface::Example2, w(0.0, 0.0)), Err(Error::BoundaryProximity { .. })));
    }

    #[test]
    fn zero_set_of_example2_is_degenerate() {
        let scan = scan_zero_set(Surface::Example2, 101).unwrap();
        assert_eq!(scan.raster.len(), 101);
        assert!(scan.raster.iter().all(|r| r.len() == 101 && r.iter().all(|&v| (0.0..=RASTER_CLIP).contains(&v))));
        assert!(scan.points.len() > 50);
        for p in &scan.points {
            assert!((example2_f(p.h, p.k) - 0.5).abs() <= 1e-5);
            if let Ok(d) = grad_hessian(Surface::Example2, *p) {
                assert!(d.gradient_norm() <= 1e-6, "{p:?}: {:?}", d.gradient);
                assert!(d.hessian_det().abs() <= 1e-6, "{p:?}: {}", d.hessian_det());
            }
        }
    }

    #[test]
    fn zero_set_of_example1_contains_the_edge() {
        let scan = scan_zero_set(Surface::Example1, 64).unwrap();
        assert!(scan.points.iter().any(|p| p.h == 1.0 && p.k == 1.0));
        assert!(scan.points.iter().any(|p| p.h == 1.0 && p.k == 0.0));
        assert!(scan_zero_set(Surface::Example1, 16).is_err());
        assert_eq!(scan.raster_csv().lines().count(), 1 + 64 * 64);
    }
}
