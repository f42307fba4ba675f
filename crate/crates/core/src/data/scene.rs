//! Synthetic scenes: smooth random abundance maps mixed through endmember
//! spectra with a bilinear interaction term and white noise at a set SNR.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::cube::{LabelRaster, SpectralCube};
use crate::error::{Error, Result};
use crate::losses::sad;

/// Minimum pairwise spectral angle between endmembers, radians.
pub const MIN_ENDMEMBER_SAD: f64 = 0.05;

/// Where the spatial blur acts on the sampled abundances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoothingDomain {
    /// Blur log-abundances, then renormalize with a softmax. Neighbouring
    /// pixels blend geometrically, which keeps dominant materials dominant.
    #[default]
    Log,
    /// Blur abundances directly, then divide by the per-pixel sum.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub bands: usize,
    /// Endmember count `P`; also the class count of the derived labels.
    pub materials: usize,
    pub rows: usize,
    pub cols: usize,
    /// Gaussian blur standard deviation in pixels; 0 disables smoothing.
    pub smoothness: f64,
    pub smoothing: SmoothingDomain,
    /// Symmetric Dirichlet concentration of the per-pixel draw.
    pub dirichlet_alpha: f64,
    /// Weight `b` of the bilinear interaction term.
    pub nonlinear_strength: f64,
    /// `None` means noiseless.
    pub snr_db: Option<f64>,
    /// Pixels whose largest abundance falls below this are left unlabeled.
    pub purity_threshold: Option<f64>,
    /// Optional `[bands, materials]` row-major endmember matrix. Synthesized
    /// from the seed when absent.
    pub endmembers: Option<Vec<f64>>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            bands: 32,
            materials: 5,
            rows: 64,
            cols: 64,
            smoothness: 3.0,
            smoothing: SmoothingDomain::Log,
            dirichlet_alpha: 0.1,
            nonlinear_strength: 0.3,
            snr_db: Some(30.0),
            purity_threshold: Some(0.4),
            endmembers: None,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Scene(m));
        if self.materials < 2 {
            return fail(format!("need at least 2 endmembers, got {}", self.materials));
        }
        if self.materials > u16::MAX as usize {
            return fail(format!("too many endmembers: {}", self.materials));
        }
        if self.bands < 2 {
            return fail(format!("need at least 2 bands, got {}", self.bands));
        }
        if self.rows == 0 || self.cols == 0 {
            return fail(format!("empty scene {}x{}", self.rows, self.cols));
        }
        if !(self.smoothness >= 0.0 && self.smoothness.is_finite()) {
            return fail(format!("smoothness must be a finite value >= 0, got {}", self.smoothness));
        }
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
            return fail(format!("Dirichlet concentration must be positive, got {}", self.dirichlet_alpha));
        }
        if !(self.nonlinear_strength >= 0.0 && self.nonlinear_strength.is_finite()) {
            return fail(format!("nonlinear strength must be >= 0, got {}", self.nonlinear_strength));
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return fail(format!("SNR must be finite (omit it for a noiseless scene), got {snr}"));
            }
        }
        if let Some(t) = self.purity_threshold {
            if !(0.0..=1.0).contains(&t) {
                return fail(format!("purity threshold must lie in [0, 1], got {t}"));
            }
        }
        if let Some(m) = &self.endmembers {
            if m.len() != self.bands * self.materials {
                return fail(format!(
                    "endmember matrix has {} entries, expected {}x{}",
                    m.len(),
                    self.bands,
                    self.materials
                ));
            }
            check_endmembers(m, self.bands, self.materials)?;
        }
        Ok(())
    }
}

/// Nonnegativity and pairwise distinctness of the columns of `[bands, p]`.
pub fn check_endmembers(m: &[f64], bands: usize, p: usize) -> Result<()> {
    if let Some(v) = m.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Scene(format!("endmember entries must be finite and nonnegative, found {v}")));
    }
    let col = |j: usize| -> Vec<f64> { (0..bands).map(|l| m[l * p + j]).collect() };
    for a in 0..p {
        for b in a + 1..p {
            let angle = sad(&col(a), &col(b)).map_err(|_| Error::Scene(format!("endmember {} or {} is all zero", a + 1, b + 1)))?;
            if angle < MIN_ENDMEMBER_SAD {
                return Err(Error::Scene(format!(
                    "endmembers {} and {} are degenerate: spectral angle {angle:.4} rad < {MIN_ENDMEMBER_SAD}",
                    a + 1,
                    b + 1
                )));
            }
        }
    }
    Ok(())
}

/// Smooth reflectance-like spectra: a low baseline, one dominant bump per
/// endmember at evenly spaced band positions, and a weaker secondary bump at
/// a random position.
pub fn synth_endmembers(bands: usize, p: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut m = vec![0.0; bands * p];
    let denom = (bands - 1).max(1) as f64;
    let bump = |x: f64, c: f64, w: f64| (-0.5 * ((x - c) / w).powi(2)).exp();
    for j in 0..p {
        let center = (j as f64 + 0.5) / p as f64 + rng.gen_range(-0.3..0.3) / p as f64;
        let second = rng.gen_range(0.0..1.0);
        for l in 0..bands {
            let x = l as f64 / denom;
            m[l * p + j] = 0.05 + 0.8 * bump(x, center, 0.09) + 0.25 * bump(x, second, 0.15);
        }
    }
    m
}

/// One pixel of the mixing model without noise:
/// `y = M a + b * sum_{p<q} a_p a_q (m_p * m_q)`, with `M` as `[bands, p]`.
pub fn mix_pixel(m: &[f64], bands: usize, a: &[f64], b: f64) -> Vec<f64> {
    let p = a.len();
    (0..bands)
        .map(|l| {
            let row = &m[l * p..][..p];
            let mut y = 0.0;
            for j in 0..p {
                y += row[j] * a[j];
            }
            if b != 0.0 {
                let mut inter = 0.0;
                for i in 0..p {
                    for j in i + 1..p {
                        inter += a[i] * a[j] * row[i] * row[j];
                    }
                }
                y += b * inter;
            }
            y
        })
        .collect()
}

/// Separable Gaussian blur of a `rows x cols` plane with half-sample
/// symmetric boundaries; the kernel is truncated at four standard deviations.
pub fn gaussian_blur(plane: &[f64], rows: usize, cols: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return plane.to_vec();
    }
    let radius = (4.0 * sigma + 0.5) as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-0.5 * (d as f64 / sigma).powi(2)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let period = 2 * n;
        let mut i = i.rem_euclid(period);
        if i >= n {
            i = period - 1 - i;
        }
        i as usize
    };
    let mut tmp = vec![0.0; plane.len()];
    for r in 0..rows {
        for c in 0..cols {
            tmp[r * cols + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * plane[r * cols + reflect(c as isize + k as isize - radius, cols)])
                .sum();
        }
    }
    let mut out = vec![0.0; plane.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * tmp[reflect(r as isize + k as isize - radius, rows) * cols + c])
                .sum();
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct GroundTruthScene {
    pub spec: SceneSpec,
    pub cube: SpectralCube,
    /// `[materials, rows, cols]`, each pixel on the probability simplex.
    pub abundances: Vec<f64>,
    pub labels: LabelRaster,
    /// `[bands, materials]` row-major.
    pub endmembers: Vec<f64>,
    /// `[bands, rows, cols]` noise realization added to the clean mixture.
    pub noise: Vec<f64>,
}

impl GroundTruthScene {
    pub fn abundance(&self, row: usize, col: usize) -> Vec<f64> {
        let n = self.spec.rows * self.spec.cols;
        (0..self.spec.materials)
            .map(|p| self.abundances[p * n + row * self.spec.cols + col])
            .collect()
    }

    /// Abundance planes as a cube with one band per endmember.
    pub fn abundance_cube(&self) -> Result<SpectralCube> {
        SpectralCube::new(self.spec.materials, self.spec.rows, self.spec.cols, self.abundances.clone())
    }

    /// `10 log10(P_clean / P_noise)` measured from the stored realization.
    pub fn measured_snr_db(&self) -> f64 {
        let noise_power: f64 = self.noise.iter().map(|n| n * n).sum();
        let clean_power: f64 = self
            .cube
            .data()
            .iter()
            .zip(&self.noise)
            .map(|(y, n)| (y - n) * (y - n))
            .sum();
        10.0 * (clean_power / noise_power).log10()
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<GroundTruthScene> {
    spec.validate()?;
    let (l, p, rows, cols) = (spec.bands, spec.materials, spec.rows, spec.cols);
    let n = rows * cols;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let endmembers = match &spec.endmembers {
        Some(m) => m.clone(),
        None => {
            let m = synth_endmembers(l, p, &mut rng);
            check_endmembers(&m, l, p)?;
            m
        }
    };

    // Symmetric Dirichlet in log space: log G with G ~ Gamma(alpha) is drawn
    // as log Gamma(alpha + 1) + ln(U) / alpha, finite even for tiny alpha.
    let alpha = spec.dirichlet_alpha;
    let gamma = Gamma::new(alpha + 1.0, 1.0).map_err(|e| Error::Scene(e.to_string()))?;
    let mut log_a = vec![0.0; p * n];
    for v in log_a.iter_mut() {
        let g: f64 = gamma.sample(&mut rng);
        let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        *v = g.ln() + u.ln() / alpha;
    }
    for i in 0..n {
        let lse = log_sum_exp((0..p).map(|j| log_a[j * n + i]));
        for j in 0..p {
            log_a[j * n + i] -= lse;
        }
    }

    let mut planes: Vec<Vec<f64>> = (0..p)
        .map(|j| {
            let plane = &log_a[j * n..][..n];
            match spec.smoothing {
                SmoothingDomain::Log => gaussian_blur(plane, rows, cols, spec.smoothness),
                SmoothingDomain::Linear => {
                    let lin: Vec<f64> = plane.iter().map(|v| v.exp()).collect();
                    gaussian_blur(&lin, rows, cols, spec.smoothness)
                }
            }
        })
        .collect();
    for i in 0..n {
        match spec.smoothing {
            SmoothingDomain::Log => {
                let m = (0..p).map(|j| planes[j][i]).fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for plane in planes.iter_mut() {
                    plane[i] = (plane[i] - m).exp();
                    s += plane[i];
                }
                planes.iter_mut().for_each(|plane| plane[i] /= s);
            }
            SmoothingDomain::Linear => {
                let s: f64 = planes.iter().map(|plane| plane[i]).sum();
                planes.iter_mut().for_each(|plane| plane[i] /= s);
            }
        }
    }
    let abundances: Vec<f64> = planes.concat();

    let mut clean = vec![0.0; l * n];
    let mut a = vec![0.0; p];
    for i in 0..n {
        for (j, aj) in a.iter_mut().enumerate() {
            *aj = abundances[j * n + i];
        }
        for (band, y) in mix_pixel(&endmembers, l, &a, spec.nonlinear_strength).into_iter().enumerate() {
            clean[band * n + i] = y;
        }
    }

    let mut noise = vec![0.0; l * n];
    if let Some(snr) = spec.snr_db {
        for v in noise.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let signal_power = clean.iter().map(|y| y * y).sum::<f64>() / clean.len() as f64;
        let drawn_power = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
        let target = signal_power / 10f64.powf(snr / 10.0);
        let k = (target / drawn_power).sqrt();
        noise.iter_mut().for_each(|v| *v *= k);
    }
    let data = if spec.snr_db.is_some() {
        clean.iter().zip(&noise).map(|(y, v)| y + v).collect()
    } else {
        clean
    };

    let labels = (0..n)
        .map(|i| {
            let (best, max) = (0..p).fold((0, f64::NEG_INFINITY), |(bj, bv), j| {
                let v = abundances[j * n + i];
                if v > bv {
                    (j, v)
                } else {
                    (bj, bv)
                }
            });
            match spec.purity_threshold {
                Some(t) if max < t => 0,
                _ => best as u16 + 1,
            }
        })
        .collect();

    Ok(GroundTruthScene {
        spec: SceneSpec {
            endmembers: Some(endmembers.clone()),
            ..spec.clone()
        },
        cube: SpectralCube::new(l, rows, cols, data)?,
        abundances,
        labels: LabelRaster::new(rows, cols, labels)?,
        endmembers,
        noise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> GroundTruthScene {
        let spec = SceneSpec {
            rows: 20,
            cols: 24,
            ..SceneSpec::default()
        };
        generate_scene(&spec, seed).unwrap()
    }

    #[test]
    fn pure_pixel_is_the_endmember() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = synth_endmembers(8, 3, &mut rng);
        let y = mix_pixel(&m, 8, &[0.0, 1.0, 0.0], 0.0);
        let col: Vec<f64> = (0..8).map(|l| m[l * 3 + 1]).collect();
        assert_eq!(y, col);
    }

    #[test]
    fn half_half_is_the_mean() {
        let m = vec![0.2, 0.6, 0.4, 0.8, 1.0, 0.0];
        let y = mix_pixel(&m, 3, &[0.5, 0.5], 0.0);
        for (l, v) in y.iter().enumerate() {
            assert!((v - (m[2 * l] + m[2 * l + 1]) / 2.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn bilinear_term() {
        let m = vec![0.2, 0.6, 0.4, 0.8];
        let y = mix_pixel(&m, 2, &[0.5, 0.5], 0.3);
        assert!((y[0] - (0.4 + 0.3 * 0.25 * 0.12)).abs() < 1e-15);
        assert!((y[1] - (0.6 + 0.3 * 0.25 * 0.32)).abs() < 1e-15);
    }

    #[test]
    fn abundances_are_on_the_simplex() {
        let s = small(1);
        for r in 0..20 {
            for c in 0..24 {
                let a = s.abundance(r, c);
                assert!(a.iter().all(|&v| v >= 0.0));
                assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn snr_matches_target() {
        let s = small(2);
        assert!((s.measured_snr_db() - 30.0).abs() <= 0.5, "{}", s.measured_snr_db());
    }

    #[test]
    fn noiseless_linear_scene_reconstructs_exactly() {
        let spec = SceneSpec {
            rows: 10,
            cols: 12,
            nonlinear_strength: 0.0,
            snr_db: None,
            ..SceneSpec::default()
        };
        let s = generate_scene(&spec, 4).unwrap();
        let (l, p) = (spec.bands, spec.materials);
        for r in 0..10 {
            for c in 0..12 {
                let a = s.abundance(r, c);
                for band in 0..l {
                    let mut y = 0.0;
                    for j in 0..p {
                        y += s.endmembers[band * p + j] * a[j];
                    }
                    assert_eq!(y.to_bits(), s.cube.get(band, r, c).to_bits());
                }
            }
        }
    }

    #[test]
    fn labels_follow_argmax_and_purity() {
        let s = small(3);
        for r in 0..20 {
            for c in 0..24 {
                let a = s.abundance(r, c);
                let (j, max) = a.iter().enumerate().fold((0, -1.0), |b, (j, &v)| if v > b.1 { (j, v) } else { b });
                let want = if max < 0.4 { 0 } else { j as u16 + 1 };
                assert_eq!(s.labels.get(r, c), want);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let (a, b) = (small(9), small(9));
        assert_eq!(a.cube, b.cube);
        assert_eq!(a.labels, b.labels);
        assert_ne!(small(10).cube, a.cube);
    }

    #[test]
    fn default_endmembers_are_distinct() {
        let s = small(5);
        check_endmembers(&s.endmembers, 32, 5).unwrap();
    }

    #[test]
    fn invalid_specs() {
        let bad = |spec: SceneSpec| generate_scene(&spec, 0).unwrap_err();
        assert!(matches!(bad(SceneSpec { materials: 1, ..SceneSpec::default() }), Error::Scene(_)));
        let twin = vec![0.1, 0.1, 0.5, 0.5, 0.9, 0.9];
        let err = bad(SceneSpec {
            bands: 3,
            materials: 2,
            endmembers: Some(twin),
            ..SceneSpec::default()
        });
        assert!(err.to_string().contains("degenerate"), "{err}");
    }

    #[test]
    fn blur_preserves_constants_and_mass() {
        let plane = vec![2.5; 7 * 5];
        for v in gaussian_blur(&plane, 7, 5, 1.7) {
            assert!((v - 2.5).abs() < 1e-12);
        }
        let mut spike = vec![0.0; 21 * 21];
        spike[10 * 21 + 10] = 1.0;
        let out = gaussian_blur(&spike, 21, 21, 1.5);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
