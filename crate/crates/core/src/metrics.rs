//! Phase-aligned NRMSE and Table-style reports.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use num_complex::Complex64;

use crate::complex::ComplexGrid;
use crate::error::{dim_err, Error, Result};

fn masked_pairs<'a>(
    est: &'a ComplexGrid,
    reference: &'a ComplexGrid,
    mask: Option<&'a [bool]>,
) -> Result<impl Iterator<Item = (Complex64, Complex64)> + 'a> {
    est.same_dims(reference)?;
    if let Some(m) = mask {
        if m.len() != est.len() {
            return Err(dim_err!("mask of {} pixels for a {:?} image", m.len(), est.dims()));
        }
    }
    Ok(est
        .data()
        .iter()
        .zip(reference.data())
        .enumerate()
        .filter(move |(j, _)| mask.is_none_or(|m| m[*j]))
        .map(|(_, (a, b))| (*a, *b)))
}

/// Global phase `theta` in `[0, 2pi)` minimizing `|est - e^{i theta} reference|`.
pub fn align_phase(est: &ComplexGrid, reference: &ComplexGrid) -> Result<f64> {
    align_phase_masked(est, reference, None)
}

pub fn align_phase_masked(est: &ComplexGrid, reference: &ComplexGrid, mask: Option<&[bool]>) -> Result<f64> {
    let mut corr = Complex64::new(0.0, 0.0);
    let mut ref_energy = 0.0;
    for (a, b) in masked_pairs(est, reference, mask)? {
        corr += a * b.conj();
        ref_energy += b.norm_sqr();
    }
    if !(ref_energy > 0.0) {
        return Err(Error::Contract("reference image has zero norm".into()));
    }
    Ok(corr.arg().rem_euclid(TAU))
}

/// `|est - e^{i theta*} reference| / |reference|` with the optimal global phase.
pub fn nrmse(est: &ComplexGrid, reference: &ComplexGrid) -> Result<f64> {
    nrmse_masked(est, reference, None)
}

/// [`nrmse`] restricted to pixels where `mask` is true.
pub fn nrmse_masked(est: &ComplexGrid, reference: &ComplexGrid, mask: Option<&[bool]>) -> Result<f64> {
    let theta = align_phase_masked(est, reference, mask)?;
    let rot = Complex64::from_polar(1.0, theta);
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in masked_pairs(est, reference, mask)? {
        num += (a - rot * b).norm_sqr();
        den += b.norm_sqr();
    }
    Ok((num / den).sqrt())
}

/// Per-method summary in the "mean ± std (seconds)" style.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub method: String,
    pub pattern: String,
    pub nrmse: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation (zero for a single sample).
    pub std: f64,
    pub seconds_per_image: f64,
}

impl MetricReport {
    pub fn new(method: &str, pattern: &str, nrmse: Vec<f64>, seconds: &[f64]) -> Result<Self> {
        if nrmse.is_empty() {
            return Err(Error::Contract(format!("no samples for method '{method}'")));
        }
        let n = nrmse.len() as f64;
        let mean = nrmse.iter().sum::<f64>() / n;
        let std = (nrmse.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let seconds_per_image = if seconds.is_empty() {
            0.0
        } else {
            seconds.iter().sum::<f64>() / seconds.len() as f64
        };
        Ok(Self {
            method: method.to_string(),
            pattern: pattern.to_string(),
            nrmse,
            mean,
            std,
            seconds_per_image,
        })
    }

    /// `0.043 ± 0.19 (0.212)`.
    pub fn formatted(&self) -> String {
        format!("{:.3} ± {:.2} ({:.3})", self.mean, self.std, self.seconds_per_image)
    }
}

/// CSV of NRMSE statistics only; byte-stable under fixed seeds.
pub fn report_csv(rows: &[MetricReport], config_hash: &str) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Contract("empty report".into()));
    }
    let mut out = String::from("method,pattern,samples,mean_nrmse,std_nrmse,config_hash\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.12e},{:.12e},{}",
            r.method,
            r.pattern,
            r.nrmse.len(),
            r.mean,
            r.std,
            config_hash
        )
        .expect("write to string");
    }
    Ok(out)
}

/// CSV including timing and the formatted table cell.
pub fn table_csv(rows: &[MetricReport], config_hash: &str) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Contract("empty report".into()));
    }
    let mut out = String::from("method,pattern,mean_nrmse,std_nrmse,seconds_per_image,cell,config_hash\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{},{}",
            r.method,
            r.pattern,
            r.mean,
            r.std,
            r.seconds_per_image,
            r.formatted(),
            config_hash
        )
        .expect("write to string");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn rand_grid(seed: u64) -> ComplexGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexGrid::from_fn(8, 8, |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
    }

    #[test]
    fn alignment_recovers_rotation() {
        let x = rand_grid(1);
        let xh = x.scale_complex(Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_4));
        assert!((align_phase(&xh, &x).unwrap() - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        assert_eq!(align_phase(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn closed_form_beats_grid_search() {
        let x = rand_grid(2);
        let xh = rand_grid(3);
        let resid = |th: f64| xh.sub(&x.scale_complex(Complex64::from_polar(1.0, th))).unwrap().norm();
        let best_grid = (0..10_000)
            .map(|k| resid(TAU * k as f64 / 10_000.0))
            .fold(f64::INFINITY, f64::min);
        let theta = align_phase(&xh, &x).unwrap();
        assert!(resid(theta) <= best_grid);
    }

    #[test]
    fn nrmse_basics() {
        let x = rand_grid(4);
        assert!(nrmse(&x, &x).unwrap() < 1e-15);
        for phi in [0.3, 2.0, -1.0, 5.9] {
            let r = x.scale_complex(Complex64::from_polar(1.0, phi));
            assert!(nrmse(&r, &x).unwrap() < 1e-14);
        }
        assert!((nrmse(&ComplexGrid::zeros(8, 8), &x).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(nrmse(&x, &ComplexGrid::zeros(8, 8)), Err(Error::Contract(_))));
    }

    #[test]
    fn nrmse_respects_mask() {
        let x = rand_grid(5);
        let mut y = x.clone();
        y.set(0, 0, Complex64::new(10.0, 0.0));
        let mut mask = vec![true; 64];
        mask[0] = false;
        assert!(nrmse_masked(&y, &x, Some(&mask)).unwrap() < 1e-14);
        assert!(nrmse(&y, &x).unwrap() > 0.1);
    }

    #[test]
    fn report_stats() {
        let r = MetricReport::new("pmace", "16:4", vec![0.5], &[1.0]).unwrap();
        assert_eq!(r.std, 0.0);
        let r = MetricReport::new("wf", "16:4", vec![1.0, 2.0, 4.0], &[0.1, 0.2, 0.3]).unwrap();
        // mean 7/3, population variance ((4/3)^2 + (1/3)^2 + (5/3)^2) / 3 = 14/9
        assert!((r.mean - 7.0 / 3.0).abs() < 1e-15);
        assert!((r.std - (14.0f64 / 9.0).sqrt()).abs() < 1e-15);
        assert!((r.seconds_per_image - 0.2).abs() < 1e-15);
        assert!(MetricReport::new("x", "p", vec![], &[]).is_err());
    }

    #[test]
    fn table_cell_format() {
        let r = MetricReport {
            method: "ptychodv".into(),
            pattern: "256:5".into(),
            nrmse: vec![0.043],
            mean: 0.043,
            std: 0.19,
            seconds_per_image: 0.212,
        };
        assert_eq!(r.formatted(), "0.043 ± 0.19 (0.212)");
        assert!(report_csv(&[], "h").is_err());
    }
}
