//! Synthetic tapped-delay-line fading channel.
//!
//! A realization starts from `v` circularly symmetric complex Gaussian taps
//! with unit total average power. Between successive time samples every tap is
//! rotated by an independent phase drawn uniformly from `[-delta, +delta]`.
//! Each sample is mapped to `R` resources by taking equally spaced bins of the
//! zero-padded `fft_size`-point DFT. The model sees `k` past magnitudes per
//! resource; labels come from the Shannon rate aggregated over the next `l`
//! samples.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// How per-sample rates over the future window collapse into one `C_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RateAgg {
    #[default]
    Mean,
    Min,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Number of resources in the pool.
    pub r: usize,
    /// Number of channel taps.
    pub v: usize,
    /// Past-window length seen by the predictor.
    pub k: usize,
    /// Future-window length that defines the label.
    pub l: usize,
    pub fft_size: usize,
    /// Per-step phase jitter bound in radians.
    pub delta: f64,
    pub snr_db: f64,
    /// Target rate in bits/s/Hz.
    pub gamma_th: f64,
    pub rate_agg: RateAgg,
    pub master_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            r: 16,
            v: 32,
            k: 100,
            l: 10,
            fft_size: 64,
            delta: 0.1,
            snr_db: 0.0,
            gamma_th: 1.2,
            rate_agg: RateAgg::Mean,
            master_seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.r < 1 {
            return fail("sim.r must be >= 1".into());
        }
        if self.v < 1 {
            return fail("sim.v must be >= 1".into());
        }
        if self.fft_size < self.v {
            return fail(format!(
                "sim.fft_size ({}) must be >= sim.v ({})",
                self.fft_size, self.v
            ));
        }
        if self.fft_size % self.r != 0 {
            return fail(format!(
                "sim.fft_size ({}) must be a multiple of sim.r ({})",
                self.fft_size, self.r
            ));
        }
        if self.k < 1 || self.l < 1 {
            return fail("sim.k and sim.l must be >= 1".into());
        }
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return fail(format!("sim.delta must be finite and >= 0, got {}", self.delta));
        }
        if !self.snr_db.is_finite() {
            return fail("sim.snr_db must be finite".into());
        }
        // gamma_th = 0 is accepted as the degenerate "everything is good" case.
        if !(self.gamma_th >= 0.0) || !self.gamma_th.is_finite() {
            return fail(format!("sim.gamma_th must be finite and >= 0, got {}", self.gamma_th));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.fft_size / self.r
    }

    pub fn snr_linear(&self) -> f64 {
        db_to_linear(self.snr_db)
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TapVector {
    pub taps: Vec<Complex64>,
}

impl TapVector {
    pub fn power(&self) -> f64 {
        self.taps.iter().map(|h| h.norm_sqr()).sum()
    }
}

/// One system snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// `R` sequences of `k` past magnitudes.
    pub past: Vec<Vec<f64>>,
    /// `R` sequences of `l` future complex gains.
    pub future_gains: Vec<Vec<Complex64>>,
    /// Aggregated future rate per resource.
    pub rates: Vec<f64>,
    /// Outage labels, 1 when the rate misses the target.
    pub y: Vec<u8>,
    /// Reliability labels, `1 - y`.
    pub g: Vec<u8>,
}

impl ChannelRealization {
    pub fn num_resources(&self) -> usize {
        self.rates.len()
    }

    pub fn y_f64(&self) -> Vec<f64> {
        self.y.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn good_count(&self) -> usize {
        self.g.iter().map(|&v| v as usize).sum()
    }

    /// Recomputes rates and labels from the stored future gains under a
    /// different operating point. Past magnitudes are unaffected.
    pub fn relabel(&self, snr_db: f64, gamma_th: f64, agg: RateAgg) -> ChannelRealization {
        let rates: Vec<f64> = self
            .future_gains
            .iter()
            .map(|gains| aggregate_rate(gains, snr_db, agg))
            .collect();
        let (y, g) = labels(&rates, gamma_th);
        ChannelRealization {
            past: self.past.clone(),
            future_gains: self.future_gains.clone(),
            rates,
            y,
            g,
        }
    }
}

pub fn generate_taps(cfg: &SimConfig, stream: &mut RngStream) -> TapVector {
    let scale = (1.0 / (2.0 * cfg.v as f64)).sqrt();
    let taps = (0..cfg.v)
        .map(|_| {
            let re: f64 = stream.sample(StandardNormal);
            let im: f64 = stream.sample(StandardNormal);
            Complex64::new(re * scale, im * scale)
        })
        .collect();
    TapVector { taps }
}

/// Rotates every tap by an independent phase in `[-delta, +delta]`.
pub fn evolve_taps(taps: &TapVector, delta: f64, stream: &mut RngStream) -> TapVector {
    let taps = taps
        .taps
        .iter()
        .map(|&h| {
            let u: f64 = stream.random();
            let theta = delta * (2.0 * u - 1.0);
            h * Complex64::new(theta.cos(), theta.sin())
        })
        .collect();
    TapVector { taps }
}

/// Full `fft_size`-point DFT of the zero-padded tap vector.
pub fn full_spectrum(taps: &TapVector, fft_size: usize) -> Vec<Complex64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); fft_size];
    buf[..taps.taps.len()].copy_from_slice(&taps.taps);
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(fft_size).process(&mut buf);
    buf
}

/// The `R` extracted bins `{0, S, .., (R-1)S}` of the DFT, `S = fft_size / R`.
pub fn frequency_response(taps: &TapVector, cfg: &SimConfig) -> Vec<Complex64> {
    full_spectrum(taps, cfg.fft_size)
        .into_iter()
        .step_by(cfg.stride())
        .take(cfg.r)
        .collect()
}

/// Direct evaluation of the extracted DFT bins with precomputed twiddles.
/// Used by the generator; agrees with [`frequency_response`] to rounding.
#[derive(Debug, Clone)]
pub struct BinExtractor {
    v: usize,
    twiddles: Vec<Complex64>,
}

impl BinExtractor {
    pub fn new(cfg: &SimConfig) -> Self {
        let stride = cfg.stride();
        let n = cfg.fft_size;
        let mut twiddles = Vec::with_capacity(cfg.r * cfg.v);
        for b in 0..cfg.r {
            for m in 0..cfg.v {
                // Reduce the exponent modulo n to keep the angle small.
                let idx = (b * stride * m) % n;
                let angle = -2.0 * PI * idx as f64 / n as f64;
                twiddles.push(Complex64::new(angle.cos(), angle.sin()));
            }
        }
        BinExtractor { v: cfg.v, twiddles }
    }

    pub fn apply(&self, taps: &TapVector, out: &mut [Complex64]) {
        for (b, slot) in out.iter_mut().enumerate() {
            let row = &self.twiddles[b * self.v..(b + 1) * self.v];
            *slot = row
                .iter()
                .zip(&taps.taps)
                .fold(Complex64::new(0.0, 0.0), |acc, (w, h)| acc + w * h);
        }
    }
}

/// Shannon rate `log2(1 + snr |gain|^2)` in bits/s/Hz.
pub fn achievable_rate(gain: Complex64, snr_db: f64) -> f64 {
    (db_to_linear(snr_db) * gain.norm_sqr()).ln_1p() / std::f64::consts::LN_2
}

fn aggregate_rate(gains: &[Complex64], snr_db: f64, agg: RateAgg) -> f64 {
    let rates = gains.iter().map(|&h| achievable_rate(h, snr_db));
    match agg {
        RateAgg::Mean => rates.sum::<f64>() / gains.len() as f64,
        RateAgg::Min => rates.fold(f64::INFINITY, f64::min),
    }
}

fn labels(rates: &[f64], gamma_th: f64) -> (Vec<u8>, Vec<u8>) {
    let y: Vec<u8> = rates.iter().map(|&c| u8::from(c < gamma_th)).collect();
    let g = y.iter().map(|&v| 1 - v).collect();
    (y, g)
}

/// Simulates `k + l` samples from a fresh tap draw.
pub fn generate_realization(cfg: &SimConfig, stream: &mut RngStream) -> ChannelRealization {
    generate_realization_with(cfg, &BinExtractor::new(cfg), stream)
}

pub fn generate_realization_with(
    cfg: &SimConfig,
    bins: &BinExtractor,
    stream: &mut RngStream,
) -> ChannelRealization {
    let mut taps = generate_taps(cfg, stream);
    let mut past = vec![Vec::with_capacity(cfg.k); cfg.r];
    let mut future_gains = vec![Vec::with_capacity(cfg.l); cfg.r];
    let mut gains = vec![Complex64::new(0.0, 0.0); cfg.r];
    for t in 0..cfg.k + cfg.l {
        if t > 0 {
            taps = evolve_taps(&taps, cfg.delta, stream);
        }
        bins.apply(&taps, &mut gains);
        if t < cfg.k {
            for (seq, h) in past.iter_mut().zip(&gains) {
                seq.push(h.norm());
            }
        } else {
            for (seq, &h) in future_gains.iter_mut().zip(&gains) {
                seq.push(h);
            }
        }
    }
    let rates: Vec<f64> = future_gains
        .iter()
        .map(|g| aggregate_rate(g, cfg.snr_db, cfg.rate_agg))
        .collect();
    let (y, g) = labels(&rates, cfg.gamma_th);
    ChannelRealization {
        past,
        future_gains,
        rates,
        y,
        g,
    }
}

/// Writes `realization_id,resource_id,C_i,y_i` rows.
/// Streams `(realization_id, resource_id, C_i, y_i)` rows; realizations may
/// be generated lazily.
pub fn write_realizations_csv<W, I>(out: W, realizations: I) -> Result<()>
where
    W: Write,
    I: IntoIterator,
    I::Item: std::borrow::Borrow<ChannelRealization>,
{
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["realization_id", "resource_id", "C_i", "y_i"])?;
    for (n, real) in realizations.into_iter().enumerate() {
        let real = std::borrow::Borrow::<ChannelRealization>::borrow(&real);
        for (i, (&c, &y)) in real.rates.iter().zip(&real.y).enumerate() {
            w.write_record([
                n.to_string(),
                i.to_string(),
                crate::experiment::format_sig6(c),
                y.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_stream, StreamPurpose};

    fn stream(batch: u64) -> RngStream {
        derive_stream(StreamPurpose::Aux, 11, 0, 0, batch)
    }

    #[test]
    fn taps_are_deterministic() {
        let cfg = SimConfig::default();
        assert_eq!(
            generate_taps(&cfg, &mut stream(0)),
            generate_taps(&cfg, &mut stream(0))
        );
        assert_eq!(generate_taps(&cfg, &mut stream(0)).taps.len(), 32);
    }

    #[test]
    fn zero_delta_is_identity() {
        let cfg = SimConfig::default();
        let taps = generate_taps(&cfg, &mut stream(1));
        let out = evolve_taps(&taps, 0.0, &mut stream(2));
        assert_eq!(taps, out);
    }

    #[test]
    fn evolution_preserves_modulus() {
        let cfg = SimConfig::default();
        let taps = generate_taps(&cfg, &mut stream(3));
        let out = evolve_taps(&taps, 0.7, &mut stream(4));
        for (a, b) in taps.taps.iter().zip(&out.taps) {
            assert!((a.norm() - b.norm()).abs() <= 4.0 * f64::EPSILON * a.norm());
        }
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let cfg = SimConfig::default();
        let mut taps = vec![Complex64::new(0.0, 0.0); cfg.v];
        taps[0] = Complex64::new(1.0, 0.0);
        let h = frequency_response(&TapVector { taps }, &cfg);
        assert_eq!(h.len(), 16);
        for z in h {
            assert!((z - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn delayed_impulse_obeys_shift_theorem() {
        let cfg = SimConfig::default();
        let mut taps = vec![Complex64::new(0.0, 0.0); cfg.v];
        taps[1] = Complex64::new(1.0, 0.0);
        let h = frequency_response(&TapVector { taps }, &cfg);
        for (b, z) in h.iter().enumerate() {
            let angle = -2.0 * PI * (4 * b) as f64 / 64.0;
            let want = Complex64::new(angle.cos(), angle.sin());
            assert!((z - want).norm() < 1e-13, "bin {b}: {z} vs {want}");
        }
    }

    #[test]
    fn parseval_holds() {
        let cfg = SimConfig::default();
        for s in 0..20 {
            let taps = generate_taps(&cfg, &mut stream(100 + s));
            let spec = full_spectrum(&taps, cfg.fft_size);
            let freq: f64 = spec.iter().map(|z| z.norm_sqr()).sum::<f64>() / cfg.fft_size as f64;
            assert!((freq - taps.power()).abs() < 1e-10);
        }
    }

    #[test]
    fn bin_extractor_matches_fft() {
        let cfg = SimConfig::default();
        let bins = BinExtractor::new(&cfg);
        for s in 0..20 {
            let taps = generate_taps(&cfg, &mut stream(200 + s));
            let fft = frequency_response(&taps, &cfg);
            let mut direct = vec![Complex64::new(0.0, 0.0); cfg.r];
            bins.apply(&taps, &mut direct);
            for (a, b) in fft.iter().zip(&direct) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn rate_examples() {
        assert_eq!(achievable_rate(Complex64::new(0.0, 0.0), 7.0), 0.0);
        assert!((achievable_rate(Complex64::new(1.0, 0.0), 0.0) - 1.0).abs() < 1e-15);
        // |g|^2 = 2^1.2 - 1 gives exactly 1.2 bits/s/Hz.
        let g2 = 2f64.powf(1.2) - 1.0;
        assert!((g2 - 1.297_396_709_994_07).abs() < 1e-13);
        assert!((achievable_rate(Complex64::new(g2.sqrt(), 0.0), 0.0) - 1.2).abs() < 1e-14);
        // The four-digit value 1.2968 lands within 1e-3 of the threshold.
        assert!((achievable_rate(Complex64::new(1.2968f64.sqrt(), 0.0), 0.0) - 1.2).abs() < 1e-3);
    }

    #[test]
    fn extreme_thresholds() {
        let mut cfg = SimConfig::default();
        cfg.gamma_th = 0.0;
        let real = generate_realization(&cfg, &mut stream(5));
        assert!(real.g.iter().all(|&g| g == 1));
        cfg.gamma_th = 1e6;
        let real = generate_realization(&cfg, &mut stream(5));
        assert!(real.y.iter().all(|&y| y == 1));
    }

    #[test]
    fn realization_shapes_and_labels() {
        let cfg = SimConfig::default();
        let real = generate_realization(&cfg, &mut stream(6));
        assert_eq!(real.past.len(), 16);
        assert!(real.past.iter().all(|p| p.len() == 100 && p.iter().all(|&m| m >= 0.0)));
        assert!(real.future_gains.iter().all(|f| f.len() == 10));
        for i in 0..16 {
            assert_eq!(real.y[i] + real.g[i], 1);
            assert_eq!(real.y[i] == 1, real.rates[i] < cfg.gamma_th);
        }
    }

    #[test]
    fn relabel_matches_regeneration() {
        let cfg = SimConfig::default();
        let real = generate_realization(&cfg, &mut stream(7));
        let mut low = cfg.clone();
        low.snr_db = -3.0;
        low.gamma_th = 1.0;
        let regenerated = generate_realization(&low, &mut stream(7));
        let relabeled = real.relabel(-3.0, 1.0, RateAgg::Mean);
        assert_eq!(regenerated, relabeled);
    }

    #[test]
    fn min_aggregation_is_not_above_mean() {
        let mut cfg = SimConfig::default();
        let mean = generate_realization(&cfg, &mut stream(8));
        cfg.rate_agg = RateAgg::Min;
        let min = generate_realization(&cfg, &mut stream(8));
        for (a, b) in mean.rates.iter().zip(&min.rates) {
            assert!(b <= a);
        }
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::default().validate().is_ok());
        let bad = SimConfig {
            fft_size: 60,
            ..SimConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SimConfig {
            fft_size: 16,
            ..SimConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SimConfig {
            delta: -0.1,
            ..SimConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn csv_dump_has_one_row_per_resource() {
        let cfg = SimConfig::default();
        let reals: Vec<_> = (0..2).map(|s| generate_realization(&cfg, &mut stream(s))).collect();
        let mut buf = Vec::new();
        write_realizations_csv(&mut buf, &reals).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("realization_id,resource_id,C_i,y_i\n"));
        assert_eq!(text.lines().count(), 1 + 32);
    }
}
