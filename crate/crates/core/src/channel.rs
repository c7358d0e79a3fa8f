//! Vehicular link model: WINNER+ B1 LOS path loss, log-normal shadowing with
//! exponential spatial correlation, first-order Gauss-Markov small-scale
//! fading, Shannon rate and the per-slot grid budget.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Distances below this are clamped before evaluating the path loss.
pub const MIN_DISTANCE_M: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    pub carrier_freq_hz: f64,
    pub bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    pub noise_psd_dbm_hz: f64,
    pub noise_figure_db: f64,
    pub antenna_gain_dbi: f64,
    pub subslot_duration_s: f64,
    pub subslots_per_slot: usize,
    pub grid_payload_bits: f64,
    pub shadow_sigma_db: f64,
    pub decorrelation_dist_m: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            carrier_freq_hz: 5.9e9,
            bandwidth_hz: 300e3,
            tx_power_dbm: 23.0,
            noise_psd_dbm_hz: -174.0,
            noise_figure_db: 9.0,
            antenna_gain_dbi: 3.0,
            subslot_duration_s: 1e-3,
            subslots_per_slot: 5,
            grid_payload_bits: 512.0,
            shadow_sigma_db: 3.0,
            decorrelation_dist_m: 10.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        // A zero bandwidth is allowed: it models a link that carries nothing.
        if !(self.bandwidth_hz >= 0.0) || !self.bandwidth_hz.is_finite() {
            return Err(Error::config("channel.bandwidth_hz must be finite and >= 0"));
        }
        if self.subslots_per_slot == 0 {
            return Err(Error::config("channel.subslots_per_slot must be >= 1"));
        }
        if !(self.grid_payload_bits > 0.0) {
            return Err(Error::config("channel.grid_payload_bits must be > 0"));
        }
        if !(self.subslot_duration_s > 0.0) {
            return Err(Error::config("channel.subslot_duration_s must be > 0"));
        }
        if !(self.carrier_freq_hz > 0.0) {
            return Err(Error::config("channel.carrier_freq_hz must be > 0"));
        }
        if !(self.shadow_sigma_db >= 0.0) || !(self.decorrelation_dist_m > 0.0) {
            return Err(Error::config(
                "channel.shadow_sigma_db must be >= 0 and decorrelation_dist_m > 0",
            ));
        }
        Ok(())
    }

    /// Linear SNR per unit of channel power gain at the configured bandwidth.
    fn snr_per_gain(&self) -> f64 {
        let budget_db = self.tx_power_dbm + 2.0 * self.antenna_gain_dbi
            - self.noise_figure_db
            - self.noise_psd_dbm_hz;
        db_to_linear(budget_db) / self.bandwidth_hz
    }

    /// Received SNR in dB for a given power gain.
    pub fn snr_db(&self, gain: f64) -> f64 {
        10.0 * (self.snr_per_gain() * gain).log10()
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// WINNER+ B1 line-of-sight path loss in dB (distance clamped to 3 m).
pub fn path_loss_db(distance_m: f64, carrier_freq_hz: f64) -> f64 {
    let d = distance_m.max(MIN_DISTANCE_M);
    22.7 * d.log10() + 41.0 + 20.0 * (carrier_freq_hz / 1e9 / 5.0).log10()
}

/// One update of the exponentially correlated shadowing process after the
/// terminal moved `moved_dist_m`. An infinite move gives a fresh draw.
pub fn shadowing_step<R: Rng + ?Sized>(
    prev_shadow_db: f64,
    moved_dist_m: f64,
    sigma_db: f64,
    decorrelation_dist_m: f64,
    rng: &mut R,
) -> f64 {
    let rho = (-moved_dist_m.abs() / decorrelation_dist_m).exp();
    if rho >= 1.0 {
        return prev_shadow_db;
    }
    let z: f64 = rng.sample(StandardNormal);
    rho * prev_shadow_db + (1.0 - rho * rho).sqrt() * sigma_db * z
}

/// Zeroth-order Bessel function of the first kind.
///
/// Power series up to |x| = 12, Hankel asymptotic expansion beyond.
pub fn bessel_j0(x: f64) -> f64 {
    let x = x.abs();
    if x <= 12.0 {
        let q = -0.25 * x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        loop {
            term *= q / (k * k);
            sum += term;
            if term.abs() < 1e-17 * sum.abs().max(1e-300) && k > x {
                break;
            }
            k += 1.0;
            if k > 200.0 {
                break;
            }
        }
        sum
    } else {
        // a_k = prod_{i=1..k} (2i-1)^2 / (k! 8^k)
        let mut p = 0.0;
        let mut q = 0.0;
        let mut a = 1.0;
        let mut prev = f64::INFINITY;
        for k in 0..60 {
            let t = a / x.powi(k);
            if t > prev || t < 1e-18 {
                break;
            }
            prev = t;
            let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
            if k % 2 == 0 {
                p += sign * t;
            } else {
                q -= sign * t;
            }
            let next = (2 * k + 1) as f64;
            a *= next * next / (8.0 * (k + 1) as f64);
        }
        let chi = x - std::f64::consts::FRAC_PI_4;
        (2.0 / (std::f64::consts::PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
    }
}

/// Lag-one correlation of the small-scale fading, `J0(2π v f_c Δt / c)`.
pub fn fading_correlation(v_rel_mps: f64, carrier_freq_hz: f64, dt_s: f64) -> f64 {
    let arg = 2.0 * std::f64::consts::PI * v_rel_mps.abs() * carrier_freq_hz * dt_s / SPEED_OF_LIGHT;
    bessel_j0(arg)
}

/// Circularly-symmetric complex normal draw with the given total variance.
pub fn sample_cn<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// `h = μ h_prev + e`, `e ~ CN(0, 1 - μ²)`.
pub fn fading_step<R: Rng + ?Sized>(h_prev: Complex64, mu: f64, rng: &mut R) -> Complex64 {
    let var = (1.0 - mu * mu).max(0.0);
    if var == 0.0 {
        return h_prev * mu;
    }
    h_prev * mu + sample_cn(rng, var)
}

/// Shannon rate in bit/s for a linear power gain `g` (path loss, shadowing
/// and fading all folded into `g`).
pub fn instantaneous_rate_bps(params: &ChannelParams, gain: f64) -> f64 {
    let w = params.bandwidth_hz;
    if w <= 0.0 || gain <= 0.0 {
        return 0.0;
    }
    w * (1.0 + params.snr_per_gain() * gain).log2()
}

/// Number of whole grids deliverable from per-sub-slot rates. Bits are
/// accumulated over the slot and floored once.
pub fn grid_budget(rates_bps: &[f64], dt_s: f64, payload_bits: f64) -> usize {
    let bits: f64 = rates_bps.iter().map(|r| r.max(0.0) * dt_s).sum();
    // Relative slack keeps exact multiples of the payload from flooring down.
    (bits / payload_bits * (1.0 + 1e-12)).floor() as usize
}

/// State of one collaborator → ego link.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkChannel {
    pub alpha_linear: f64,
    pub shadow_db: f64,
    pub path_loss_db: f64,
    pub h: Complex64,
    pub mu: f64,
    pub rel_speed_mps: f64,
}

impl LinkChannel {
    /// Fresh link: independent shadowing draw and `h ~ CN(0, 1)`.
    pub fn new<R: Rng + ?Sized>(
        params: &ChannelParams,
        distance_m: f64,
        rel_speed_mps: f64,
        rng: &mut R,
    ) -> Self {
        let shadow_db = shadowing_step(
            0.0,
            f64::INFINITY,
            params.shadow_sigma_db,
            params.decorrelation_dist_m,
            rng,
        );
        let pl = path_loss_db(distance_m, params.carrier_freq_hz);
        Self {
            alpha_linear: db_to_linear(-(pl + shadow_db)),
            shadow_db,
            path_loss_db: pl,
            h: sample_cn(rng, 1.0),
            mu: fading_correlation(rel_speed_mps, params.carrier_freq_hz, params.subslot_duration_s),
            rel_speed_mps,
        }
    }

    /// Large-scale update after the terminals moved: correlated shadowing and
    /// new path loss; the small-scale state carries over.
    pub fn update_large_scale<R: Rng + ?Sized>(
        &mut self,
        params: &ChannelParams,
        distance_m: f64,
        moved_dist_m: f64,
        rel_speed_mps: f64,
        rng: &mut R,
    ) {
        self.shadow_db = shadowing_step(
            self.shadow_db,
            moved_dist_m,
            params.shadow_sigma_db,
            params.decorrelation_dist_m,
            rng,
        );
        self.path_loss_db = path_loss_db(distance_m, params.carrier_freq_hz);
        self.alpha_linear = db_to_linear(-(self.path_loss_db + self.shadow_db));
        self.rel_speed_mps = rel_speed_mps;
        self.mu = fading_correlation(rel_speed_mps, params.carrier_freq_hz, params.subslot_duration_s);
    }

    pub fn alpha_db(&self) -> f64 {
        linear_to_db(self.alpha_linear)
    }

    pub fn gain(&self) -> f64 {
        self.alpha_linear * self.h.norm_sqr()
    }

    pub fn rate_bps(&self, params: &ChannelParams) -> f64 {
        instantaneous_rate_bps(params, self.gain())
    }

    pub fn advance<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.h = fading_step(self.h, self.mu, rng);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    /// J0 by the integral representation (1/π)∫₀^π cos(x sin θ) dθ; the
    /// integrand is smooth and periodic so the midpoint rule converges fast.
    fn j0_quadrature(x: f64) -> f64 {
        let n = 4000;
        let h = std::f64::consts::PI / n as f64;
        (0..n)
            .map(|i| (x * ((i as f64 + 0.5) * h).sin()).cos())
            .sum::<f64>()
            * h
            / std::f64::consts::PI
    }

    #[test]
    fn path_loss_examples() {
        assert!((path_loss_db(10.0, 5e9) - 63.7).abs() < 1e-12);
        let expected = 22.7 * 2.0 + 41.0 + 20.0 * (1.18f64).log10();
        assert!((path_loss_db(100.0, 5.9e9) - expected).abs() < 1e-12);
        assert!((path_loss_db(100.0, 5.9e9) - 87.8376).abs() < 1e-3);
        assert_eq!(path_loss_db(1.0, 5.9e9), path_loss_db(3.0, 5.9e9));
    }

    #[test]
    fn j0_matches_quadrature_oracle() {
        for i in 0..=300 {
            let x = i as f64 * 0.1;
            let got = bessel_j0(x);
            let want = j0_quadrature(x);
            assert!((got - want).abs() < 1e-8, "x={x} got={got} want={want}");
        }
        assert_eq!(bessel_j0(0.0), 1.0);
        assert!(bessel_j0(2.404_825_557_695_773).abs() < 1e-12);
    }

    #[test]
    fn correlation_at_table_speed() {
        let v = 25.0 / 3.6;
        let arg = 2.0 * std::f64::consts::PI * v * 5.9e9 * 1e-3 / SPEED_OF_LIGHT;
        assert!((arg - 0.8586).abs() < 1e-3);
        let mu = fading_correlation(v, 5.9e9, 1e-3);
        assert!((mu - j0_quadrature(arg)).abs() < 1e-10);
        assert!((mu - 0.8241).abs() < 1e-3);
        assert_eq!(fading_correlation(0.0, 5.9e9, 1e-3), 1.0);
    }

    #[test]
    fn shadowing_edges() {
        let mut rng = stream(1, "t", 0);
        assert_eq!(shadowing_step(2.5, 0.0, 3.0, 10.0, &mut rng), 2.5);
        // ρ = 0: output independent of prev
        let mut a = stream(1, "t", 1);
        let mut b = stream(1, "t", 1);
        let x = shadowing_step(100.0, f64::INFINITY, 3.0, 10.0, &mut a);
        let y = shadowing_step(-100.0, f64::INFINITY, 3.0, 10.0, &mut b);
        assert_eq!(x, y);
    }

    #[test]
    fn fading_edges() {
        let mut rng = stream(1, "f", 0);
        let h = Complex64::new(0.3, -0.7);
        assert_eq!(fading_step(h, 1.0, &mut rng), h);
        let mut a = stream(1, "f", 1);
        let mut b = stream(1, "f", 1);
        assert_eq!(fading_step(h, 0.0, &mut a), fading_step(-h, 0.0, &mut b));
    }

    #[test]
    fn rate_examples() {
        let mut p = ChannelParams::default();
        assert_eq!(instantaneous_rate_bps(&p, 0.0), 0.0);
        let unit_snr_gain = 1.0 / p.snr_per_gain();
        let r = instantaneous_rate_bps(&p, unit_snr_gain);
        assert!((r - p.bandwidth_hz).abs() / p.bandwidth_hz < 1e-9);
        let g20 = 100.0 / p.snr_per_gain();
        let r = instantaneous_rate_bps(&p, g20);
        assert!((r - 3e5 * 101f64.log2()).abs() / r < 1e-9);
        assert!((r - 1.997e6).abs() < 1e3);
        p.bandwidth_hz = 0.0;
        assert_eq!(instantaneous_rate_bps(&p, 1.0), 0.0);
    }

    #[test]
    fn budget_examples() {
        let d = 512.0;
        let dt = 1e-3;
        assert_eq!(grid_budget(&[d / dt; 5], dt, d), 5);
        assert_eq!(grid_budget(&[0.0; 5], dt, d), 0);
        let r = 3.0 * d / dt * 0.4;
        assert_eq!(grid_budget(&[r, r], dt, d), 2);
        assert_eq!(grid_budget(&[], dt, d), 0);
    }

    #[test]
    fn link_is_reproducible() {
        let p = ChannelParams::default();
        let run = || {
            let mut rng = stream(9, "link", 0);
            let mut l = LinkChannel::new(&p, 40.0, 5.0, &mut rng);
            (0..50).map(|_| {
                l.advance(&mut rng);
                l.h
            }).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn validate_rejects_bad_params() {
        let mut p = ChannelParams::default();
        assert!(p.validate().is_ok());
        p.subslots_per_slot = 0;
        assert!(p.validate().is_err());
        let p = ChannelParams {
            grid_payload_bits: 0.0,
            ..ChannelParams::default()
        };
        assert!(p.validate().is_err());
        let p = ChannelParams {
            bandwidth_hz: -1.0,
            ..ChannelParams::default()
        };
        assert!(p.validate().is_err());
    }
}
