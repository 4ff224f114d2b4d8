//! Learnable sinc band-pass filter bank.
//!
//! Each filter is the Hamming-windowed difference of two sinc low-pass
//! responses with learnable cutoffs, normalized so the center tap is 1:
//!
//! ```text
//! raw(n) = (sin(2π f2 n/sr) − sin(2π f1 n/sr)) / (π n/sr),  raw(0) = 2(f2−f1)
//! k(n)   = raw(n) · w(n) / (2(f2−f1))
//! ```
//!
//! Cutoffs derive from the learnable `low_hz`/`band_hz` via absolute values
//! and clamping, so every effective band satisfies
//! `min_low_hz ≤ f1 < f2 ≤ Nyquist`. Taps are computed for one half and
//! mirrored, which makes the even symmetry bit-exact.

use std::sync::Arc;

use crate::numerics::graph::{CustomOp, Graph, NodeId};
use crate::numerics::{el, Element, Tensor};
use crate::params::{Binder, Initializer, ParamId, ParamStore};
use crate::Result;

pub const NUM_FILTERS: usize = 70;
pub const KERNEL_LEN: usize = 129;
pub const SAMPLE_RATE: f64 = 16_000.0;
pub const MIN_LOW_HZ: f64 = 0.0;
pub const MIN_BAND_HZ: f64 = 50.0;

fn nyquist() -> f64 {
    SAMPLE_RATE / 2.0
}

/// Effective band edges after the clamping contract, with the local
/// derivative flags (zero where a clamp is active).
fn band_edges(low: f64, band: f64) -> (f64, f64, f64, f64, f64) {
    let f1_raw = MIN_LOW_HZ + low.abs();
    let f1_hi = nyquist() - MIN_BAND_HZ;
    let (f1, df1_dlow) = if f1_raw > f1_hi {
        (f1_hi, 0.0)
    } else {
        (f1_raw, low.signum())
    };
    let f2_raw = f1 + MIN_BAND_HZ + band.abs();
    let (f2, df2_df1, df2_dband) = if f2_raw > nyquist() {
        (nyquist(), 0.0, 0.0)
    } else {
        (f2_raw, 1.0, band.signum())
    };
    (f1, f2, df1_dlow, df2_df1, df2_dband)
}

/// Hamming window value at tap j (symmetric form).
fn hamming(j: usize) -> f64 {
    0.54 - 0.46 * (2.0 * std::f64::consts::PI * j as f64 / (KERNEL_LEN - 1) as f64).cos()
}

/// Materialize all filter taps; layout (NUM_FILTERS, 1, KERNEL_LEN).
pub fn kernels_forward<T: Element>(low_hz: &[T], band_hz: &[T]) -> Vec<T> {
    let c = (KERNEL_LEN - 1) / 2;
    let mut out = vec![T::zero(); NUM_FILTERS * KERNEL_LEN];
    for fi in 0..NUM_FILTERS {
        let (f1, f2, ..) = band_edges(
            low_hz[fi].to_f64().unwrap(),
            band_hz[fi].to_f64().unwrap(),
        );
        let norm = 2.0 * (f2 - f1);
        let row = &mut out[fi * KERNEL_LEN..(fi + 1) * KERNEL_LEN];
        row[c] = el(1.0); // 2(f2−f1)·w(c)/norm with w(c) = 1
        for n in 1..=c {
            let t = n as f64 / SAMPLE_RATE;
            let raw = ((2.0 * std::f64::consts::PI * f2 * t).sin()
                - (2.0 * std::f64::consts::PI * f1 * t).sin())
                / (std::f64::consts::PI * t);
            let v = el::<T>(raw * hamming(c - n) / norm);
            row[c - n] = v;
            row[c + n] = v;
        }
    }
    out
}

/// Gradients of a tap-space gradient back onto (low_hz, band_hz).
pub fn kernels_backward<T: Element>(
    low_hz: &[T],
    band_hz: &[T],
    grad: &[T],
) -> (Vec<T>, Vec<T>) {
    let c = (KERNEL_LEN - 1) / 2;
    let mut glow = vec![T::zero(); NUM_FILTERS];
    let mut gband = vec![T::zero(); NUM_FILTERS];
    for fi in 0..NUM_FILTERS {
        let low = low_hz[fi].to_f64().unwrap();
        let band = band_hz[fi].to_f64().unwrap();
        let (f1, f2, df1_dlow, df2_df1, df2_dband) = band_edges(low, band);
        let bw = f2 - f1;
        let norm = 2.0 * bw;
        let grow = &grad[fi * KERNEL_LEN..(fi + 1) * KERNEL_LEN];
        let mut acc_f1 = 0.0f64;
        let mut acc_f2 = 0.0f64;
        // center tap: k = 2(f2−f1)·1/norm ≡ 1, locally constant in (f1, f2)
        // only through the cancellation; its true derivative is zero.
        for n in 1..=c {
            let t = n as f64 / SAMPLE_RATE;
            let w = hamming(c - n);
            let raw = ((2.0 * std::f64::consts::PI * f2 * t).sin()
                - (2.0 * std::f64::consts::PI * f1 * t).sin())
                / (std::f64::consts::PI * t);
            let k = raw * w / norm;
            let draw_df2 = 2.0 * (2.0 * std::f64::consts::PI * f2 * t).cos();
            let draw_df1 = -2.0 * (2.0 * std::f64::consts::PI * f1 * t).cos();
            let dk_df2 = draw_df2 * w / norm - k / bw;
            let dk_df1 = draw_df1 * w / norm + k / bw;
            let gsum = grow[c - n].to_f64().unwrap() + grow[c + n].to_f64().unwrap();
            acc_f1 += gsum * dk_df1;
            acc_f2 += gsum * dk_df2;
        }
        let dlow = (acc_f1 + acc_f2 * df2_df1) * df1_dlow;
        let dband = acc_f2 * df2_dband;
        glow[fi] = el(dlow);
        gband[fi] = el(dband);
    }
    (glow, gband)
}

struct SincKernelsOp;

impl<T: Element> CustomOp<T> for SincKernelsOp {
    fn name(&self) -> &'static str {
        "sinc_kernels"
    }

    fn backward(
        &self,
        saved: &[Tensor<T>],
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let [low, band] = saved else {
            panic!("sinc_kernels saved-tensor arity");
        };
        let (glow, gband) = kernels_backward(low.data(), band.data(), grad.data());
        vec![
            needs[0].then(|| Tensor::from_vec(vec![NUM_FILTERS], glow)),
            needs[1].then(|| Tensor::from_vec(vec![NUM_FILTERS], gband)),
        ]
    }
}

/// Record kernel synthesis on the graph; output (NUM_FILTERS, 1, KERNEL_LEN).
pub fn kernels_node<T: Element>(
    g: &mut Graph<T>,
    low_hz: NodeId,
    band_hz: NodeId,
) -> Result<NodeId> {
    let data = kernels_forward(g.value(low_hz).data(), g.value(band_hz).data());
    let out = Tensor::from_vec(vec![NUM_FILTERS, 1, KERNEL_LEN], data);
    let saved = vec![g.value(low_hz).clone(), g.value(band_hz).clone()];
    g.custom(Arc::new(SincKernelsOp), &[low_hz, band_hz], saved, out)
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10.0f64.powf(m / 2595.0) - 1.0)
}

/// Cutoff initialization on the mel scale spanning 0–8 kHz.
pub fn mel_init_spans() -> (Vec<f64>, Vec<f64>) {
    let hi = hz_to_mel(nyquist());
    let pts: Vec<f64> = (0..=NUM_FILTERS)
        .map(|i| mel_to_hz(hi * i as f64 / NUM_FILTERS as f64))
        .collect();
    let low: Vec<f64> = pts[..NUM_FILTERS].to_vec();
    let band: Vec<f64> = (0..NUM_FILTERS).map(|i| pts[i + 1] - pts[i]).collect();
    (low, band)
}

/// Learnable filter-bank parameters.
#[derive(Clone, Debug)]
pub struct SincBankParams {
    pub low_hz: ParamId,
    pub band_hz: ParamId,
}

impl SincBankParams {
    pub fn init<T: Element>(store: &mut ParamStore<T>, _init: &mut Initializer, prefix: &str) -> Self {
        let (low, band) = mel_init_spans();
        let low_hz = store.add(
            format!("{prefix}.low_hz"),
            Tensor::from_vec(vec![NUM_FILTERS], low.iter().map(|&v| el::<T>(v)).collect()),
        );
        let band_hz = store.add(
            format!("{prefix}.band_hz"),
            Tensor::from_vec(vec![NUM_FILTERS], band.iter().map(|&v| el::<T>(v)).collect()),
        );
        SincBankParams { low_hz, band_hz }
    }

    pub fn kernels<T: Element>(
        &self,
        g: &mut Graph<T>,
        bind: &mut Binder,
        store: &ParamStore<T>,
    ) -> Result<NodeId> {
        let low = bind.node(g, store, self.low_hz);
        let band = bind.node(g, store, self.band_hz);
        kernels_node(g, low, band)
    }

    pub const fn param_count() -> usize {
        2 * NUM_FILTERS
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck;

    fn default_bank() -> (Vec<f64>, Vec<f64>) {
        mel_init_spans()
    }

    #[test]
    fn kernels_are_bit_exact_symmetric() {
        let (low, band) = default_bank();
        let k = kernels_forward(&low, &band);
        for fi in 0..NUM_FILTERS {
            let row = &k[fi * KERNEL_LEN..(fi + 1) * KERNEL_LEN];
            for j in 0..KERNEL_LEN {
                assert_eq!(row[j], row[KERNEL_LEN - 1 - j], "filter {fi} tap {j}");
            }
        }
    }

    #[test]
    fn dc_response_rejected_above_window_mainlobe() {
        // A 129-tap Hamming window smears the band edges by roughly
        // 4·sr/K ≈ 500 Hz; bands starting above that reject DC. The DC gain
        // is the plain tap sum; the peak gain is probed on a frequency grid.
        let (low, band) = default_bank();
        let k = kernels_forward(&low, &band);
        let mainlobe = 4.0 * SAMPLE_RATE / KERNEL_LEN as f64;
        let mut tested = 0;
        for fi in 0..NUM_FILTERS {
            let (f1, f2, ..) = band_edges(low[fi], band[fi]);
            if f1 < mainlobe {
                continue;
            }
            let row = &k[fi * KERNEL_LEN..(fi + 1) * KERNEL_LEN];
            let dc: f64 = row.iter().sum();
            // peak of |H| over the band and surroundings
            let mut peak = 0.0f64;
            let c = (KERNEL_LEN - 1) / 2;
            let mut f = 0.0;
            while f <= nyquist() {
                let (mut re, mut im) = (0.0f64, 0.0f64);
                for (j, &tap) in row.iter().enumerate() {
                    let ph = 2.0 * std::f64::consts::PI * f * (j as f64 - c as f64) / SAMPLE_RATE;
                    re += tap * ph.cos();
                    im += tap * ph.sin();
                }
                peak = peak.max((re * re + im * im).sqrt());
                f += (f2 - f1).max(20.0) / 8.0;
            }
            assert!(
                dc.abs() <= 1e-3 * peak,
                "filter {fi}: DC {dc:.3e} vs peak {peak:.3e}"
            );
            tested += 1;
        }
        assert!(tested > 30, "too few filters above the mainlobe: {tested}");
    }

    #[test]
    fn band_width_clamps_to_min_band() {
        // band_hz pushed below 0: |band| keeps the width ≥ MIN_BAND_HZ
        let (f1, f2, ..) = band_edges(100.0, -10.0);
        assert!(f2 - f1 >= MIN_BAND_HZ);
        let (f1, f2, ..) = band_edges(100.0, 0.0);
        assert!((f2 - f1 - MIN_BAND_HZ).abs() < 1e-12);
        // and the edges always respect min_low ≤ f1 < f2 ≤ Nyquist
        let (f1, f2, ..) = band_edges(1e9, 1e9);
        assert!(f1 >= MIN_LOW_HZ && f1 < f2 && f2 <= nyquist());
    }

    #[test]
    fn cutoff_gradients_match_finite_differences() {
        let (low, band) = default_bank();
        let inputs = [
            Tensor::from_vec(vec![NUM_FILTERS], low),
            Tensor::from_vec(vec![NUM_FILTERS], band),
        ];
        let chk = gradcheck::check("sinc_kernels", &inputs, |g, ids| {
            let k = kernels_node(g, ids[0], ids[1])?;
            let sq = g.mul(k, k)?;
            g.sum_all(sq)
        })
        .unwrap();
        assert!(chk.pass, "{}", chk.line());
    }

    #[test]
    fn mel_init_spans_cover_zero_to_nyquist() {
        let (low, band) = mel_init_spans();
        assert_eq!(low.len(), NUM_FILTERS);
        assert!(low[0].abs() < 1e-9);
        let top = low[NUM_FILTERS - 1] + band[NUM_FILTERS - 1];
        assert!((top - nyquist()).abs() < 1e-6);
        // mel spacing is monotone increasing in width
        assert!(band.windows(2).all(|w| w[1] > w[0]));
    }
}
