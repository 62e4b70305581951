//! Integer-factor decimation to 125 Hz behind a linear-phase FIR low-pass.
//!
//! The filter is a Hamming-windowed sinc of order `20 * factor` with its
//! cutoff at the output Nyquist frequency, normalised to unit DC gain. It is
//! applied zero-phase (centred on each output sample) with mirror extension
//! at both ends, so constant inputs stay exactly constant.

use ndarray::{Array2, ArrayView1};

use super::{EcgRecord, TARGET_RATE_HZ};
use crate::error::{Error, Result};

/// Low-pass taps for decimation by `factor`.
pub fn antialias_taps(factor: usize) -> Vec<f64> {
    let order = 20 * factor;
    let numtaps = order + 1;
    let cutoff = 1.0 / factor as f64;
    let centre = order as f64 / 2.0;
    let mut taps: Vec<f64> = (0..numtaps)
        .map(|n| {
            // evaluate on the lower half and mirror, so the taps are exactly symmetric
            let n = n.min(order - n);
            let m = n as f64 - centre;
            let window = 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / order as f64).cos();
            cutoff * sinc(cutoff * m) * window
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Whole-sample mirror about the end points (`x[-1] = x[1]`).
#[inline]
fn mirror(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

/// Filters and decimates one channel by `factor`.
pub fn decimate(signal: ArrayView1<'_, f64>, factor: usize, taps: &[f64]) -> Vec<f64> {
    let n = signal.len();
    let half = (taps.len() / 2) as isize;
    let out_len = n / factor;
    (0..out_len)
        .map(|m| {
            let centre = (m * factor) as isize;
            taps.iter()
                .enumerate()
                .map(|(k, h)| h * signal[mirror(centre + half - k as isize, n)])
                .sum()
        })
        .collect()
}

/// Resamples a 500 Hz or 1000 Hz record (any integer multiple of 125 Hz) to
/// 125 Hz. Output length is `floor(n * 125 / rate)`.
pub fn resample_to_125hz(record: &EcgRecord) -> Result<EcgRecord> {
    let rate = record.sampling_rate_hz;
    if rate == 0 || !rate.is_multiple_of(TARGET_RATE_HZ) {
        return Err(Error::UnsupportedRate {
            rate,
            target: TARGET_RATE_HZ,
        });
    }
    let factor = (rate / TARGET_RATE_HZ) as usize;
    if factor == 1 {
        return Ok(record.clone());
    }
    let taps = antialias_taps(factor);
    let out_len = record.num_samples() / factor;
    let mut signals = Array2::<f64>::zeros((record.signals.nrows(), out_len));
    for (src, mut dst) in record.signals.rows().into_iter().zip(signals.rows_mut()) {
        let y = decimate(src, factor, &taps);
        dst.iter_mut().zip(y).for_each(|(d, v)| *d = v);
    }
    Ok(EcgRecord {
        record_id: record.record_id.clone(),
        signals,
        sampling_rate_hz: TARGET_RATE_HZ,
        patient_id: record.patient_id.clone(),
        metadata: record.metadata.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leads::NUM_LEADS;
    use std::collections::BTreeMap;

    fn record(rate: u32, f: impl Fn(usize, usize) -> f64, n: usize) -> EcgRecord {
        EcgRecord {
            record_id: "r".into(),
            signals: Array2::from_shape_fn((NUM_LEADS, n), |(c, t)| f(c, t)),
            sampling_rate_hz: rate,
            patient_id: "p".into(),
            metadata: BTreeMap::new(),
        }
    }

    #[test]
    fn taps_match_reference_window_design() {
        // Reference values from scipy.signal.firwin(20q+1, 1/q, window="hamming").
        let h4 = antialias_taps(4);
        assert_eq!(h4.len(), 81);
        for (i, want) in [
            (1, -0.00047056246877286574),
            (37, 0.07417966656407535),
            (40, 0.2503607251133771),
            (41, 0.22508421712191565),
        ] {
            assert!((h4[i] - want).abs() < 1e-14, "tap {i}: {} vs {want}", h4[i]);
        }
        let h8 = antialias_taps(8);
        assert_eq!(h8.len(), 161);
        for (i, want) in [(1, -0.0001240873011458115), (80, 0.1251882814502478), (81, 0.12195213434536663)] {
            assert!((h8[i] - want).abs() < 1e-14);
        }
        for h in [&h4, &h8] {
            let n = h.len();
            assert!((0..n).all(|i| h[i] == h[n - 1 - i]), "linear phase");
        }
    }

    #[test]
    fn lengths_follow_floor_rule() {
        let r = record(500, |_, _| 0.0, 5000);
        assert_eq!(resample_to_125hz(&r).unwrap().signals.dim(), (12, 1250));
        let r = record(1000, |_, _| 0.0, 30_007);
        let out = resample_to_125hz(&r).unwrap();
        assert_eq!(out.signals.dim(), (12, 3750));
        assert_eq!(out.sampling_rate_hz, 125);
    }

    #[test]
    fn constants_are_preserved() {
        for rate in [500, 1000] {
            let r = record(rate, |c, _| 0.37 * c as f64 - 1.1, 4000);
            let out = resample_to_125hz(&r).unwrap();
            for ((c, _), v) in out.signals.indexed_iter() {
                assert!((v - (0.37 * c as f64 - 1.1)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn ten_hz_sine_passes_unchanged() {
        // Analytic oracle: sin(2π·10·t) sampled on the 125 Hz grid.
        let r = record(500, |_, t| (2.0 * std::f64::consts::PI * 10.0 * t as f64 / 500.0).sin(), 5000);
        let out = resample_to_125hz(&r).unwrap();
        let edge = (0.2 * 125.0) as usize;
        let n = out.num_samples();
        let mut worst = 0.0f64;
        for m in edge..n - edge {
            let want = (2.0 * std::f64::consts::PI * 10.0 * m as f64 / 125.0).sin();
            worst = worst.max((out.signals[[0, m]] - want).abs());
        }
        assert!(worst < 1e-2, "max error {worst}");
    }

    #[test]
    fn high_frequency_is_suppressed() {
        // 100 Hz is above the 62.5 Hz output Nyquist and must not alias through.
        let r = record(500, |_, t| (2.0 * std::f64::consts::PI * 100.0 * t as f64 / 500.0).sin(), 5000);
        let out = resample_to_125hz(&r).unwrap();
        let peak = out.signals.row(0).iter().skip(30).take(1000).fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(peak < 0.01, "aliased amplitude {peak}");
    }

    #[test]
    fn rejects_non_multiple_rates() {
        assert!(matches!(
            resample_to_125hz(&record(360, |_, _| 0.0, 100)),
            Err(Error::UnsupportedRate { rate: 360, .. })
        ));
        let same = record(125, |_, t| t as f64, 10);
        assert_eq!(resample_to_125hz(&same).unwrap(), same);
    }

    #[test]
    fn mirror_indexing() {
        assert_eq!(mirror(-1, 5), 1);
        assert_eq!(mirror(5, 5), 3);
        assert_eq!(mirror(-9, 5), 1);
        assert_eq!(mirror(3, 1), 0);
    }
}
