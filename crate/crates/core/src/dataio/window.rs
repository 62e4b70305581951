use ndarray::{s, Array2};

use super::{EcgRecord, SegmentWindow, TARGET_RATE_HZ, WINDOW_LEN};
use crate::error::{Error, Result};
use crate::leads::LeadLabel;

fn require_125hz(record: &EcgRecord) -> Result<()> {
    if record.sampling_rate_hz != TARGET_RATE_HZ {
        return Err(Error::UnsupportedRate {
            rate: record.sampling_rate_hz,
            target: TARGET_RATE_HZ,
        });
    }
    Ok(())
}

fn window_at(record: &EcgRecord, index: usize) -> SegmentWindow {
    let start = index * WINDOW_LEN;
    SegmentWindow {
        source_record_id: record.record_id.clone(),
        segment_index: index,
        signals: record
            .signals
            .slice(s![.., start..start + WINDOW_LEN])
            .mapv(|v| v as f32),
    }
}

/// The first 1024 samples of a 125 Hz record as a single window.
pub fn truncate_to_window(record: &EcgRecord) -> Result<SegmentWindow> {
    require_125hz(record)?;
    if record.num_samples() < WINDOW_LEN {
        return Err(Error::TooShort {
            record: record.record_id.clone(),
            samples: record.num_samples(),
            needed: WINDOW_LEN,
        });
    }
    Ok(window_at(record, 0))
}

/// Consecutive non-overlapping windows from sample 0; any remainder shorter
/// than a window is discarded.
pub fn segment_record(record: &EcgRecord) -> Result<Vec<SegmentWindow>> {
    require_125hz(record)?;
    Ok((0..record.num_samples() / WINDOW_LEN)
        .map(|i| window_at(record, i))
        .collect())
}

/// Rows of `window` for `leads`, in the order given.
pub fn select_leads(window: &SegmentWindow, leads: &[LeadLabel]) -> Result<Array2<f32>> {
    validate_lead_list(leads)?;
    let mut out = Array2::<f32>::zeros((leads.len(), window.signals.ncols()));
    for (mut row, lead) in out.rows_mut().into_iter().zip(leads) {
        row.assign(&window.signals.row(lead.index()));
    }
    Ok(out)
}

/// Checks that a lead list is non-empty and has no repeats.
pub fn validate_lead_list(leads: &[LeadLabel]) -> Result<()> {
    if leads.is_empty() {
        return Err(Error::InvalidLeadList("empty".into()));
    }
    for (i, a) in leads.iter().enumerate() {
        if leads[..i].contains(a) {
            return Err(Error::InvalidLeadList(format!("{a} appears twice")));
        }
    }
    Ok(())
}

/// `max_t |II(t) - (I(t) + III(t))|` in millivolts.
pub fn check_einthoven(record: &EcgRecord) -> f64 {
    let (i, ii, iii) = (
        record.lead(LeadLabel::I),
        record.lead(LeadLabel::II),
        record.lead(LeadLabel::III),
    );
    ii.iter()
        .zip(i.iter().zip(iii.iter()))
        .map(|(b, (a, c))| (b - (a + c)).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leads::NUM_LEADS;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn record(n: usize) -> EcgRecord {
        EcgRecord {
            record_id: "rec".into(),
            signals: Array2::from_shape_fn((NUM_LEADS, n), |(c, t)| (c * 10_000 + t) as f64 * 1e-3),
            sampling_rate_hz: 125,
            patient_id: "p".into(),
            metadata: BTreeMap::new(),
        }
    }

    #[test]
    fn truncate_takes_prefix() {
        let r = record(1250);
        let w = truncate_to_window(&r).unwrap();
        assert_eq!(w.signals.dim(), (12, 1024));
        assert_eq!(w.signals[[3, 1023]], r.signals[[3, 1023]] as f32);
        assert_eq!(w.segment_index, 0);
        let exact = record(1024);
        assert_eq!(
            truncate_to_window(&exact).unwrap().signals,
            exact.signals.mapv(|v| v as f32)
        );
        assert!(matches!(
            truncate_to_window(&record(1000)),
            Err(Error::TooShort { samples: 1000, .. })
        ));
    }

    #[test]
    fn segment_counts_and_offsets() {
        let w = segment_record(&record(3750)).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w[1].signals[[0, 0]], record(3750).signals[[0, 1024]] as f32);
        assert_eq!(w[2].signals[[0, 0]], record(3750).signals[[0, 2048]] as f32);
        assert!(segment_record(&record(1023)).unwrap().is_empty());
        let mut r = record(2048);
        r.sampling_rate_hz = 500;
        assert!(segment_record(&r).is_err());
    }

    proptest! {
        #[test]
        fn windows_concatenate_to_record_prefix(n in 0usize..5000) {
            let r = record(n);
            let w = segment_record(&r).unwrap();
            prop_assert_eq!(w.len(), n / 1024);
            for (k, win) in w.iter().enumerate() {
                prop_assert_eq!(win.segment_index, k);
                let expect = r.signals.slice(s![.., k * 1024..(k + 1) * 1024]).mapv(|v| v as f32);
                prop_assert_eq!(&win.signals, &expect);
            }
        }
    }

    #[test]
    fn select_leads_orders_rows() {
        let w = truncate_to_window(&record(1024)).unwrap();
        let x = select_leads(&w, &[LeadLabel::I, LeadLabel::II]).unwrap();
        assert_eq!(x.dim(), (2, 1024));
        let v = select_leads(&w, &LeadLabel::PRECORDIAL).unwrap();
        assert_eq!(v.dim(), (6, 1024));
        assert_eq!(v.row(0), w.signals.row(6));
        assert_eq!(v.row(5), w.signals.row(11));
        let rev = select_leads(&w, &[LeadLabel::V2, LeadLabel::I]).unwrap();
        assert_eq!(rev.row(0), w.signals.row(7));
        assert!(select_leads(&w, &[LeadLabel::I, LeadLabel::I]).is_err());
        assert!(select_leads(&w, &[]).is_err());
    }

    #[test]
    fn einthoven_residual() {
        let mut r = record(200);
        let (i, iii) = (r.signals.row(0).to_owned(), r.signals.row(2).to_owned());
        r.signals.row_mut(1).assign(&(&i + &iii));
        assert_eq!(check_einthoven(&r), 0.0);
        r.signals[[1, 57]] += 0.5;
        assert!((check_einthoven(&r) - 0.5).abs() < 1e-12);
    }
}
