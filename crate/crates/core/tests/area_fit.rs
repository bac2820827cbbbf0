//! One-time fit of the default SRAM area density.
//!
//! The Baseline accelerator should spend about 79.4% of its area on buffers.
//! With the PE term fixed, that pins a single mm²/KB density. The fitted value
//! is rounded to two decimals for the default table; these tests recompute
//! the fit and check that the rounded default stays inside the band.

use mensa_core::accel::{baseline, mensa, AcceleratorConfig, TechnologyTable, KIB};

const TARGET_SHARE: f64 = 0.794;
const SHARE_BAND: f64 = 0.05;

fn baseline_accel() -> AcceleratorConfig {
    baseline().accelerators[0].clone()
}

/// Buffer share as a function of the flat density, by direct summation.
fn share_at(density: f64) -> f64 {
    let a = baseline_accel();
    let t = TechnologyTable::default();
    let kb = (a.param_buffer + a.act_buffer) as f64 / KIB as f64;
    let buffers = kb * density;
    let pes = a.pe_rows as f64 * a.pe_cols as f64 * t.area_per_pe;
    buffers / (buffers + pes)
}

/// Bisection on the monotone share curve.
fn fit_density() -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if share_at(mid) < TARGET_SHARE {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn fitted_density_matches_frozen_value() {
    let d = fit_density();
    assert!((share_at(d) - TARGET_SHARE).abs() < 1e-12);
    // frozen from the fit above
    assert!((d - 0.025_696).abs() < 1e-6, "fit moved: {d}");
}

#[test]
fn default_density_is_the_rounded_fit() {
    let t = TechnologyTable::default();
    let fit = fit_density();
    for row in &t.area_rows {
        assert_eq!(row.mm2_per_kb, (fit * 100.0).round() / 100.0);
    }
}

#[test]
fn default_table_keeps_the_share_in_band() {
    let b = baseline();
    let total: f64 = b.area().unwrap();
    let buffers: f64 = b.buffer_area().unwrap();
    let share = buffers / total;
    assert!((share - TARGET_SHARE).abs() <= SHARE_BAND, "share {share}");
    assert!((share - share_at(0.03)).abs() < 1e-12);
}

#[test]
fn mensa_is_smaller() {
    let b: f64 = baseline().area().unwrap();
    let m: f64 = mensa().area().unwrap();
    assert!(m * 2.5 <= b, "baseline {b} mensa {m}");
}
