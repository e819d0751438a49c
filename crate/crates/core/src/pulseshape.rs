//! Readout-pulse envelopes.
//!
//! The cosine-edge square wave rises over the first `r` samples as
//! `(1 - cos(pi k / r)) / 2`, holds at 1, and falls symmetrically over the
//! last `r` samples, where `r = round(ramp_fraction * n)`.

use std::f64::consts::PI;
use std::io::Write;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub values: Vec<f64>,
    pub ramp_fraction: f64,
}

impl Envelope {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of samples in each cosine edge.
    pub fn ramp_len(&self) -> usize {
        ramp_len(self.values.len(), self.ramp_fraction)
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Single-column CSV with a `value` header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "value")?;
        for v in &self.values {
            writeln!(w, "{v}")?;
        }
        Ok(())
    }
}

fn ramp_len(n: usize, ramp_fraction: f64) -> usize {
    ((ramp_fraction * n as f64).round() as usize).clamp(1, n / 2)
}

pub fn cosine_edge_envelope(n: usize, ramp_fraction: f64) -> Result<Envelope> {
    if n < 4 {
        return Err(Error::Config(format!("envelope needs n >= 4, got {n}")));
    }
    if !(ramp_fraction > 0.0 && ramp_fraction <= 0.5) {
        return Err(Error::range("ramp_fraction", ramp_fraction, 0.0, 0.5));
    }
    let r = ramp_len(n, ramp_fraction);
    let mut values = vec![1.0; n];
    for k in 0..r {
        let v = 0.5 * (1.0 - (PI * k as f64 / r as f64).cos());
        values[k] = v;
        values[n - 1 - k] = v;
    }
    Ok(Envelope {
        values,
        ramp_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn degenerate_half_ramp_is_a_raised_cosine() {
        let e = cosine_edge_envelope(8, 0.5).unwrap();
        assert_eq!(e.values[0], 0.0);
        assert_eq!(e.ramp_len(), 4);
        for k in 0..8 {
            assert_eq!(e.values[k], e.values[7 - k]);
        }
        // No plateau sample: the peak is the last rising sample.
        let peak = e.values.iter().cloned().fold(0.0, f64::max);
        assert!((peak - 0.5 * (1.0 - (0.75 * PI).cos())).abs() < 1e-15);
    }

    #[test]
    fn quarter_ramp_layout() {
        let e = cosine_edge_envelope(1000, 0.25).unwrap();
        assert_eq!(e.ramp_len(), 250);
        assert!(e.values[250..750].iter().all(|&v| v == 1.0));
        assert!(e.values[..250].iter().all(|&v| v < 1.0));
        assert!(e.values[750..].iter().all(|&v| v < 1.0));
        assert!(e.values[..250].windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn steeper_ramp_has_more_energy() {
        let slow = cosine_edge_envelope(1000, 0.25).unwrap();
        let fast = cosine_edge_envelope(1000, 0.05).unwrap();
        assert_eq!(fast.values.iter().filter(|&&v| v == 1.0).count(), 900);
        let direct = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        assert!(direct(&fast.values) > direct(&slow.values));
    }

    #[test]
    fn rejects_bad_fraction() {
        assert!(cosine_edge_envelope(100, 0.0).is_err());
        assert!(cosine_edge_envelope(100, 0.51).is_err());
        assert!(cosine_edge_envelope(100, f64::NAN).is_err());
        assert!(cosine_edge_envelope(3, 0.2).is_err());
    }

    #[test]
    fn csv_export() {
        let e = cosine_edge_envelope(4, 0.25).unwrap();
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("value\n0\n"));
    }

    proptest! {
        #[test]
        fn bounded_and_symmetric(n in 4usize..2000, f in 0.001f64..=0.5) {
            let e = cosine_edge_envelope(n, f).unwrap();
            prop_assert_eq!(e.values[0], 0.0);
            for k in 0..n {
                prop_assert!((0.0..=1.0).contains(&e.values[k]));
                prop_assert_eq!(e.values[k], e.values[n - 1 - k]);
            }
        }

        #[test]
        fn energy_strictly_decreasing_in_ramp(n in 20usize..2000, a in 0.01f64..0.5, b in 0.01f64..0.5) {
            let ea = cosine_edge_envelope(n, a).unwrap();
            let eb = cosine_edge_envelope(n, b).unwrap();
            if ea.ramp_len() < eb.ramp_len() {
                prop_assert!(ea.energy() > eb.energy());
            } else if ea.ramp_len() > eb.ramp_len() {
                prop_assert!(ea.energy() < eb.energy());
            }
        }
    }
}
