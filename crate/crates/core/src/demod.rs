//! Digital local-oscillator demodulation and data-driven DLO weighting.
//!
//! Calibration runs in a fixed order: mix labeled shots with the square DLO,
//! smooth each mixed series with an EMA, average per label into mean
//! trajectories, and derive per-sample complex weights from their difference.
//! Evaluation then re-mixes shots with the weighted DLO and accumulates.

use std::io::{BufRead, Write};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iqsim::{carrier_phase, IQShot, Label, RawShot, RawShotGenerator, SimConfig};
use crate::metrics::{self, GaussianClassifier};
use crate::rng;
use crate::stats;

/// Default EMA smoothing factor.
pub const DEFAULT_ALPHA: f64 = 0.01;

/// Shots per chunk in parallel reductions. Chunk partial sums are combined in
/// index order, so results do not depend on the thread count.
const CHUNK: usize = 256;

/// Stream salts separating the calibration and evaluation shot populations.
pub const SALT_CALIBRATION: u64 = 1;
pub const SALT_EVALUATION: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct MixedSeries {
    pub values: Vec<Complex64>,
    pub label: Option<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub w: Vec<Complex64>,
    /// Peak modulus of the trajectory difference before normalization.
    pub normalization: f64,
}

impl WeightVector {
    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn unit(n: usize) -> WeightVector {
        WeightVector {
            w: vec![Complex64::new(1.0, 0.0); n],
            normalization: 1.0,
        }
    }

    /// CSV with columns `index,re,im`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "index,re,im")?;
        for (k, z) in self.w.iter().enumerate() {
            writeln!(out, "{k},{:e},{:e}", z.re, z.im)?;
        }
        Ok(())
    }

    /// Reads the CSV written by [`WeightVector::write_csv`]. The normalization
    /// is not stored in the file and reads back as the peak modulus.
    pub fn read_csv<R: BufRead>(input: R) -> Result<WeightVector> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut w = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::Parse {
                        line: row + 2,
                        offset: rec.position().map_or(0, |p| p.byte() as usize),
                        msg: format!("bad weight field {k}"),
                    })
            };
            if field(0)? as usize != row {
                return Err(Error::Parse {
                    line: row + 2,
                    offset: rec.position().map_or(0, |p| p.byte() as usize),
                    msg: "weight indices must be consecutive from 0".into(),
                });
            }
            w.push(Complex64::new(field(1)?, field(2)?));
        }
        if w.is_empty() {
            return Err(Error::Empty("weight file"));
        }
        let normalization = w.iter().map(|z| z.norm()).fold(0.0, f64::max);
        Ok(WeightVector { w, normalization })
    }
}

/// A complex digital local oscillator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dlo {
    pub sample_rate: f64,
    pub freq: f64,
    pub phase: f64,
}

impl Dlo {
    /// Matched to the simulator's intermediate frequency with zero phase.
    pub fn for_config(cfg: &SimConfig) -> Dlo {
        Dlo {
            sample_rate: cfg.sample_rate,
            freq: cfg.readout_freq,
            phase: 0.0,
        }
    }

    /// `exp(-j (2 pi f k / fs + phase))` for `k = 0..n`.
    pub fn table(&self, n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|k| Complex64::from_polar(1.0, -(carrier_phase(self.freq, k, self.sample_rate) + self.phase)))
            .collect()
    }
}

fn check_weights(weights: Option<&WeightVector>, n: usize) -> Result<()> {
    match weights {
        Some(w) if w.len() != n => Err(Error::LengthMismatch {
            expected: n,
            got: w.len(),
        }),
        _ => Ok(()),
    }
}

fn mix_with_table(samples: &[f64], table: &[Complex64], weights: Option<&WeightVector>) -> Vec<Complex64> {
    match weights {
        None => samples.iter().zip(table).map(|(s, d)| d * s).collect(),
        Some(w) => samples
            .iter()
            .zip(table)
            .zip(&w.w)
            .map(|((s, d), w)| w * (d * s))
            .collect(),
    }
}

pub fn mix(shot: &RawShot, dlo: &Dlo, weights: Option<&WeightVector>) -> Result<MixedSeries> {
    if !(dlo.freq > 0.0) {
        return Err(Error::Config("DLO frequency must be positive".into()));
    }
    let n = shot.samples.len();
    check_weights(weights, n)?;
    let table = dlo.table(n);
    Ok(MixedSeries {
        values: mix_with_table(&shot.samples, &table, weights),
        label: Some(shot.label),
    })
}

pub fn accumulate(ms: &MixedSeries) -> Result<IQShot> {
    if ms.values.is_empty() {
        return Err(Error::Empty("mixed series"));
    }
    let (i, q) = ms
        .values
        .iter()
        .fold((0.0, 0.0), |(i, q), z| (i + z.re, q + z.im));
    Ok(IQShot {
        label: ms.label.unwrap_or(Label::Ground),
        i,
        q,
    })
}

pub fn ema(series: &[Complex64], alpha: f64) -> Result<Vec<Complex64>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::range("alpha", alpha, 0.0, 1.0));
    }
    let mut out = Vec::with_capacity(series.len());
    let mut prev = match series.first() {
        Some(first) => *first,
        None => return Ok(out),
    };
    out.push(prev);
    for x in &series[1..] {
        prev = x * alpha + prev * (1.0 - alpha);
        out.push(prev);
    }
    Ok(out)
}

/// Per-label mean of (already smoothed) series.
pub fn mean_trajectories(shots: &[MixedSeries]) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let mut sums: [Option<(Vec<Complex64>, usize)>; 2] = [None, None];
    let mut n = None;
    for s in shots {
        let label = s
            .label
            .ok_or_else(|| Error::Config("mean_trajectories needs labeled series".into()))?;
        let len = *n.get_or_insert(s.values.len());
        if s.values.len() != len {
            return Err(Error::LengthMismatch {
                expected: len,
                got: s.values.len(),
            });
        }
        let slot = sums[label.as_u8() as usize].get_or_insert_with(|| (vec![Complex64::default(); len], 0));
        for (acc, v) in slot.0.iter_mut().zip(&s.values) {
            *acc += v;
        }
        slot.1 += 1;
    }
    let finish = |slot: Option<(Vec<Complex64>, usize)>, label| {
        let (sum, count) = slot.ok_or(Error::MissingClass(label))?;
        let inv = 1.0 / count as f64;
        Ok::<_, Error>(sum.into_iter().map(|z| z * inv).collect())
    };
    let [s0, s1] = sums;
    Ok((finish(s0, Label::Ground)?, finish(s1, Label::Excited)?))
}

/// Matched-filter weights `conj(trj1 - trj0)` scaled to unit peak modulus.
pub fn derive_weights(trj0: &[Complex64], trj1: &[Complex64]) -> Result<WeightVector> {
    if trj0.len() != trj1.len() {
        return Err(Error::LengthMismatch {
            expected: trj0.len(),
            got: trj1.len(),
        });
    }
    let diff: Vec<Complex64> = trj1.iter().zip(trj0).map(|(a, b)| a - b).collect();
    let peak = diff.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    Ok(WeightVector {
        w: diff.iter().map(|z| z.conj() / peak).collect(),
        normalization: peak,
    })
}

/// Generates shots in parallel and reduces each to an accumulated IQ point.
/// Ground shots come first, then excited, each in index order.
pub fn simulate_accumulated(
    gen: &RawShotGenerator,
    dlo: &Dlo,
    weights: Option<&WeightVector>,
    n_per_state: usize,
    salt: u64,
) -> Result<Vec<IQShot>> {
    let mut sets = simulate_accumulated_multi(gen, dlo, &[weights], n_per_state, salt)?;
    Ok(sets.remove(0))
}

/// Like [`simulate_accumulated`] but demodulates every shot with several
/// weightings at once, so comparisons see exactly the same raw samples.
pub fn simulate_accumulated_multi(
    gen: &RawShotGenerator,
    dlo: &Dlo,
    weightings: &[Option<&WeightVector>],
    n_per_state: usize,
    salt: u64,
) -> Result<Vec<Vec<IQShot>>> {
    let n = gen.n_samples();
    for w in weightings {
        check_weights(*w, n)?;
    }
    let table = dlo.table(n);
    let seed = gen.config().seed;
    let jobs: Vec<(Label, usize)> = Label::BOTH
        .iter()
        .flat_map(|&l| (0..n_per_state).map(move |k| (l, k)))
        .collect();
    let per_shot: Vec<Vec<IQShot>> = jobs
        .par_iter()
        .map(|&(label, k)| {
            let mut r = rng::stream(seed, (salt << 40) | rng::shot_stream(k as u64, label.as_u8()));
            let shot = gen.sample(label, &mut r);
            weightings
                .iter()
                .map(|w| {
                    let (i, q) = mix_with_table(&shot.samples, &table, *w)
                        .iter()
                        .fold((0.0, 0.0), |(i, q), z| (i + z.re, q + z.im));
                    IQShot { label, i, q }
                })
                .collect()
        })
        .collect();
    let mut out = vec![Vec::with_capacity(jobs.len()); weightings.len()];
    for shot in per_shot {
        for (set, s) in out.iter_mut().zip(shot) {
            set.push(s);
        }
    }
    Ok(out)
}

/// Calibration output: smoothed mean trajectories and the derived weights.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub trj0: Vec<Complex64>,
    pub trj1: Vec<Complex64>,
    pub weights: WeightVector,
}

/// Runs the calibration chain on `n_per_state` freshly simulated shots per
/// label without holding every mixed series in memory.
pub fn calibrate(gen: &RawShotGenerator, dlo: &Dlo, alpha: f64, n_per_state: usize) -> Result<Calibration> {
    if n_per_state == 0 {
        return Err(Error::MissingClass(Label::Ground));
    }
    ema(&[], alpha)?;
    let n = gen.n_samples();
    let table = dlo.table(n);
    let seed = gen.config().seed;
    let mut traj = Vec::with_capacity(2);
    for label in Label::BOTH {
        let chunks: Vec<Vec<Complex64>> = (0..n_per_state.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut acc = vec![Complex64::default(); n];
                for k in c * CHUNK..((c + 1) * CHUNK).min(n_per_state) {
                    let stream = (SALT_CALIBRATION << 40) | rng::shot_stream(k as u64, label.as_u8());
                    let shot = gen.sample(label, &mut rng::stream(seed, stream));
                    let mixed = mix_with_table(&shot.samples, &table, None);
                    let smooth = ema(&mixed, alpha).expect("alpha validated");
                    for (a, v) in acc.iter_mut().zip(&smooth) {
                        *a += v;
                    }
                }
                acc
            })
            .collect();
        let mut total = vec![Complex64::default(); n];
        for chunk in chunks {
            for (t, v) in total.iter_mut().zip(chunk) {
                *t += v;
            }
        }
        let inv = 1.0 / n_per_state as f64;
        traj.push(total.into_iter().map(|z| z * inv).collect::<Vec<_>>());
    }
    let trj1 = traj.pop().expect("two labels");
    let trj0 = traj.pop().expect("two labels");
    let weights = derive_weights(&trj0, &trj1)?;
    Ok(Calibration { trj0, trj1, weights })
}

/// Square-vs-weighted comparison on a shared evaluation population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DloReport {
    pub alpha: f64,
    pub calibration_shots_per_state: usize,
    pub eval_shots_per_state: usize,
    pub distance_square: f64,
    pub distance_weighted: f64,
    pub fidelity_square: f64,
    pub fidelity_weighted: f64,
}

fn gaussian_fidelity(shots: &[IQShot]) -> Result<f64> {
    let clf = GaussianClassifier::fit(shots)?;
    let labels: Vec<Label> = shots.iter().map(|s| s.label).collect();
    let preds: Vec<Label> = shots.iter().map(|s| clf.predict(s)).collect();
    Ok(metrics::fidelity(&labels, &preds)?.avg)
}

fn split_by_label(shots: &[IQShot]) -> (Vec<IQShot>, Vec<IQShot>) {
    shots.iter().partition(|s| s.label == Label::Ground)
}

/// Evaluates square and weighted demodulation on the same evaluation shots.
pub fn compare_dlo(
    gen: &RawShotGenerator,
    dlo: &Dlo,
    cal: &Calibration,
    alpha: f64,
    calibration_shots: usize,
    eval_per_state: usize,
) -> Result<DloReport> {
    let sets = simulate_accumulated_multi(gen, dlo, &[None, Some(&cal.weights)], eval_per_state, SALT_EVALUATION)?;
    let (distance_square, fidelity_square) = separation(&sets[0])?;
    let (distance_weighted, fidelity_weighted) = separation(&sets[1])?;
    Ok(DloReport {
        alpha,
        calibration_shots_per_state: calibration_shots,
        eval_shots_per_state: eval_per_state,
        distance_square,
        distance_weighted,
        fidelity_square,
        fidelity_weighted,
    })
}

/// Distance and Gaussian fidelity. Without smoothing the weighted accumulate
/// is purely real, so a rank-deficient population is scored on the principal
/// axis of its pooled covariance instead.
fn separation(shots: &[IQShot]) -> Result<(f64, f64)> {
    let (s0, s1) = split_by_label(shots);
    match metrics::mahalanobis_distance(&s0, &s1) {
        Err(Error::Singular { .. }) => projected_separation(shots),
        d => Ok((d?, gaussian_fidelity(shots)?)),
    }
}

fn projected_separation(shots: &[IQShot]) -> Result<(f64, f64)> {
    let (s0, s1) = split_by_label(shots);
    let pts = |s: &[IQShot]| s.iter().map(|x| [x.i, x.q]).collect::<Vec<_>>();
    let (p0, p1) = (pts(&s0), pts(&s1));
    let (m0, m1) = (stats::mean(&p0), stats::mean(&p1));
    let (c0, c1) = (stats::covariance(&p0, &m0), stats::covariance(&p1, &m1));
    let (n0, n1) = (p0.len() as f64, p1.len() as f64);
    let mut pooled = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            pooled[r][c] = (n0 * c0[r][c] + n1 * c1[r][c]) / (n0 + n1);
        }
    }
    let (_, hi) = stats::sym_eigenvalues(&pooled);
    if !(hi > 0.0) {
        return Err(Error::Singular { cond: f64::INFINITY });
    }
    let (a, b, c) = (pooled[0][0], pooled[0][1], pooled[1][1]);
    let v = if (a - hi).abs() + b.abs() > (c - hi).abs() + b.abs() { [b, hi - a] } else { [hi - c, b] };
    let norm = v[0].hypot(v[1]);
    let axis = if norm > 0.0 { [v[0] / norm, v[1] / norm] } else if a >= c { [1.0, 0.0] } else { [0.0, 1.0] };
    let proj = |p: &[f64; 2]| p[0] * axis[0] + p[1] * axis[1];
    let distance = (proj(&m1) - proj(&m0)).abs() / hi.sqrt();

    let var = |cv: &[[f64; 2]; 2]| {
        axis[0] * (cv[0][0] * axis[0] + cv[0][1] * axis[1]) + axis[1] * (cv[1][0] * axis[0] + cv[1][1] * axis[1])
    };
    let (v0, v1) = (var(&c0).max(f64::MIN_POSITIVE), var(&c1).max(f64::MIN_POSITIVE));
    let (mu0, mu1) = (proj(&m0), proj(&m1));
    let prior0 = n0 / (n0 + n1);
    let loglik = |x: f64, mu: f64, v: f64| -0.5 * ((x - mu).powi(2) / v + v.ln());
    let labels: Vec<Label> = shots.iter().map(|s| s.label).collect();
    let preds: Vec<Label> = shots
        .iter()
        .map(|s| {
            let x = proj(&[s.i, s.q]);
            let g = loglik(x, mu0, v0) + prior0.ln();
            let e = loglik(x, mu1, v1) + (1.0 - prior0).ln();
            if e > g { Label::Excited } else { Label::Ground }
        })
        .collect();
    Ok((distance, metrics::fidelity(&labels, &preds)?.avg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(n: usize, f: f64, fs: f64) -> RawShot {
        RawShot {
            samples: (0..n).map(|k| (2.0 * PI * f * k as f64 / fs).cos()).collect(),
            label: Label::Ground,
            relaxed_at: None,
        }
    }

    #[test]
    fn tone_accumulates_to_half_n() {
        let (n, f, fs) = (1000, 100e6, 1e9);
        let shot = tone(n, f, fs);
        let dlo = Dlo { sample_rate: fs, freq: f, phase: 0.0 };
        let iq = accumulate(&mix(&shot, &dlo, None).unwrap()).unwrap();
        // sum cos^2 = N/2 and sum cos*sin = 0 over whole cycles.
        assert!((iq.i - n as f64 / 2.0).abs() < 1e-9);
        assert!(iq.q.abs() < 1e-9);
        assert!(iq.i.hypot(iq.q) >= n as f64 / 2.0 * (1.0 - 1e-12));
    }

    #[test]
    fn zero_and_unit_weights() {
        let shot = tone(64, 100e6, 1e9);
        let dlo = Dlo { sample_rate: 1e9, freq: 100e6, phase: 0.3 };
        let zero = WeightVector { w: vec![Complex64::default(); 64], normalization: 1.0 };
        assert!(mix(&shot, &dlo, Some(&zero)).unwrap().values.iter().all(|z| z.norm() == 0.0));
        let plain = mix(&shot, &dlo, None).unwrap();
        let unit = mix(&shot, &dlo, Some(&WeightVector::unit(64))).unwrap();
        for (a, b) in plain.values.iter().zip(&unit.values) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
        assert!(matches!(
            mix(&shot, &dlo, Some(&WeightVector::unit(63))),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn accumulate_small_cases() {
        let one = MixedSeries { values: vec![Complex64::new(1.0, 2.0)], label: Some(Label::Excited) };
        let iq = accumulate(&one).unwrap();
        assert_eq!((iq.i, iq.q, iq.label), (1.0, 2.0, Label::Excited));
        let many = MixedSeries { values: vec![Complex64::new(0.5, -0.25); 8], label: None };
        let iq = accumulate(&many).unwrap();
        assert_eq!((iq.i, iq.q), (4.0, -2.0));
        assert!(accumulate(&MixedSeries { values: vec![], label: None }).is_err());
    }

    fn pairwise(v: &[f64]) -> f64 {
        if v.len() <= 2 {
            return v.iter().sum();
        }
        let (a, b) = v.split_at(v.len() / 2);
        pairwise(a) + pairwise(b)
    }

    #[test]
    fn accumulate_matches_pairwise_sum() {
        use rand::Rng;
        let mut r = rng::stream(3, 3);
        let values: Vec<Complex64> = (0..5000)
            .map(|_| Complex64::new(r.random_range(-1e4..1e4), r.random_range(-1e4..1e4)))
            .collect();
        let iq = accumulate(&MixedSeries { values: values.clone(), label: None }).unwrap();
        let re: Vec<f64> = values.iter().map(|z| z.re).collect();
        let im: Vec<f64> = values.iter().map(|z| z.im).collect();
        let bound = 5000.0 * 1e4 * f64::EPSILON * 16.0;
        assert!((iq.i - pairwise(&re)).abs() < bound);
        assert!((iq.q - pairwise(&im)).abs() < bound);
    }

    #[test]
    fn ema_edge_cases() {
        let c = vec![Complex64::new(2.0, -1.0); 100];
        let out = ema(&c, 0.01).unwrap();
        assert!(out.iter().all(|z| (z - c[0]).norm() < 1e-12));
        let x: Vec<Complex64> = (0..10).map(|k| Complex64::new(k as f64, 0.0)).collect();
        assert_eq!(ema(&x, 1.0).unwrap(), x);
        assert!(ema(&x, 0.0).is_err());
        assert!(ema(&x, 1.5).is_err());
    }

    #[test]
    fn ema_is_a_contraction() {
        use rand::Rng;
        let mut r = rng::stream(8, 1);
        for _ in 0..50 {
            let x: Vec<Complex64> = (0..200).map(|_| Complex64::new(r.random(), r.random())).collect();
            let y: Vec<Complex64> = (0..200).map(|_| Complex64::new(r.random(), r.random())).collect();
            let alpha = r.random_range(0.001..=1.0);
            let ex = ema(&x, alpha).unwrap();
            let ey = ema(&y, alpha).unwrap();
            let din = x.iter().zip(&y).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            let dout = ex.iter().zip(&ey).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(dout <= din + 1e-12);
        }
    }

    #[test]
    fn mean_trajectories_cases() {
        let s = |v: f64, l| MixedSeries { values: vec![Complex64::new(v, 0.0); 4], label: Some(l) };
        let (t0, t1) = mean_trajectories(&[s(1.0, Label::Ground), s(3.0, Label::Excited)]).unwrap();
        assert_eq!(t0[0].re, 1.0);
        assert_eq!(t1[3].re, 3.0);
        let dup = vec![s(1.0, Label::Ground), s(1.0, Label::Ground), s(1.0, Label::Ground), s(3.0, Label::Excited)];
        let (d0, _) = mean_trajectories(&dup).unwrap();
        assert_eq!(d0, t0);
        assert!(matches!(
            mean_trajectories(&[s(1.0, Label::Ground)]),
            Err(Error::MissingClass(Label::Excited))
        ));
    }

    #[test]
    fn weight_derivation_properties() {
        let c = Complex64::new(3.0, -4.0);
        let t0 = vec![Complex64::new(1.0, 1.0); 10];
        let t1: Vec<_> = t0.iter().map(|z| z + c).collect();
        let w = derive_weights(&t0, &t1).unwrap();
        assert_eq!(w.normalization, 5.0);
        for z in &w.w {
            assert!((z - c.conj() / 5.0).norm() < 1e-15);
            assert!((z.norm() - 1.0).abs() < 1e-15);
        }
        let neg = derive_weights(&t1, &t0).unwrap();
        for (a, b) in w.w.iter().zip(&neg.w) {
            assert_eq!(*a, -*b);
        }
        let shift = Complex64::new(-7.0, 2.5);
        let s0: Vec<_> = t0.iter().map(|z| z + shift).collect();
        let s1: Vec<_> = t1.iter().map(|z| z + shift).collect();
        let ws = derive_weights(&s0, &s1).unwrap();
        for (a, b) in w.w.iter().zip(&ws.w) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!(matches!(derive_weights(&t0, &t0), Err(Error::DegenerateWeights)));
    }

    #[test]
    fn weighted_accumulate_equals_weighted_sum() {
        let cfg = SimConfig { readout_len: 300e-9, ..SimConfig::no_twpa() };
        let gen = RawShotGenerator::new(&cfg).unwrap();
        let dlo = Dlo::for_config(&cfg);
        let cal = calibrate(&gen, &dlo, 0.01, 50).unwrap();
        let shot = gen.sample(Label::Excited, &mut rng::stream(1, 99));
        let plain = mix(&shot, &dlo, None).unwrap();
        let weighted = accumulate(&mix(&shot, &dlo, Some(&cal.weights)).unwrap()).unwrap();
        let direct: Complex64 = plain.values.iter().zip(&cal.weights.w).map(|(v, w)| w * v).sum();
        let scale = direct.norm().max(1.0);
        assert!((weighted.i - direct.re).abs() <= 1e-9 * scale);
        assert!((weighted.q - direct.im).abs() <= 1e-9 * scale);
    }

    #[test]
    fn mixing_is_linear() {
        let cfg = SimConfig { readout_len: 200e-9, noise_sigma: 0.0, relax_prob: 0.0, ..SimConfig::no_twpa() };
        let gen = RawShotGenerator::new(&cfg).unwrap();
        let dlo = Dlo::for_config(&cfg);
        let (a, b) = (1.7, -0.6);
        let g = gen.clean(Label::Ground);
        let e = gen.clean(Label::Excited);
        let shot = |s: Vec<f64>| RawShot { samples: s, label: Label::Ground, relaxed_at: None };
        let combo = shot(g.iter().zip(e).map(|(x, y)| a * x + b * y).collect());
        let mg = mix(&shot(g.to_vec()), &dlo, None).unwrap();
        let me = mix(&shot(e.to_vec()), &dlo, None).unwrap();
        let mc = mix(&combo, &dlo, None).unwrap();
        for k in 0..mc.values.len() {
            let expect = mg.values[k] * a + me.values[k] * b;
            assert!((mc.values[k] - expect).norm() <= 1e-9 * expect.norm().max(1.0));
        }
    }

    #[test]
    fn calibration_is_thread_count_independent() {
        let cfg = SimConfig { readout_len: 200e-9, ..SimConfig::no_twpa() };
        let gen = RawShotGenerator::new(&cfg).unwrap();
        let dlo = Dlo::for_config(&cfg);
        let a = calibrate(&gen, &dlo, 0.01, 700).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| calibrate(&gen, &dlo, 0.01, 700).unwrap());
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn identical_states_fail_calibration() {
        let cfg = SimConfig { readout_len: 100e-9, phase1: 0.0, relax_prob: 0.0, noise_sigma: 0.0, ..SimConfig::no_twpa() };
        let gen = RawShotGenerator::new(&cfg).unwrap();
        let err = calibrate(&gen, &Dlo::for_config(&cfg), 0.01, 10).unwrap_err();
        assert!(matches!(err, Error::DegenerateWeights));
    }

    #[test]
    fn weights_csv_roundtrip() {
        let w = WeightVector {
            w: vec![Complex64::new(0.25, -1.0), Complex64::new(1e-7, 0.5)],
            normalization: 1.0,
        };
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        let back = WeightVector::read_csv(&buf[..]).unwrap();
        assert_eq!(back.w, w.w);
    }

    #[test]
    fn rank_deficient_population_scored_on_principal_axis() {
        let shots: Vec<IQShot> = (0..400)
            .map(|k| {
                let label = if k % 2 == 0 { Label::Ground } else { Label::Excited };
                let x = if label == Label::Ground { -1.0 } else { 1.0 } + 0.25 * ((k / 2) as f64 * 0.37).sin();
                IQShot { label, i: 3.0 * x, q: 4.0 * x }
            })
            .collect();
        let (s0, s1) = split_by_label(&shots);
        assert!(matches!(metrics::mahalanobis_distance(&s0, &s1), Err(Error::Singular { .. })));
        let (d, f) = separation(&shots).unwrap();
        let line: Vec<IQShot> = shots.iter().map(|s| IQShot { q: 0.0, i: 5.0 * s.i / 3.0, ..*s }).collect();
        let (d_line, _) = projected_separation(&line).unwrap();
        assert!((d - d_line).abs() < 1e-9 * d, "{d} vs {d_line}");
        assert!(d > 5.0 && f == 1.0, "{d} {f}");
    }
}
