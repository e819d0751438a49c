//! Conditional bit-flip mid-circuit measurement scenario.
//!
//! Q2 is prepared on the equator, so each trial is a fair coin between a
//! ground and an excited readout. The discriminator's verdict on Q2 decides
//! whether the simulated Q1, initially ground, is flipped. A perfect pipeline
//! therefore only ever produces the joint outcomes |00> and |11>; every
//! misclassification shows up as |01> or |10>.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::QuantizedModel;
use crate::demod::{accumulate, mix, Dlo, WeightVector};
use crate::error::{Error, Result};
use crate::iqsim::{sample_iq_shot, GaussianCluster, IQShot, Label, RawShotGenerator};
use crate::rng;

const CHUNK: usize = 1024;
const SALT_FEEDBACK: u64 = 3;

pub trait Discriminator: Sync {
    fn discriminate(&self, shot: &IQShot) -> Label;
}

impl Discriminator for QuantizedModel {
    fn discriminate(&self, shot: &IQShot) -> Label {
        self.infer_shot(shot).map_or(Label::Ground, |inf| inf.state)
    }
}

/// Always reports ground.
pub struct ConstantGround;

impl Discriminator for ConstantGround {
    fn discriminate(&self, _: &IQShot) -> Label {
        Label::Ground
    }
}

impl<F: Fn(&IQShot) -> Label + Sync> Discriminator for F {
    fn discriminate(&self, shot: &IQShot) -> Label {
        self(shot)
    }
}

/// Where Q2 readouts come from.
pub enum ShotSource<'a> {
    Cluster(&'a GaussianCluster),
    Simulated {
        generator: &'a RawShotGenerator,
        dlo: &'a Dlo,
        weights: Option<&'a WeightVector>,
    },
    /// Draws uniformly from recorded shots of the prepared state.
    Replay {
        ground: &'a [IQShot],
        excited: &'a [IQShot],
    },
}

impl ShotSource<'_> {
    fn shot(&self, state: Label, rng: &mut rng::ShotRng) -> Result<IQShot> {
        match self {
            ShotSource::Cluster(c) => sample_iq_shot(c, state, rng),
            ShotSource::Simulated { generator, dlo, weights } => {
                accumulate(&mix(&generator.sample(state, rng), dlo, *weights)?)
            }
            ShotSource::Replay { ground, excited } => {
                let pool = match state {
                    Label::Ground => ground,
                    Label::Excited => excited,
                };
                if pool.is_empty() {
                    return Err(Error::MissingClass(state));
                }
                Ok(pool[rng.random_range(0..pool.len())])
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preparation {
    /// Each trial's Q2 state is a fair coin flip.
    Random,
    /// Trials alternate ground, excited, ground, ... (an exact 50/50 split).
    Alternating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackScenario {
    pub trials: usize,
    pub seed: u64,
    pub preparation: Preparation,
}

impl Default for FeedbackScenario {
    fn default() -> Self {
        FeedbackScenario { trials: 100_000, seed: 2024, preparation: Preparation::Random }
    }
}

/// Joint outcome counts indexed `[q1][q2]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointHistogram {
    pub counts: [[u64; 2]; 2],
}

impl JointHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn count(&self, q1: Label, q2: Label) -> u64 {
        self.counts[usize::from(q1.as_u8())][usize::from(q2.as_u8())]
    }

    pub fn prob(&self, q1: Label, q2: Label) -> f64 {
        let t = self.total();
        if t == 0 {
            0.0
        } else {
            self.count(q1, q2) as f64 / t as f64
        }
    }

    fn merge(mut self, other: JointHistogram) -> JointHistogram {
        for (a, b) in self.counts.iter_mut().flatten().zip(other.counts.iter().flatten()) {
            *a += b;
        }
        self
    }
}

/// Runs the conditional bit-flip. Q2 is tallied in the state it was prepared
/// in (the mid-circuit measurement collapses it there); Q1 ends excited
/// exactly when the discriminator said excited.
pub fn mid_circuit_feedback(
    disc: &dyn Discriminator,
    source: &ShotSource<'_>,
    scenario: &FeedbackScenario,
) -> Result<JointHistogram> {
    let chunks: Vec<usize> = (0..scenario.trials.div_ceil(CHUNK)).collect();
    let partial = chunks
        .par_iter()
        .map(|&c| -> Result<JointHistogram> {
            let mut h = JointHistogram::default();
            for t in c * CHUNK..((c + 1) * CHUNK).min(scenario.trials) {
                let mut r = rng::stream(scenario.seed, (SALT_FEEDBACK << 40) | t as u64);
                let q2 = match scenario.preparation {
                    Preparation::Random => Label::from_bit(r.random::<bool>()),
                    Preparation::Alternating => Label::from_bit(t % 2 == 1),
                };
                let q1 = disc.discriminate(&source.shot(q2, &mut r)?);
                h.counts[usize::from(q1.as_u8())][usize::from(q2.as_u8())] += 1;
            }
            Ok(h)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(partial.into_iter().fold(JointHistogram::default(), JointHistogram::merge))
}
