use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::Field;
use crate::error::{Error, Result};
use crate::solvers::Reference;

/// Independent random streams derived from one seed.
pub(crate) const TRAIN_STREAM: u64 = 0;
pub(crate) const HELD_OUT_STREAM: u64 = 1;
pub(crate) const WALK_STREAM: u64 = 2;

pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Settings of the random-walk state generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomWalk {
    pub seed_state: Vec<f64>,
    pub chains: usize,
    pub walk_steps: usize,
    /// Range of the hold time of each random control.
    pub duration_range: [f64; 2],
    /// Epochs between regenerations of the state pool.
    #[serde(default = "default_refresh")]
    pub refresh_every: usize,
    #[serde(default = "default_walk_reference")]
    pub reference: Reference,
}

fn default_refresh() -> usize {
    100
}

fn default_walk_reference() -> Reference {
    Reference::Rk4 { substeps: 1 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SampleMode {
    UniformBox,
    RandomWalk(RandomWalk),
}

/// Support of the training samples: a state box, a control box and a way to draw states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleDistribution {
    pub state_box: Vec<[f64; 2]>,
    pub control_box: Vec<[f64; 2]>,
    #[serde(default = "default_mode")]
    pub mode: SampleMode,
}

fn default_mode() -> SampleMode {
    SampleMode::UniformBox
}

fn check_box(what: &str, b: &[[f64; 2]]) -> Result<()> {
    for (i, [lo, hi]) in b.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::InvalidInput(format!(
                "{what} dimension {i}: invalid interval [{lo}, {hi}]"
            )));
        }
    }
    Ok(())
}

pub(crate) fn draw_box(rng: &mut impl Rng, b: &[[f64; 2]]) -> Vec<f64> {
    b.iter()
        .map(|&[lo, hi]| lo + (hi - lo) * rng.random::<f64>())
        .collect()
}

impl SampleDistribution {
    pub fn uniform(state_box: Vec<[f64; 2]>, control_box: Vec<[f64; 2]>) -> Self {
        Self {
            state_box,
            control_box,
            mode: SampleMode::UniformBox,
        }
    }

    pub fn n_x(&self) -> usize {
        self.state_box.len()
    }

    pub fn n_u(&self) -> usize {
        self.control_box.len()
    }

    pub fn validate(&self) -> Result<()> {
        check_box("state box", &self.state_box)?;
        check_box("control box", &self.control_box)?;
        if let SampleMode::RandomWalk(w) = &self.mode {
            if w.seed_state.len() != self.n_x() {
                return Err(Error::Dimension {
                    what: "random-walk seed state",
                    expected: self.n_x(),
                    got: w.seed_state.len(),
                });
            }
            let [a, b] = w.duration_range;
            if !(a >= 0.0 && a <= b) {
                return Err(Error::InvalidInput(format!(
                    "invalid duration range [{a}, {b}]"
                )));
            }
            if w.chains == 0 || w.refresh_every == 0 {
                return Err(Error::InvalidInput(
                    "random walk needs chains > 0 and refresh_every > 0".into(),
                ));
            }
            w.reference.validate()?;
        }
        Ok(())
    }

    pub fn draw_state(&self, rng: &mut impl Rng) -> Vec<f64> {
        draw_box(rng, &self.state_box)
    }

    pub fn draw_control(&self, rng: &mut impl Rng) -> Vec<f64> {
        draw_box(rng, &self.control_box)
    }
}

/// `n` states followed by `n` controls, i.i.d. uniform on the boxes.
pub fn sample_uniform(
    dist: &SampleDistribution,
    n: usize,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if !matches!(dist.mode, SampleMode::UniformBox) {
        return Err(Error::InvalidInput(
            "sample_uniform needs uniform_box mode".into(),
        ));
    }
    dist.validate()?;
    let mut rng = rng_stream(seed, TRAIN_STREAM);
    let xs = (0..n).map(|_| dist.draw_state(&mut rng)).collect();
    let us = (0..n).map(|_| dist.draw_control(&mut rng)).collect();
    Ok((xs, us))
}

/// Frontier states of `chains` random walks of `walk_steps` constant-control segments each.
/// A chain that blows up restarts from the seed state.
pub fn sample_random_walk<F: Field<f64> + ?Sized>(
    dist: &SampleDistribution,
    f: &F,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let SampleMode::RandomWalk(w) = &dist.mode else {
        return Err(Error::InvalidInput(
            "sample_random_walk needs random_walk mode".into(),
        ));
    };
    dist.validate()?;
    if w.walk_steps == 0 {
        return Ok(vec![w.seed_state.clone()]);
    }
    walk_with_rng(dist, f, &mut rng_stream(seed, WALK_STREAM))
}

pub(crate) fn walk_with_rng<F: Field<f64> + ?Sized>(
    dist: &SampleDistribution,
    f: &F,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<f64>>> {
    let SampleMode::RandomWalk(w) = &dist.mode else {
        return Err(Error::InvalidInput(
            "random walk needs random_walk mode".into(),
        ));
    };
    if w.walk_steps == 0 {
        return Ok(vec![w.seed_state.clone()]);
    }
    let mut out = Vec::with_capacity(w.chains * w.walk_steps);
    let [d_lo, d_hi] = w.duration_range;
    for _ in 0..w.chains {
        let mut x = w.seed_state.clone();
        for _ in 0..w.walk_steps {
            let u = dist.draw_control(rng);
            let dt = d_lo + (d_hi - d_lo) * rng.random::<f64>();
            x = match w.reference.advance(f, &x, &u, dt) {
                Ok(next) if next.iter().all(|v| v.is_finite()) => next,
                _ => w.seed_state.clone(),
            };
            out.push(x.clone());
        }
    }
    Ok(out)
}
