//! Samplers of base predictors.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::population::{Point, Population, Predictor};
use crate::seed::{derive_seed, rng_for};

/// A finite indexed family of predictors, possibly generated on demand.
pub trait ModelFamily: Send + Sync {
    fn len(&self) -> usize;
    fn model(&self, index: usize) -> Arc<Predictor>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Predictors held in memory.
#[derive(Debug, Clone)]
pub struct ExplicitModels(pub Vec<Arc<Predictor>>);

impl ModelFamily for ExplicitModels {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn model(&self, index: usize) -> Arc<Predictor> {
        Arc::clone(&self.0[index])
    }
}

/// A learning procedure applied to one shard.
pub trait ShardLearner: Send + Sync {
    /// Trains on `shard` and compiles the result over `eval`.
    fn fit(&self, shard: &Population, seed: u64, eval: &Population) -> Result<Predictor>;
}

/// Where shard training data comes from.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// Fresh i.i.d. draws (by weight) from a population for every shard.
    Iid(Population),
    /// A finite dataset split into disjoint shards per trial.
    Finite(Vec<Point>),
    /// Every draw retrains on the same shared dataset with fresh algorithmic randomness.
    Shared(Population),
}

pub struct ShardTrainer {
    pub learner: Arc<dyn ShardLearner>,
    pub shard_size: usize,
    pub data: DataSource,
}

pub enum SourceKind {
    /// Draw `models[i]` with probability `probs[i]` (uniform when `None`).
    Mixture {
        models: Arc<dyn ModelFamily>,
        probs: Option<Vec<f64>>,
    },
    ShardTrainer(ShardTrainer),
}

/// One sampled base predictor.
#[derive(Debug, Clone)]
pub struct Draw {
    pub model: Arc<Predictor>,
    /// Index within a mixture family, when the source has one.
    pub atom: Option<usize>,
}

/// The distribution `Q` over base predictors, with deterministic seeding.
pub struct BaseModelSource {
    kind: SourceKind,
    cumulative: Vec<f64>,
    pub base_seed: u64,
}

impl BaseModelSource {
    pub fn mixture(
        models: Arc<dyn ModelFamily>,
        probs: Option<Vec<f64>>,
        base_seed: u64,
    ) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::InvalidArgument("mixture has no models".into()));
        }
        let mut cumulative = Vec::new();
        if let Some(p) = &probs {
            if p.len() != models.len() {
                return Err(Error::ShapeMismatch {
                    what: "mixture probabilities",
                    expected: models.len(),
                    got: p.len(),
                });
            }
            if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidArgument(
                    "mixture probabilities must be non-negative".into(),
                ));
            }
            let total: f64 = p.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "mixture probabilities sum to {total}"
                )));
            }
            let mut acc = 0.0;
            for &v in p {
                acc += v;
                cumulative.push(acc);
            }
        }
        Ok(BaseModelSource {
            kind: SourceKind::Mixture { models, probs },
            cumulative,
            base_seed,
        })
    }

    pub fn explicit(
        models: Vec<Predictor>,
        probs: Option<Vec<f64>>,
        base_seed: u64,
    ) -> Result<Self> {
        let family = ExplicitModels(models.into_iter().map(Arc::new).collect());
        BaseModelSource::mixture(Arc::new(family), probs, base_seed)
    }

    pub fn shard_trainer(trainer: ShardTrainer, base_seed: u64) -> Result<Self> {
        if trainer.shard_size == 0 {
            return Err(Error::InvalidArgument("shard size must be positive".into()));
        }
        Ok(BaseModelSource {
            kind: SourceKind::ShardTrainer(trainer),
            cumulative: Vec::new(),
            base_seed,
        })
    }

    pub fn kind(&self) -> &SourceKind {
        &self.kind
    }

    /// Same distribution under a different base seed.
    pub fn reseeded(&self, base_seed: u64) -> BaseModelSource {
        let kind = match &self.kind {
            SourceKind::Mixture { models, probs } => SourceKind::Mixture {
                models: Arc::clone(models),
                probs: probs.clone(),
            },
            SourceKind::ShardTrainer(t) => SourceKind::ShardTrainer(ShardTrainer {
                learner: Arc::clone(&t.learner),
                shard_size: t.shard_size,
                data: t.data.clone(),
            }),
        };
        BaseModelSource {
            kind,
            cumulative: self.cumulative.clone(),
            base_seed,
        }
    }

    fn mixture_index(&self, u: f64, n: usize) -> usize {
        if self.cumulative.is_empty() {
            ((u * n as f64) as usize).min(n - 1)
        } else {
            let i = self.cumulative.partition_point(|&c| c <= u);
            // zero-probability tail entries share the final cumulative value
            let mut i = i.min(n - 1);
            while i > 0
                && self.cumulative[i] == self.cumulative[i - 1]
                && u >= self.cumulative[i - 1]
            {
                i -= 1;
            }
            i
        }
    }

    /// Draws `count` base predictors for `trial`, addressed by draw indices `0..count`.
    pub fn sample(&self, trial: u64, count: usize, eval: &Population) -> Result<Vec<Draw>> {
        match &self.kind {
            SourceKind::Mixture { models, .. } => Ok((0..count)
                .map(|j| {
                    let u: f64 = rng_for(self.base_seed, &[trial, j as u64]).gen();
                    let idx = self.mixture_index(u, models.len());
                    Draw {
                        model: models.model(idx),
                        atom: Some(idx),
                    }
                })
                .collect()),
            SourceKind::ShardTrainer(t) => self.sample_shards(t, trial, count, eval),
        }
    }

    fn sample_shards(
        &self,
        t: &ShardTrainer,
        trial: u64,
        count: usize,
        eval: &Population,
    ) -> Result<Vec<Draw>> {
        let s = t.shard_size;
        let shards: Vec<Population> = match &t.data {
            DataSource::Iid(pop) => (0..count)
                .map(|j| {
                    let mut rng = rng_for(self.base_seed, &[trial, j as u64, 0]);
                    let pts: Vec<Point> = (0..s).map(|_| sample_point(pop, rng.gen())).collect();
                    uniform_shard(pts)
                })
                .collect::<Result<_>>()?,
            DataSource::Finite(records) => {
                let needed = count * s;
                if needed > records.len() {
                    return Err(Error::SourceExhausted {
                        needed,
                        available: records.len(),
                    });
                }
                let mut order: Vec<usize> = (0..records.len()).collect();
                order.shuffle(&mut rng_for(self.base_seed, &[trial, u64::MAX]));
                (0..count)
                    .map(|j| {
                        uniform_shard(
                            order[j * s..(j + 1) * s]
                                .iter()
                                .map(|&i| records[i].clone())
                                .collect(),
                        )
                    })
                    .collect::<Result<_>>()?
            }
            DataSource::Shared(pop) => vec![pop.clone(); count],
        };
        shards
            .iter()
            .enumerate()
            .map(|(j, shard)| {
                let seed = derive_seed(self.base_seed, &[trial, j as u64, 1]);
                let model = t.learner.fit(shard, seed, eval)?;
                Ok(Draw {
                    model: Arc::new(model),
                    atom: None,
                })
            })
            .collect()
    }
}

fn sample_point(pop: &Population, u: f64) -> Point {
    let mut acc = 0.0;
    for p in pop.points() {
        acc += p.w;
        if u < acc {
            return p.clone();
        }
    }
    pop.points().last().expect("non-empty population").clone()
}

fn uniform_shard(points: Vec<Point>) -> Result<Population> {
    let w = 1.0 / points.len() as f64;
    Population::new(points.into_iter().map(|p| Point { w, ..p }).collect())
}
