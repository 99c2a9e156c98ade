//! Local training on one client: R mini-batch SGD steps on the regularized
//! objective, then a one-bit sketch of the result.

use rand::seq::SliceRandom;

use crate::data::{ClientPartition, Dataset};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::ModelSpec;
use crate::objective::{ClientProblem, HyperParams};
use crate::rng::{self, StreamRng};
use crate::sketch::{ConsensusVector, OneBitSketch, SketchOperator};

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    /// Personalized model.
    pub model: Vec<f64>,
    /// Aggregation weight, `N_k / N`.
    pub weight: f64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub rng: StreamRng,
}

impl ClientState {
    /// A client whose mini-batch stream is derived from the master seed.
    pub fn new(id: usize, model: Vec<f64>, weight: f64, partition: ClientPartition, seed: u64) -> Self {
        Self {
            id,
            model,
            weight,
            train: partition.train,
            test: partition.test,
            rng: rng::client_stream(seed, id),
        }
    }
}

/// Hands out mini-batches for one round. The training indices are shuffled
/// when the round starts and consumed in consecutive chunks; when fewer than
/// `batch_size` indices remain, the order is reshuffled.
#[derive(Debug)]
pub struct BatchSampler<'a> {
    rng: &'a mut StreamRng,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl<'a> BatchSampler<'a> {
    pub fn new(indices: &[usize], batch_size: usize, rng: &'a mut StreamRng) -> Result<Self> {
        if batch_size == 0 || batch_size > indices.len() {
            return Err(Error::InvalidConfig(format!(
                "batch size {batch_size} does not fit a training partition of {}",
                indices.len()
            )));
        }
        let mut order = indices.to_vec();
        order.shuffle(rng);
        Ok(Self {
            rng,
            order,
            batch_size,
            pos: 0,
        })
    }

    pub fn next_batch(&mut self) -> &[usize] {
        if self.pos + self.batch_size > self.order.len() {
            self.order.shuffle(self.rng);
            self.pos = 0;
        }
        let start = self.pos;
        self.pos += self.batch_size;
        &self.order[start..self.pos]
    }
}

/// Runs `steps` iterations of `w ← w − η·grad(w, batch)` and returns the
/// final iterate. Shared by the personalized update and the baselines.
pub fn local_sgd<G>(
    w: &[f64],
    train: &[usize],
    rng: &mut StreamRng,
    steps: usize,
    eta: f64,
    batch_size: usize,
    mut grad: G,
) -> Result<Vec<f64>>
where
    G: FnMut(&[f64], &[usize]) -> Result<Vec<f64>>,
{
    let mut w = w.to_vec();
    if steps == 0 {
        return Ok(w);
    }
    let mut sampler = BatchSampler::new(train, batch_size, rng)?;
    for _ in 0..steps {
        let g = grad(&w, sampler.next_batch())?;
        linalg::axpy(-eta, &g, &mut w);
    }
    if !linalg::all_finite(&w) {
        return Err(Error::numeric("local model after SGD"));
    }
    Ok(w)
}

/// One client round: R SGD steps on `F̃_k(·; v)` from the current model,
/// then `quantize(Φw)`. Numeric failures are tagged with the client id.
pub fn client_update(
    state: &ClientState,
    v: &ConsensusVector,
    op: &SketchOperator,
    spec: &ModelSpec,
    hp: &HyperParams,
    data: &Dataset,
) -> Result<(OneBitSketch, ClientState)> {
    if v.len() != op.sketch_dim() {
        return Err(Error::InvalidArgument(format!(
            "consensus has dimension {}, operator sketches to {}",
            v.len(),
            op.sketch_dim()
        )));
    }
    let problem = ClientProblem { spec, op, hp, data };
    let mut next = state.clone();
    let tag = |e: Error| Error::Client {
        client: state.id,
        source: Box::new(e),
    };
    next.model = local_sgd(
        &state.model,
        &state.train,
        &mut next.rng,
        hp.local_steps,
        hp.eta,
        hp.batch_size,
        |w, batch| problem.grad(w, v, batch),
    )
    .map_err(tag)?;
    let sketch = op.sketch(&next.model).map_err(tag)?;
    Ok((sketch, next))
}
