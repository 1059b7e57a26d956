//! A [`PoseNet`] bundled with its parameters and the two trainable
//! loss-balancing scalars.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::PipelineError;
use crate::losses::LossWeights;
use crate::nets::{NetConfig, ParamId, ParamStore, PoseNet, Tensor};

#[derive(Debug, Clone)]
pub struct Model {
    pub net: PoseNet,
    pub store: ParamStore,
    pub w_x: ParamId,
    pub w_q: ParamId,
}

impl Model {
    pub fn new(config: NetConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = PoseNet::new(config, &mut store, &mut rng);
        let defaults = LossWeights::default();
        let w_x = store.add("uncertainty.w_x", Tensor::filled(&[1], defaults.w_x));
        let w_q = store.add("uncertainty.w_q", Tensor::filled(&[1], defaults.w_q));
        Self {
            net,
            store,
            w_x,
            w_q,
        }
    }

    pub fn config(&self) -> &NetConfig {
        &self.net.config
    }

    /// Current `(w_x, w_q)`.
    pub fn uncertainty(&self) -> (f64, f64) {
        (
            self.store.get(self.w_x).item(),
            self.store.get(self.w_q).item(),
        )
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        self.store.save(path, self.config().hash())
    }

    /// Loads weights saved by [`Model::save`] for a network built from `config`.
    pub fn load(path: &Path, config: NetConfig) -> Result<Self, PipelineError> {
        let mut model = Self::new(config, 0);
        let hash = model.config().hash();
        model.store.load_into(path, hash)?;
        Ok(model)
    }

    /// Checks that an `height x width` input fits the pyramid.
    pub fn check_input(&self, height: usize, width: usize) -> Result<(), PipelineError> {
        let d = self.config().divisor();
        if !height.is_multiple_of(d) || !width.is_multiple_of(d) {
            return Err(crate::error::ShapeError::Indivisible {
                op: "model input",
                dims: vec![height, width],
                divisor: d,
            }
            .into());
        }
        Ok(())
    }
}
