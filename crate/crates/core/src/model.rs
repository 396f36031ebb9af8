//! Network dimensions and the combined parameter layout of the agent.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::curiosity::Icm;
use crate::error::{Error, Result};
use crate::nn::{Layout, ParamVector};
use crate::told::Told;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    /// Hidden widths of the dynamics, reward, Q and policy networks.
    pub head_hidden: Vec<usize>,
    pub inverse_hidden: Vec<usize>,
    pub action_encoder_hidden: Vec<usize>,
    pub action_latent_dim: usize,
    pub twin_q: bool,
}

impl ModelDims {
    /// Default widths for the given observation and action sizes.
    pub fn new(obs_dim: usize, action_dim: usize) -> Self {
        Self {
            obs_dim,
            action_dim,
            latent_dim: 50,
            encoder_hidden: vec![256, 256],
            head_hidden: vec![256, 256],
            inverse_hidden: vec![512, 512],
            action_encoder_hidden: vec![512],
            action_latent_dim: 16,
            twin_q: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.obs_dim == 0 || self.action_dim == 0 || self.latent_dim == 0 || self.action_latent_dim == 0 {
            return Err(Error::InvalidConfig("model dimensions must be >= 1".into()));
        }
        Ok(())
    }
}

/// TOLD networks plus the curiosity module, all addressing one [`Layout`].
///
/// Parameter groups:
/// - online TOLD (`encoder.`, `dynamics.`, `reward.`, `q0.`/`q1.`, `policy.`)
/// - targets (`target_encoder.`, `target_q0.`/`target_q1.`)
/// - inverse model `inverse.`, action encoder `action_encoder.`, contrastive matrix `contrastive.`
#[derive(Debug, Clone)]
pub struct AgentModel {
    pub dims: ModelDims,
    pub told: Told,
    pub icm: Icm,
    layout: Arc<Layout>,
}

impl AgentModel {
    pub fn new(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        let mut layout = Layout::new();
        let told = Told::register(&dims, &mut layout)?;
        let icm = Icm::register(&dims, &mut layout)?;
        layout.validate()?;
        Ok(Self {
            dims,
            told,
            icm,
            layout: Arc::new(layout),
        })
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn zero_params(&self) -> ParamVector {
        ParamVector::zeros(self.layout.clone())
    }

    /// Random online parameters with targets copied from them.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamVector> {
        let mut p = self.zero_params();
        self.told.init(&mut p, rng)?;
        self.icm.init(&mut p, rng);
        Ok(p)
    }
}
