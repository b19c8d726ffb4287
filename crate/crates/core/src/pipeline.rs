//! End-to-end synthetic experiments: one seed generates a source/target
//! pair and an encoder pool, trains the encoder and the source model, and
//! then runs any number of transfer variants against the target.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fgat::{train_fgat, FgatConfig, FgatModel};
use crate::numerics::Optimizer;
use crate::synth::{generate_pair, generate_pool, SynthConfig, SynthPair};
use crate::tgn::{TgnCheckpoint, TgnConfig};
use crate::transfer::{
    map_memory, pretrain_source, run_variant, Sources, Splits, TransferConfig, Variant, VariantRun,
};
use crate::transform::{transform, TransformedGraph};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub synth: SynthConfig,
    /// Extra graphs from the same model used only to train the encoder.
    pub pool_size: usize,
    pub fgat: FgatConfig,
    pub fgat_epochs: usize,
    pub source_epochs: usize,
    /// Chronological split of the source graph; the source model and the
    /// encoder pool use the training part only.
    pub source_split: (f64, f64, f64),
    /// Target split for the main transfer runs.
    pub target_split: (f64, f64, f64),
    pub transfer: TransferConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            pool_size: 4,
            fgat: FgatConfig::default(),
            fgat_epochs: 150,
            source_epochs: 10,
            source_split: (0.7, 0.15, 0.15),
            target_split: (0.1, 0.45, 0.45),
            transfer: TransferConfig {
                tgn: TgnConfig::default(),
                ..TransferConfig::default()
            },
        }
    }
}

/// Everything trained for one seed.
#[derive(Clone, Debug)]
pub struct SeedArtifacts {
    pub seed: u64,
    pub pair: SynthPair,
    pub pool: Vec<TransformedGraph>,
    pub fgat: FgatModel,
    pub fgat_losses: Vec<f64>,
    pub source: TgnCheckpoint,
    pub source_losses: Vec<f64>,
}

impl SeedArtifacts {
    pub fn build(cfg: &PipelineConfig, seed: u64) -> Result<Self> {
        if cfg.pool_size == 0 {
            return Err(Error::Invalid(
                "encoder pool must hold at least one graph".into(),
            ));
        }
        let synth = SynthConfig {
            seed,
            ..cfg.synth.clone()
        };
        let pair = generate_pair(&synth)?;
        let pool = generate_pool(&synth, cfg.pool_size)?
            .iter()
            .map(|g| transform(&g.chronological_split(cfg.source_split)?.0))
            .collect::<Result<Vec<_>>>()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fgat = FgatModel::for_pool(cfg.fgat.clone(), &pool, &mut rng)?;
        let mut opt = Optimizer::new(fgat.config.optimizer, fgat.config.lr);
        let fgat_losses = train_fgat(&mut fgat, &mut opt, &pool, cfg.fgat_epochs, &mut rng)?;
        let (src_train, _, _) = pair.source.chronological_split(cfg.source_split)?;
        let (source, source_losses) =
            pretrain_source(&src_train, &cfg.transfer.tgn, cfg.source_epochs, seed)?;
        Ok(Self {
            seed,
            pair,
            pool,
            fgat,
            fgat_losses,
            source,
            source_losses,
        })
    }

    pub fn sources(&self) -> Sources<'_> {
        Sources {
            tgn: Some(&self.source),
            fgat: Some(&self.fgat),
        }
    }

    pub fn target_splits(&self, fractions: (f64, f64, f64)) -> Result<Splits> {
        Splits::new(&self.pair.target, fractions)
    }

    /// Share of target graph nodes (as seen in `target_train`) mapped onto a
    /// planted analog.
    pub fn mapping_recovery(&self, splits: &Splits) -> Result<f64> {
        let src_graph = self.source.source.as_ref().ok_or_else(|| {
            Error::Checkpoint("source checkpoint carries no transformed graph".into())
        })?;
        let h_src = self.fgat.encode(src_graph)?;
        let h_tgt = self.fgat.encode(&transform(&splits.train)?)?;
        let (mapping, _) = map_memory(&h_src, &h_tgt, self.source.state.memory())?;
        Ok(self.pair.mapping.recovery(&mapping.pairs()))
    }

    pub fn run(
        &self,
        variant: Variant,
        splits: &Splits,
        cfg: &TransferConfig,
    ) -> Result<VariantRun> {
        run_variant(variant, self.sources(), splits, cfg, self.seed)
    }
}
