//! Training entry points that tie the trainers to a simulation setup.

use super::sim::Setup;
use crate::detection::{oamp_net_train, OampNetParams, OampTrainConfig, TrainingSample};
use crate::error::Result;
use crate::estimation::{
    ce_net_init, ce_net_train, CeNetParams, CeTrainConfig, ChannelPair, TrainOutcome,
};

pub fn ce_hyper(setup: &Setup) -> CeTrainConfig {
    let cfg = &setup.cfg;
    CeTrainConfig {
        lr: cfg.lr,
        batch: cfg.batch,
        epochs: cfg.epochs,
        seed: cfg.seed,
    }
}

pub fn oamp_hyper(setup: &Setup) -> OampTrainConfig {
    let cfg = &setup.cfg;
    OampTrainConfig {
        lr: cfg.lr,
        batch: cfg.batch,
        epochs: cfg.epochs,
        seed: cfg.seed,
        fd_step: cfg.fd_step,
    }
}

/// CE-NET initialized from the LMMSE weights at `init_snr_db` and trained
/// on the given pairs.
pub fn train_cenet(
    setup: &Setup,
    init_snr_db: f64,
    train: &[ChannelPair],
    valid: &[ChannelPair],
    hyper: &CeTrainConfig,
) -> Result<TrainOutcome<CeNetParams>> {
    let init = ce_net_init(&setup.lmmse(init_snr_db)?);
    ce_net_train(&init, train, valid, hyper)
}

/// OAMP-NET trained from all-ones parameters with the setup's layer count.
pub fn train_oampnet(
    setup: &Setup,
    train: &[TrainingSample],
    valid: &[TrainingSample],
    hyper: &OampTrainConfig,
) -> Result<TrainOutcome<OampNetParams>> {
    oamp_net_train(
        &OampNetParams::ones(setup.oamp.layers),
        train,
        valid,
        &setup.oamp,
        &setup.constellation,
        hyper,
    )
}
