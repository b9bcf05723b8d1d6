//! Saturated GAN objectives. Mixed samples enter the discriminator loss only
//! through the fake-slot scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Wasserstein,
    Hinge,
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wasserstein" => Ok(LossKind::Wasserstein),
            "hinge" => Ok(LossKind::Hinge),
            other => Err(Error::Parameter(format!("unknown loss `{other}`"))),
        }
    }
}

fn check_scores(name: &str, scores: &Tensor) -> Result<()> {
    if scores.numel() == 0 {
        return Err(Error::InsufficientData(format!("{name} scores are empty")));
    }
    if !scores.all_finite() {
        return Err(Error::numeric(format!("{name} scores")));
    }
    Ok(())
}

/// Discriminator loss, batch-mean reduced.
///
/// * Wasserstein: `mean(fake) - mean(real)`
/// * Hinge: `mean(relu(1 - real)) + mean(relu(1 + fake))`
pub fn d_loss(real_scores: &Tensor, fake_scores: &Tensor, kind: LossKind) -> Result<Tensor> {
    check_scores("real", real_scores)?;
    check_scores("fake/mixed", fake_scores)?;
    Ok(match kind {
        LossKind::Wasserstein => fake_scores.mean().sub(&real_scores.mean()),
        LossKind::Hinge => {
            let real_term = real_scores.neg().add_scalar(1.0).relu().mean();
            let fake_term = fake_scores.add_scalar(1.0).relu().mean();
            real_term.add(&fake_term)
        }
    })
}

/// Generator loss `-mean(D(G(z)))`, the same for both kinds.
pub fn g_loss(fake_scores: &Tensor, _kind: LossKind) -> Result<Tensor> {
    check_scores("fake", fake_scores)?;
    Ok(fake_scores.mean().neg())
}
