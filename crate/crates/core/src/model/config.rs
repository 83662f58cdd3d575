use std::fmt;
use std::str::FromStr;

use crate::error::{Result, TnpError};
use crate::io::config::KvConfig;

/// Decoder variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Autoregressive conditionals (TNP-A).
    Autoregressive,
    /// Independent per-target Gaussians (TNP-D).
    Diagonal,
    /// Joint Gaussian over targets (TNP-ND).
    NonDiagonal,
}

impl FromStr for Variant {
    type Err = TnpError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" | "tnp-a" | "autoregressive" => Ok(Self::Autoregressive),
            "d" | "tnp-d" | "diagonal" => Ok(Self::Diagonal),
            "nd" | "tnp-nd" | "nondiagonal" => Ok(Self::NonDiagonal),
            other => Err(TnpError::Config(format!("unknown variant '{other}'"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Autoregressive => "a",
            Self::Diagonal => "d",
            Self::NonDiagonal => "nd",
        })
    }
}

/// Covariance parameterization of the joint head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CovarianceHead {
    /// `L = lower(H H^T) + eps I`.
    Cholesky,
    /// `Sigma = diag(exp d) + H H^T`.
    LowRank,
}

impl FromStr for CovarianceHead {
    type Err = TnpError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cholesky" => Ok(Self::Cholesky),
            "lowrank" => Ok(Self::LowRank),
            other => Err(TnpError::Config(format!("unknown covariance head '{other}'"))),
        }
    }
}

impl fmt::Display for CovarianceHead {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cholesky => "cholesky",
            Self::LowRank => "lowrank",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub dim_x: usize,
    pub dim_y: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ff_width: usize,
    pub n_embed_layers: usize,
    pub nd_extra_layers: usize,
    pub nd_proj_dim: usize,
    pub nd_proj_layers: usize,
    pub nd_covariance: CovarianceHead,
    pub lowrank_rank: usize,
    pub dropout: f64,
}

impl ModelConfig {
    /// Full-size hyperparameters: width 64, 6 layers, 4 heads.
    pub fn full(variant: Variant) -> Self {
        Self {
            variant,
            dim_x: 1,
            dim_y: 1,
            d_model: 64,
            n_layers: 6,
            n_heads: 4,
            ff_width: 128,
            n_embed_layers: 4,
            nd_extra_layers: 2,
            nd_proj_dim: 20,
            nd_proj_layers: 4,
            nd_covariance: CovarianceHead::Cholesky,
            lowrank_rank: 20,
            dropout: 0.0,
        }
    }

    /// Desk-scale default: width 32, 4 layers, 2 heads.
    pub fn desk(variant: Variant) -> Self {
        Self {
            d_model: 32,
            n_layers: 4,
            n_heads: 2,
            ff_width: 64,
            ..Self::full(variant)
        }
    }

    /// Tiny model for gradient checks.
    pub fn miniature(variant: Variant) -> Self {
        Self {
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            ff_width: 16,
            n_embed_layers: 2,
            nd_extra_layers: 1,
            nd_proj_dim: 4,
            nd_proj_layers: 2,
            lowrank_rank: 3,
            ..Self::full(variant)
        }
    }

    /// Width of an input token: `x`, `y`, and one observed flag per label dimension.
    pub fn token_width(&self) -> usize {
        self.dim_x + 2 * self.dim_y
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.dim_x,
            self.dim_y,
            self.d_model,
            self.n_layers,
            self.n_heads,
            self.ff_width,
            self.n_embed_layers,
        ];
        if positive.contains(&0) {
            return Err(TnpError::Config(format!("zero-sized field in {self:?}")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(TnpError::Config(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TnpError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.variant == Variant::NonDiagonal {
            if self.dim_y != 1 {
                return Err(TnpError::Config("joint head supports dim_y = 1 only".into()));
            }
            if self.nd_proj_dim == 0 || self.nd_proj_layers == 0 || self.lowrank_rank == 0 {
                return Err(TnpError::Config("joint head sizes must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("variant", self.variant);
        kv.set("dim_x", self.dim_x);
        kv.set("dim_y", self.dim_y);
        kv.set("d_model", self.d_model);
        kv.set("n_layers", self.n_layers);
        kv.set("n_heads", self.n_heads);
        kv.set("ff_width", self.ff_width);
        kv.set("n_embed_layers", self.n_embed_layers);
        kv.set("nd_extra_layers", self.nd_extra_layers);
        kv.set("nd_proj_dim", self.nd_proj_dim);
        kv.set("nd_proj_layers", self.nd_proj_layers);
        kv.set("nd_covariance", self.nd_covariance);
        kv.set("lowrank_rank", self.lowrank_rank);
        kv.set("dropout", self.dropout);
        kv
    }

    /// Reads a config; missing keys fall back to the desk profile (or the full profile when
    /// `profile=full`).
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let variant: Variant = kv.require("variant")?;
        let base = match kv.raw("profile") {
            None | Some("desk") => Self::desk(variant),
            Some("full") => Self::full(variant),
            Some("mini") => Self::miniature(variant),
            Some(p) => return Err(TnpError::Config(format!("unknown profile '{p}'"))),
        };
        let cfg = Self {
            variant,
            dim_x: kv.get_or("dim_x", base.dim_x)?,
            dim_y: kv.get_or("dim_y", base.dim_y)?,
            d_model: kv.get_or("d_model", base.d_model)?,
            n_layers: kv.get_or("n_layers", base.n_layers)?,
            n_heads: kv.get_or("n_heads", base.n_heads)?,
            ff_width: kv.get_or("ff_width", base.ff_width)?,
            n_embed_layers: kv.get_or("n_embed_layers", base.n_embed_layers)?,
            nd_extra_layers: kv.get_or("nd_extra_layers", base.nd_extra_layers)?,
            nd_proj_dim: kv.get_or("nd_proj_dim", base.nd_proj_dim)?,
            nd_proj_layers: kv.get_or("nd_proj_layers", base.nd_proj_layers)?,
            nd_covariance: kv.get_or("nd_covariance", base.nd_covariance)?,
            lowrank_rank: kv.get_or("lowrank_rank", base.lowrank_rank)?,
            dropout: kv.get_or("dropout", base.dropout)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Conditional neural process sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct CnpConfig {
    pub dim_x: usize,
    pub dim_y: usize,
    pub width: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
}

impl CnpConfig {
    pub fn new(dim_x: usize, dim_y: usize) -> Self {
        Self {
            dim_x,
            dim_y,
            width: 64,
            encoder_layers: 4,
            decoder_layers: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.dim_x, self.dim_y, self.width, self.encoder_layers, self.decoder_layers].contains(&0) {
            return Err(TnpError::Config(format!("zero-sized field in {self:?}")));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("variant", "cnp");
        kv.set("dim_x", self.dim_x);
        kv.set("dim_y", self.dim_y);
        kv.set("width", self.width);
        kv.set("encoder_layers", self.encoder_layers);
        kv.set("decoder_layers", self.decoder_layers);
        kv
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let base = Self::new(kv.get_or("dim_x", 1)?, kv.get_or("dim_y", 1)?);
        let cfg = Self {
            width: kv.get_or("width", base.width)?,
            encoder_layers: kv.get_or("encoder_layers", base.encoder_layers)?,
            decoder_layers: kv.get_or("decoder_layers", base.decoder_layers)?,
            ..base
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let p = ModelConfig::full(Variant::NonDiagonal);
        assert_eq!((p.d_model, p.n_layers, p.n_heads, p.ff_width), (64, 6, 4, 128));
        assert_eq!((p.n_embed_layers, p.nd_extra_layers, p.nd_proj_dim, p.nd_proj_layers), (4, 2, 20, 4));
        let d = ModelConfig::desk(Variant::Diagonal);
        assert_eq!((d.d_model, d.n_layers, d.n_heads), (32, 4, 2));
        assert_eq!(d.token_width(), 3);
    }

    #[test]
    fn kv_round_trip() {
        for v in [Variant::Autoregressive, Variant::Diagonal, Variant::NonDiagonal] {
            let mut c = ModelConfig::miniature(v);
            c.nd_covariance = CovarianceHead::LowRank;
            assert_eq!(ModelConfig::from_kv(&c.to_kv()).unwrap(), c);
        }
        let c = CnpConfig::new(2, 3);
        assert_eq!(CnpConfig::from_kv(&c.to_kv()).unwrap(), c);
        assert!("x".parse::<Variant>().is_err());
    }

    #[test]
    fn rejects_bad_heads() {
        let mut c = ModelConfig::desk(Variant::Diagonal);
        c.n_heads = 3;
        assert!(c.validate().is_err());
    }
}
