//! Training configuration: every fixed scalar plus the pinned defaults for
//! choices the training recipe leaves open.

use crate::error::{RaddError, Result};
use crate::kgdata::KnowledgeGraph;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Complex embedding dimension d (vectors are 2d wide).
    pub d: usize,
    pub batch_size: usize,
    pub n_negatives: usize,
    pub lr_kge: f64,
    pub lr_denoiser: f64,
    /// Diffusion timesteps T.
    pub t_steps: u32,
    /// Base replacement corruption probability ρ₀.
    pub rho0: f64,
    /// Head-loss weight λ_h.
    pub lambda_head: f64,
    /// Distillation weight λ_d.
    pub lambda_distill: f64,
    /// Ranking-term weight λ_r.
    pub lambda_rank: f64,
    /// Ranking margin m.
    pub margin_rank: f64,
    /// KGE margin γ.
    pub gamma_kge: f64,
    /// Self-adversarial sampling temperature.
    pub alpha_adv: f64,
    /// Distillation temperature τ.
    pub tau: f64,
    /// Candidate-pool size for distillation.
    pub pool_size: usize,
    /// Fraction of pool negatives taken from the hardest KGE scores.
    pub hard_fraction: f64,
    /// Diff-Rerank shortlist size K.
    pub shortlist_k: usize,
    /// Retriever parameters stop updating after this epoch.
    pub freeze_epoch: u64,
    pub ema_decay: f64,
    pub epochs: u64,
    pub eval_every: u64,
    pub seed: u64,
    /// Sinusoidal timestep embedding width.
    pub d_time: usize,
    /// Direction embedding width.
    pub d_dir: usize,
    /// Denoiser hidden width; 0 derives the default 4·(2d).
    pub denoiser_hidden: usize,
    /// RADD-S: structural embeddings only, gate pinned to (1, 0, 0).
    pub structure_only: bool,
    /// Ablation: train the denoiser on tail queries only.
    pub tail_only: bool,
    /// Hold distillation gradients until the retriever is frozen.
    pub distill_after_freeze: bool,
    /// Add reversed triples with fresh relation ids to the KGE training set.
    pub augment_inverse_relations: bool,
    /// Worker threads for batch/query fan-out; 1 is bitwise reproducible.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d: 250,
            batch_size: 1024,
            n_negatives: 128,
            lr_kge: 1e-4,
            lr_denoiser: 1e-4,
            t_steps: 100,
            rho0: 0.3,
            lambda_head: 2.0,
            lambda_distill: 1.0,
            lambda_rank: 0.1,
            margin_rank: 4.0,
            gamma_kge: 6.0,
            alpha_adv: 1.0,
            tau: 0.7,
            pool_size: 64,
            hard_fraction: 0.5,
            shortlist_k: 256,
            freeze_epoch: 100,
            ema_decay: 0.9999,
            epochs: 1000,
            eval_every: 50,
            seed: 0,
            d_time: 64,
            d_dir: 32,
            denoiser_hidden: 0,
            structure_only: false,
            tail_only: false,
            distill_after_freeze: false,
            augment_inverse_relations: false,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn denoiser_hidden_width(&self) -> usize {
        if self.denoiser_hidden == 0 {
            4 * 2 * self.d
        } else {
            self.denoiser_hidden
        }
    }

    /// Effective relation-table size (doubled under inverse augmentation).
    pub fn n_relations_effective(&self, n_relations: usize) -> usize {
        if self.augment_inverse_relations {
            2 * n_relations
        } else {
            n_relations
        }
    }

    /// Collects every violated constraint, not just the first.
    pub fn validate(&self, kg: &KnowledgeGraph) -> Vec<String> {
        let mut errs = Vec::new();
        let mut require = |ok: bool, msg: String| {
            if !ok {
                errs.push(msg);
            }
        };
        require(self.d >= 1, format!("d must be >= 1, got {}", self.d));
        require(self.batch_size >= 1, "batch_size must be >= 1".into());
        require(self.n_negatives >= 1, "n_negatives must be >= 1".into());
        require(self.lr_kge > 0.0, format!("lr_kge must be > 0, got {}", self.lr_kge));
        require(
            self.lr_denoiser > 0.0,
            format!("lr_denoiser must be > 0, got {}", self.lr_denoiser),
        );
        require(self.t_steps >= 1, "t_steps must be >= 1".into());
        require(
            (0.0..=1.0).contains(&self.rho0),
            format!("rho0 must be in [0, 1], got {}", self.rho0),
        );
        require(
            self.lambda_head > 0.0,
            format!("lambda_head must be > 0, got {}", self.lambda_head),
        );
        require(
            self.lambda_distill >= 0.0,
            format!("lambda_distill must be >= 0, got {}", self.lambda_distill),
        );
        require(
            self.lambda_rank >= 0.0,
            format!("lambda_rank must be >= 0, got {}", self.lambda_rank),
        );
        require(self.tau > 0.0, format!("tau must be > 0, got {}", self.tau));
        require(
            self.pool_size >= 2,
            format!("pool_size must be >= 2, got {}", self.pool_size),
        );
        require(
            self.pool_size <= kg.n_entities(),
            format!(
                "pool_size {} exceeds |E| = {}",
                self.pool_size,
                kg.n_entities()
            ),
        );
        require(
            (0.0..=1.0).contains(&self.hard_fraction),
            format!("hard_fraction must be in [0, 1], got {}", self.hard_fraction),
        );
        require(
            self.shortlist_k >= 1 && self.shortlist_k <= kg.n_entities(),
            format!(
                "shortlist_k {} outside 1..=|E| = {}",
                self.shortlist_k,
                kg.n_entities()
            ),
        );
        require(
            (0.0..=1.0).contains(&self.ema_decay),
            format!("ema_decay must be in [0, 1], got {}", self.ema_decay),
        );
        // epochs = 0 is the documented "return the initialization" path and
        // exempt from the freeze ordering constraint.
        require(
            self.epochs == 0 || self.freeze_epoch <= self.epochs,
            format!(
                "freeze_epoch {} exceeds epochs {}",
                self.freeze_epoch, self.epochs
            ),
        );
        require(self.eval_every >= 1, "eval_every must be >= 1".into());
        require(self.d_time >= 2 && self.d_time % 2 == 0, "d_time must be even and >= 2".into());
        require(self.d_dir >= 1, "d_dir must be >= 1".into());
        require(self.threads >= 1, "threads must be >= 1".into());
        require(
            kg.n_entities() >= 2,
            "training needs at least 2 entities".into(),
        );
        require(
            self.n_negatives < kg.n_entities(),
            format!(
                "n_negatives {} must be < |E| = {}",
                self.n_negatives,
                kg.n_entities()
            ),
        );
        errs
    }

    pub fn validated(&self, kg: &KnowledgeGraph) -> Result<()> {
        let errs = self.validate(kg);
        if errs.is_empty() {
            Ok(())
        } else {
            Err(RaddError::Config(errs.join("; ")))
        }
    }

    /// Canonical key=value text, sorted by key. f64 values use Rust's
    /// shortest round-trip formatting, so parse → format is the identity.
    pub fn to_kv(&self) -> String {
        let mut pairs: Vec<(&str, String)> = vec![
            ("alpha_adv", format!("{:?}", self.alpha_adv)),
            ("augment_inverse_relations", self.augment_inverse_relations.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("d", self.d.to_string()),
            ("d_dir", self.d_dir.to_string()),
            ("d_time", self.d_time.to_string()),
            ("denoiser_hidden", self.denoiser_hidden.to_string()),
            ("distill_after_freeze", self.distill_after_freeze.to_string()),
            ("ema_decay", format!("{:?}", self.ema_decay)),
            ("epochs", self.epochs.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("freeze_epoch", self.freeze_epoch.to_string()),
            ("gamma_kge", format!("{:?}", self.gamma_kge)),
            ("hard_fraction", format!("{:?}", self.hard_fraction)),
            ("lambda_distill", format!("{:?}", self.lambda_distill)),
            ("lambda_head", format!("{:?}", self.lambda_head)),
            ("lambda_rank", format!("{:?}", self.lambda_rank)),
            ("lr_denoiser", format!("{:?}", self.lr_denoiser)),
            ("lr_kge", format!("{:?}", self.lr_kge)),
            ("margin_rank", format!("{:?}", self.margin_rank)),
            ("n_negatives", self.n_negatives.to_string()),
            ("pool_size", self.pool_size.to_string()),
            ("rho0", format!("{:?}", self.rho0)),
            ("seed", self.seed.to_string()),
            ("shortlist_k", self.shortlist_k.to_string()),
            ("structure_only", self.structure_only.to_string()),
            ("t_steps", self.t_steps.to_string()),
            ("tail_only", self.tail_only.to_string()),
            ("tau", format!("{:?}", self.tau)),
            ("threads", self.threads.to_string()),
        ];
        pairs.sort_by_key(|(k, _)| *k);
        let mut out = String::new();
        for (k, v) in pairs {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// Parses the canonical key=value form; unknown keys are an error.
    pub fn from_kv(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                RaddError::Config(format!("line {}: expected key=value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            cfg.set_key(key, value).map_err(|e| {
                RaddError::Config(format!("line {}: {e}", lineno + 1))
            })?;
        }
        Ok(cfg)
    }

    /// Sets one field from its text form.
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                RaddError::Config(format!("invalid value '{value}' for key '{key}'"))
            })
        }
        match key {
            "alpha_adv" => self.alpha_adv = parse(key, value)?,
            "augment_inverse_relations" => self.augment_inverse_relations = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "d" => self.d = parse(key, value)?,
            "d_dir" => self.d_dir = parse(key, value)?,
            "d_time" => self.d_time = parse(key, value)?,
            "denoiser_hidden" => self.denoiser_hidden = parse(key, value)?,
            "distill_after_freeze" => self.distill_after_freeze = parse(key, value)?,
            "ema_decay" => self.ema_decay = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "freeze_epoch" => self.freeze_epoch = parse(key, value)?,
            "gamma_kge" => self.gamma_kge = parse(key, value)?,
            "hard_fraction" => self.hard_fraction = parse(key, value)?,
            "lambda_distill" => self.lambda_distill = parse(key, value)?,
            "lambda_head" => self.lambda_head = parse(key, value)?,
            "lambda_rank" => self.lambda_rank = parse(key, value)?,
            "lr_denoiser" => self.lr_denoiser = parse(key, value)?,
            "lr_kge" => self.lr_kge = parse(key, value)?,
            "margin_rank" => self.margin_rank = parse(key, value)?,
            "n_negatives" => self.n_negatives = parse(key, value)?,
            "pool_size" => self.pool_size = parse(key, value)?,
            "rho0" => self.rho0 = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "shortlist_k" => self.shortlist_k = parse(key, value)?,
            "structure_only" => self.structure_only = parse(key, value)?,
            "t_steps" => self.t_steps = parse(key, value)?,
            "tail_only" => self.tail_only = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            _ => {
                return Err(RaddError::Config(format!("unknown config key '{key}'")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kgdata::{synth_kg, SynthSpec};

    fn small_kg() -> KnowledgeGraph {
        synth_kg(SynthSpec {
            seed: 3,
            n_entities: 20,
            n_relations: 3,
            n_triples: 60,
            feature_dim: 4,
            feature_noise: 0.1,
        })
        .unwrap()
        .0
    }

    #[test]
    fn kv_roundtrip_is_identity() {
        let mut cfg = TrainConfig::default();
        cfg.lr_kge = 3.5e-4;
        cfg.tau = 0.7;
        cfg.structure_only = true;
        cfg.seed = 123456789;
        let text = cfg.to_kv();
        let back = TrainConfig::from_kv(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(back.to_kv(), text);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(TrainConfig::from_kv("nonsense=1\n").is_err());
        assert!(TrainConfig::from_kv("d=abc\n").is_err());
    }

    #[test]
    fn validation_collects_all_errors() {
        let kg = small_kg();
        let mut cfg = TrainConfig::default();
        cfg.d = 0;
        cfg.tau = 0.0;
        cfg.pool_size = 1;
        cfg.shortlist_k = 10_000;
        cfg.n_negatives = 4;
        cfg.epochs = 10;
        cfg.freeze_epoch = 100;
        let errs = cfg.validate(&kg);
        assert!(errs.len() >= 5, "{errs:?}");

        let mut ok = TrainConfig::default();
        ok.pool_size = 8;
        ok.shortlist_k = 10;
        ok.n_negatives = 4;
        ok.epochs = 10;
        ok.freeze_epoch = 5;
        assert!(ok.validate(&kg).is_empty());

        // epochs = 0 skips the freeze ordering constraint.
        ok.epochs = 0;
        ok.freeze_epoch = 100;
        assert!(ok.validate(&kg).is_empty());
    }

    #[test]
    fn hidden_width_defaults_to_4x() {
        let mut cfg = TrainConfig::default();
        cfg.d = 8;
        assert_eq!(cfg.denoiser_hidden_width(), 64);
        cfg.denoiser_hidden = 100;
        assert_eq!(cfg.denoiser_hidden_width(), 100);
    }
}
