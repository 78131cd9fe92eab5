//! Named hyperparameter settings for the five algorithm variants.

use dpocov_core::Hyperparams;
use serde::{Deserialize, Serialize};

/// KL weight shared by every preset.
pub const PRESET_BETA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Noise modeling, pessimism and length penalty together.
    DpoCov,
    /// Noise modeling only.
    RobustDpo,
    /// Pessimism only.
    PessimisticDpo,
    /// Length penalty only.
    LengthDpo,
    VanillaDpo,
}

impl Preset {
    pub const ALL: [Preset; 5] =
        [Preset::DpoCov, Preset::RobustDpo, Preset::PessimisticDpo, Preset::LengthDpo, Preset::VanillaDpo];

    pub fn name(self) -> &'static str {
        match self {
            Preset::DpoCov => "dpo-cov",
            Preset::RobustDpo => "robust-dpo",
            Preset::PessimisticDpo => "pessimistic-dpo",
            Preset::LengthDpo => "length-dpo",
            Preset::VanillaDpo => "vanilla-dpo",
        }
    }

    /// `(β, η, ω, λ)` of the main-text comparison table.
    pub fn hyperparams(self) -> Hyperparams {
        let (eta, omega, lambda) = match self {
            Preset::DpoCov => (0.0005, 0.0005, 0.7),
            Preset::RobustDpo => (0.0, 0.0, 0.1),
            Preset::PessimisticDpo => (0.005, 0.0, 1.0),
            Preset::LengthDpo => (0.0, 0.0005, 1.0),
            Preset::VanillaDpo => (0.0, 0.0, 1.0),
        };
        Hyperparams {
            beta: PRESET_BETA,
            eta,
            omega,
            lambda,
        }
    }
}

/// Variant name implied by which components are active: noise modeling
/// when `λ < 1`, pessimism when `η > 0`, length penalty when `ω > 0`.
/// Combinations without a named variant are `"custom"`.
pub fn variant_label(h: &Hyperparams) -> &'static str {
    match (h.lambda < 1.0, h.eta > 0.0, h.omega > 0.0) {
        (true, true, true) => Preset::DpoCov.name(),
        (true, false, false) => Preset::RobustDpo.name(),
        (false, true, false) => Preset::PessimisticDpo.name(),
        (false, false, true) => Preset::LengthDpo.name(),
        (false, false, false) => Preset::VanillaDpo.name(),
        _ => "custom",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_carry_their_own_labels() {
        for p in Preset::ALL {
            assert_eq!(variant_label(&p.hyperparams()), p.name());
            assert!(p.hyperparams().validate().is_ok());
        }
    }

    #[test]
    fn mixed_patterns_are_custom() {
        let h = Hyperparams::new(0.1, 0.1, 0.0, 0.5).unwrap();
        assert_eq!(variant_label(&h), "custom");
        assert_eq!(variant_label(&Hyperparams::vanilla(2.0).with_lambda(3.0)), "vanilla-dpo");
    }

    #[test]
    fn names_round_trip_through_serde() {
        for p in Preset::ALL {
            let s = serde_json::to_string(&p).unwrap();
            assert_eq!(s, format!("\"{}\"", p.name()));
            assert_eq!(serde_json::from_str::<Preset>(&s).unwrap(), p);
        }
    }
}
