//! Social-influence dynamics from face-to-face contact logs and
//! experience-sampling surveys.
//!
//! The crate covers the whole measurement-to-inference path:
//!
//! * [`data_model`] parses infrared contact logs, survey answers and trait
//!   questionnaires into validated domain types.
//! * [`scoring`] turns item answers into state scores, tertile levels and
//!   z-scored traits.
//! * [`network`] builds per-ego contact windows between consecutive surveys
//!   and the level-stratified contact intensities.
//! * [`transitions`] assembles level transitions into logistic design rows.
//! * [`gee`] fits marginal logistic models by generalized estimating
//!   equations, with sandwich inference, QICC and backward elimination.
//! * [`influence`] maps fitted models onto attraction / repulsion / inertia /
//!   push labels and runs the SISa contagion test.
//! * [`simulator`] generates synthetic corpora with planted ground truth.
//! * [`diagnostics`] holds the diurnal ANOVA and Tukey HSD checks.
//! * [`report`] and [`commands`] glue everything into file-based batch steps.

pub mod commands;
pub mod data_model;
pub mod diagnostics;
pub mod gee;
pub mod influence;
pub mod network;
pub mod report;
pub mod scoring;
pub mod simulator;
pub mod stats;
pub mod transitions;

pub use data_model::{Level, ParticipantId, Period, Slot};

/// Serializes a map as a list of `[key, value]` pairs, for maps whose keys
/// are not strings (JSON objects only allow string keys).
pub(crate) mod serde_pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<K: Serialize, V: Serialize, S: Serializer>(map: &BTreeMap<K, V>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(map.iter())
    }

    pub fn deserialize<'de, K, V, D>(d: D) -> Result<BTreeMap<K, V>, D::Error>
    where
        K: Deserialize<'de> + Ord,
        V: Deserialize<'de>,
        D: Deserializer<'de>,
    {
        Ok(Vec::<(K, V)>::deserialize(d)?.into_iter().collect())
    }
}
