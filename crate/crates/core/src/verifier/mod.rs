//! Ground-truth adversarial search.
//!
//! On quantized domains the λ-adversarial set is enumerated exactly; this is
//! the oracle against which certificates and the composition theorems are
//! checked. For inputs too large to enumerate there is a seeded greedy
//! attack, which can only ever falsify.

pub mod attack;
pub mod campaign;
pub mod enumerate;
pub mod flip;
pub mod space;
pub mod theorem;

pub use attack::{greedy_attack, AttackConfig};
pub use campaign::{run_campaign, CampaignConfig, CampaignKind, CampaignReport, PipelineOutcome, RandomPipeline};
pub use enumerate::{
    adversarial_report, enumerate_adversarial_set, find_adversarial_neighbor, tabulate, AdversarialReport,
    AdversarialSet, PerturbationBall, Tabulation, Verdict, VerifierConfig, Witness, WitnessRecord,
};
pub use flip::{minimal_flip_distortion, minimal_flip_distortion_pixelwise, FlipWitness, Pixelwise};
pub use space::{Axis, DomainRecord, GridOracle, GridTable, QuantizedSpace};
pub use theorem::{verify_parallel_theorem, verify_serial_theorem, HypothesisFailure, TheoremReport, TheoremVerdict};
