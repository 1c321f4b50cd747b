//! ReLU activation regions: patterns, pattern-induced linear maps, lemma
//! checks, and the two-moons demo.

mod lemmas;
mod mlp;
pub mod two_moons;

pub use lemmas::{
    first_layer_boundedness_check, fragment_bound_check, fragment_bound_check_all, rank_one_of, verify_rank_one_lemma,
    BoundednessReport, FragmentReport, Grid, RankOneReport, KERNEL_RADII, RANK_ONE_TOLERANCE, RANK_TOLERANCE,
};
pub use mlp::{
    activation_pattern, hamming, mlp_forward, pattern_linear_map, ActivationPattern, DenseLayer, Forward, MlpSpec,
};
pub use two_moons::{run_two_moons, two_moons_demo, TwoMoonsConfig, TwoMoonsOutput, WeightSource};
