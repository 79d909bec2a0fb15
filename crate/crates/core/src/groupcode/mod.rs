//! Group coding: a non-adaptive pooling plan in which every subject joins
//! exactly `k` of `n_groups` groups and no two subjects share the same set of
//! groups. All group tests can run at once; a subject is called positive
//! when every one of its groups is positive.

mod decode;
mod design;
mod files;

pub use decode::{
    decode, decode_bruteforce_oracle, first_pass, retest_pass, run_group_coding, DecodeResult,
    FIRST_PASS_STAGE, RETEST_STAGE,
};
pub use design::{
    binomial_at_least, build_design, build_design_with, design_parameters, PoolingDesign,
};
pub use files::{
    read_design, read_results, read_subject_results, write_decode_output, write_design,
    write_results, DecodeFlag,
};
