pub mod build_q;
pub mod eval;
pub mod gradcheck;
pub mod optimize_e;
pub mod rectify;
pub mod refine_planes;
pub mod synth;
