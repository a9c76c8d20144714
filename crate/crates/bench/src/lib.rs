//! Benchmarks live in `benches/`; this crate only provides shared fixtures.

use std::sync::Arc;

use phi4_core::gaussian::sample_gff;
use phi4_core::{RealField, RngPolicy, TorusGrid};

pub fn gff_field(n: usize) -> (Arc<TorusGrid>, RealField) {
    let g = TorusGrid::new(4.0, n).expect("valid grid");
    let f = sample_gff(&g, &RngPolicy::new(1), 0);
    (g, f)
}
