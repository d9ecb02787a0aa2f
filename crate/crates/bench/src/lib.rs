//! Shared fixtures for the criterion benchmarks.

use cavitylab::phantom::{generate_phantom, PhantomPair, PhantomSpec};
use cavitylab::volume::normalize_intensity;
use cavitylab::volume::Volume;

/// One default 32^3 phantom with both scans normalized to [0, 1].
pub fn normalized_pair(seed: u64) -> (PhantomPair, Volume, Volume) {
    let pair = generate_phantom(&PhantomSpec::with_seed(seed)).expect("phantom generates");
    let (pre, _) = normalize_intensity(&pair.preop, 0.5, 99.5).expect("normalizes");
    let (post, _) = normalize_intensity(&pair.postop, 0.5, 99.5).expect("normalizes");
    (pair, pre, post)
}
