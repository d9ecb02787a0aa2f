use cavitylab::metrics::overlap_metrics;
use cavitylab::optim::{fit_weak, FitConfig, WeakLoss};
use cavitylab::phantom::{corrupt_mask, generate_phantom, voxel_features, CorruptionSpec, PhantomSpec};
use cavitylab::rng::case_seed;
use cavitylab::tdist::{softplus_inv, ScaleParam, TDistParams, TdistMode, SAFEGUARD_EPS};
use cavitylab::volume::{binarize, normalize_intensity};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::time::Instant;

fn main() {
    for per_voxel in [true, false] {
        for (lr, iters) in [(0.1, 300), (0.1, 600), (0.05, 600)] {
            let t0 = Instant::now();
            let rows: Vec<(String, f64)> = (0..10u64)
                .into_par_iter()
                .flat_map(|case| {
                    let seed = case_seed(0, case);
                    let spec = PhantomSpec::with_seed(seed);
                    let pair = generate_phantom(&spec).unwrap();
                    let (pre, _) = normalize_intensity(&pair.preop, 0.5, 99.5).unwrap();
                    let (post, _) = normalize_intensity(&pair.postop, 0.5, 99.5).unwrap();
                    let corr = CorruptionSpec {
                        flip_rate: 0.3,
                        seed: case_seed(seed, 17),
                        ..CorruptionSpec::default()
                    };
                    let weak = corrupt_mask(&pair.gt_mask, &corr).unwrap();
                    let mut features = voxel_features(&pre);
                    features.extend(voxel_features(&post));
                    let cfg = FitConfig {
                        lr_main: lr,
                        max_iters: iters,
                        patience: 100,
                        ..FitConfig::default()
                    };
                    WeakLoss::ALL
                        .into_iter()
                        .map(|loss| {
                            let mut td = TDistParams::init_unit(TdistMode::PerVoxel);
                            if per_voxel {
                                let raw = softplus_inv(1.0 - SAFEGUARD_EPS);
                                td.s = ScaleParam::PerVoxel(vec![raw; pair.gt_mask.len()]);
                            }
                            let fit = fit_weak(&features, &weak, loss, &td, &cfg).unwrap();
                            let pred = fit.predictor.predict(&features).unwrap();
                            let mask = binarize(&pred, cfg.threshold);
                            let dice = overlap_metrics(&mask, &pair.gt_mask).unwrap().dice;
                            (loss.name().to_string(), dice)
                        })
                        .collect::<Vec<_>>()
                })
                .collect();
            let mut by_loss: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for (loss, d) in &rows {
                by_loss.entry(loss.clone()).or_default().push(*d);
            }
            print!("sigma_per_voxel={per_voxel} lr={lr} iters={iters}:");
            for (loss, dices) in &by_loss {
                let mean: f64 = dices.iter().sum::<f64>() / dices.len() as f64;
                print!(" {loss}={mean:.4}");
            }
            println!(" wall {:?}", t0.elapsed());
        }
    }
}
