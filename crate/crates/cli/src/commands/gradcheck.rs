//! `gradcheck`: central finite-difference verification of every analytic
//! gradient in the library, printed as one row per suite. Any suite above
//! its threshold fails the command.

use anyhow::{bail, Result};
use cavitylab::msssim::{msssim_cscc_grad, msssim_cscc_loss, SccVariant, SsimParams};
use cavitylab::multiscale::gaussian_kernel;
use cavitylab::rng::SplitMix64;
use cavitylab::smooth::{smooth_loss, smooth_loss_grad};
use cavitylab::tdist::{
    baseline_loss, baseline_loss_grad, tdist_grad, tdist_nll, BaselineKind, Residual, ScaleParam,
    TDistParams, TdistMode,
};
use cavitylab::volume::{BinaryMask, Dims, Volume};

struct Suite {
    name: &'static str,
    max_rel: f64,
    threshold: f64,
}

fn rel_err(analytic: f64, fd: f64, floor: f64) -> f64 {
    (analytic - fd).abs() / fd.abs().max(floor)
}

fn random_volume(dims: Dims, rng: &mut SplitMix64) -> Volume {
    Volume::from_data(dims, (0..dims.count()).map(|_| rng.next_f64()).collect()).unwrap()
}

fn check_msssim(variant: SccVariant) -> Suite {
    let name = match variant {
        SccVariant::Contrast => "msssim_cscc_grad",
        SccVariant::Structure => "msssim_scc_grad",
        SccVariant::None => "msssim_grad",
    };
    let mut params = SsimParams::with_variant(variant);
    params.window = gaussian_kernel(1.5, 2).expect("valid window");
    let mut worst = 0.0f64;
    let h = 1e-4;
    for seed in 0..5u64 {
        let mut rng = SplitMix64::new(1000 + seed);
        let dims = Dims::new(8, 8, 8);
        let x = random_volume(dims, &mut rng);
        let y = random_volume(dims, &mut rng);
        let g = msssim_cscc_grad(&x, &y, &params).expect("gradient");
        for _ in 0..20 {
            let i = rng.range_u64(dims.count() as u64) as usize;
            let mut plus = x.data().to_vec();
            let mut minus = plus.clone();
            plus[i] += h;
            minus[i] -= h;
            let (fp, _) =
                msssim_cscc_loss(&Volume::from_data(dims, plus).unwrap(), &y, &params).unwrap();
            let (fm, _) =
                msssim_cscc_loss(&Volume::from_data(dims, minus).unwrap(), &y, &params).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            worst = worst.max(rel_err(g.data()[i], fd, 1e-6));
        }
    }
    Suite {
        name,
        max_rel: worst,
        threshold: 1e-5,
    }
}

fn check_smooth() -> Suite {
    let mut worst = 0.0f64;
    let h = 1e-5;
    for seed in 0..5u64 {
        let mut rng = SplitMix64::new(2000 + seed);
        let dims = Dims::new(6, 6, 6);
        let v = random_volume(dims, &mut rng);
        let g = smooth_loss_grad(&v);
        for _ in 0..20 {
            let i = rng.range_u64(dims.count() as u64) as usize;
            let mut plus = v.data().to_vec();
            let mut minus = plus.clone();
            plus[i] += h;
            minus[i] -= h;
            let fd = (smooth_loss(&Volume::from_data(dims, plus).unwrap())
                - smooth_loss(&Volume::from_data(dims, minus).unwrap()))
                / (2.0 * h);
            worst = worst.max(rel_err(g.data()[i], fd, 1e-8));
        }
    }
    Suite {
        name: "smooth_loss_grad",
        max_rel: worst,
        threshold: 1e-6,
    }
}

fn check_tdist(mode: TdistMode) -> Suite {
    let name = match mode {
        TdistMode::PerVoxel => "tdist_grad(per_voxel)",
        TdistMode::Joint => "tdist_grad(joint)",
    };
    let mut worst = 0.0f64;
    let h = 1e-5;
    for seed in 0..5u64 {
        let mut rng = SplitMix64::new(3000 + seed);
        let dims = Dims::new(4, 4, 4);
        let res = Residual::new(
            Volume::from_data(
                dims,
                (0..dims.count())
                    .map(|_| 4.0 * rng.next_f64() - 2.0)
                    .collect(),
            )
            .unwrap(),
        );
        let p = TDistParams {
            rho_r: rng.range_f64(-0.5, 1.5),
            s: ScaleParam::Shared(rng.range_f64(-1.0, 1.0)),
            mode,
        };
        let g = tdist_grad(&res, &p).unwrap();
        for _ in 0..20 {
            let i = rng.range_u64(dims.count() as u64) as usize;
            let mut plus = res.values().data().to_vec();
            let mut minus = plus.clone();
            plus[i] += h;
            minus[i] -= h;
            let fp = tdist_nll(
                &Residual::new(Volume::from_data(dims, plus).unwrap()),
                &p,
            )
            .unwrap();
            let fm = tdist_nll(
                &Residual::new(Volume::from_data(dims, minus).unwrap()),
                &p,
            )
            .unwrap();
            worst = worst.max(rel_err(g.d_res.data()[i], (fp - fm) / (2.0 * h), 1e-8));
        }
        // parameter gradients
        let mut pp = p.clone();
        pp.rho_r += h;
        let mut pm = p.clone();
        pm.rho_r -= h;
        let fd = (tdist_nll(&res, &pp).unwrap() - tdist_nll(&res, &pm).unwrap()) / (2.0 * h);
        worst = worst.max(rel_err(g.d_rho_r, fd, 1e-8));
        if let (ScaleParam::Shared(s0), ScaleParam::Shared(gs)) = (&p.s, &g.d_s) {
            let mut pp = p.clone();
            pp.s = ScaleParam::Shared(s0 + h);
            let mut pm = p.clone();
            pm.s = ScaleParam::Shared(s0 - h);
            let fd = (tdist_nll(&res, &pp).unwrap() - tdist_nll(&res, &pm).unwrap()) / (2.0 * h);
            worst = worst.max(rel_err(*gs, fd, 1e-8));
        }
    }
    Suite {
        name,
        max_rel: worst,
        threshold: 1e-6,
    }
}

fn check_baseline(kind: BaselineKind) -> Suite {
    let name = match kind {
        BaselineKind::Ce => "baseline_grad(CE)",
        BaselineKind::Bce => "baseline_grad(BCE)",
        BaselineKind::Focal => "baseline_grad(Focal)",
        BaselineKind::Mse => "baseline_grad(MSE)",
        BaselineKind::Mae => "baseline_grad(MAE)",
    };
    let mut worst = 0.0f64;
    let h = 1e-5;
    let gamma = 2.0;
    for seed in 0..5u64 {
        let mut rng = SplitMix64::new(4000 + seed);
        let dims = Dims::new(4, 4, 4);
        let label = BinaryMask::from_data(
            dims,
            (0..dims.count()).map(|_| rng.next_bool(0.4)).collect(),
        )
        .unwrap();
        let pred = Volume::from_data(
            dims,
            (0..dims.count())
                .map(|_| rng.range_f64(0.05, 0.95))
                .collect(),
        )
        .unwrap();
        let g = baseline_loss_grad(kind, &pred, &label, gamma).unwrap();
        for _ in 0..20 {
            let i = rng.range_u64(dims.count() as u64) as usize;
            let mut plus = pred.data().to_vec();
            let mut minus = plus.clone();
            plus[i] += h;
            minus[i] -= h;
            let fp =
                baseline_loss(kind, &Volume::from_data(dims, plus).unwrap(), &label, gamma)
                    .unwrap();
            let fm =
                baseline_loss(kind, &Volume::from_data(dims, minus).unwrap(), &label, gamma)
                    .unwrap();
            worst = worst.max(rel_err(g.data()[i], (fp - fm) / (2.0 * h), 1e-8));
        }
    }
    Suite {
        name,
        max_rel: worst,
        threshold: 1e-6,
    }
}

pub fn run_gradcheck() -> Result<()> {
    let start = std::time::Instant::now();
    let mut suites = vec![
        check_msssim(SccVariant::Contrast),
        check_msssim(SccVariant::Structure),
        check_msssim(SccVariant::None),
        check_smooth(),
        check_tdist(TdistMode::PerVoxel),
        check_tdist(TdistMode::Joint),
    ];
    suites.extend(BaselineKind::ALL.map(check_baseline));

    let mut all_ok = true;
    println!("{:<24} {:>12} {:>10}  result", "suite", "max_rel_err", "threshold");
    for s in &suites {
        let ok = s.max_rel <= s.threshold;
        all_ok &= ok;
        println!(
            "{:<24} {:>12.3e} {:>10.0e}  {}",
            s.name,
            s.max_rel,
            s.threshold,
            if ok { "ok" } else { "FAIL" }
        );
    }
    println!("gradcheck finished in {:?}", start.elapsed());
    if !all_ok {
        bail!("finite-difference check failed");
    }
    Ok(())
}
