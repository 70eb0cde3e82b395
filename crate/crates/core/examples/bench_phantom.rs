//! Dry run of one phantom recovery at acceptance-scale parameters.

use lungwarp_core::metrics::{dice, warp_mask};
use lungwarp_core::optimize::{run_pipeline, Modality, PipelineConfig, PipelineInput};
use lungwarp_core::phantom::{make_phantom, PhantomSpec};
use lungwarp_core::transform::jacobian_analysis;
use std::time::Instant;

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let spec = PhantomSpec::default_darkfield(seed);
    let case = make_phantom(&spec).unwrap();
    println!(
        "case {}: max truth displacement {:.2} px",
        case.name,
        case.truth_phi.max_displacement() / spec.spacing
    );
    let before_dice = dice(&case.fixed_full, &case.moving_full).unwrap();
    println!("before DICE {before_dice:.4}");

    let config = PipelineConfig::darkfield_default();
    let input = PipelineInput {
        fixed: case.fixed.clone(),
        moving: case.moving.clone(),
        fixed_partial_mask: None,
    };
    let t0 = Instant::now();
    let result = run_pipeline(&input, Modality::Darkfield, &config).unwrap();
    println!("registered in {:.1} s", t0.elapsed().as_secs_f64());
    for traj in &result.trajectories {
        println!(
            "  level {} ({}px): {} steps {:?}",
            traj.level,
            traj.size,
            traj.losses.len(),
            traj.reason
        );
    }

    let probe_tre: f64 = case
        .probe_points
        .iter()
        .map(|&p| (result.phi.apply(p) - case.truth_phi.apply(p)).norm())
        .sum::<f64>()
        / case.probe_points.len() as f64;
    println!("probe TRE {:.3} mm = {:.3} px", probe_tre, probe_tre / spec.spacing);

    let warped_mask = warp_mask(&case.moving_full, &result.phi);
    let after_dice = dice(&case.fixed_full, &warped_mask).unwrap();
    println!("after DICE {after_dice:.4}");
    let jac = jacobian_analysis(&result.phi);
    println!("folding {:.2e}, mmgjd {:.3e}", jac.folding_ratio, jac.mmgjd);
}
