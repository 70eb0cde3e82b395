//! Rough timing probe for a production-scale dark-field registration.

use lungwarp_core::imaging::{gaussian_smooth, shift_horizontal, Grid2D, Image2D, Vec2};
use lungwarp_core::optimize::{run_pipeline, Modality, PipelineConfig, PipelineInput};
use std::time::Instant;

fn main() {
    let g = Grid2D::new(256, 256, 1.66, Vec2::ZERO).unwrap();
    let mut state = 12345u64;
    let mut rnd = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let noise = Image2D::new(g, (0..g.len()).map(|_| rnd()).collect()).unwrap();
    let base = gaussian_smooth(&noise, 2.0).unwrap();
    // Lung-like blob envelope so the content is spatially bounded.
    let values: Vec<f64> = base
        .values
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let (i, j) = ((k % 256) as f64, (k / 256) as f64);
            let d = ((i - 128.0) / 80.0).powi(2) + ((j - 128.0) / 100.0).powi(2);
            let env = (-d).exp();
            0.02 + env * (0.5 + 0.5 * v)
        })
        .collect();
    let fixed = Image2D::new(g, values).unwrap();
    let moving = shift_horizontal(&fixed, 9).unwrap();

    let config = PipelineConfig::darkfield_default();
    let input = PipelineInput { fixed, moving, fixed_partial_mask: None };
    let t0 = Instant::now();
    let result = run_pipeline(&input, Modality::Darkfield, &config).unwrap();
    println!("total: {:.1} s", t0.elapsed().as_secs_f64());
    for traj in &result.trajectories {
        println!(
            "level {} ({}px): {} steps, reason {:?}, loss {:.5} -> {:.5}",
            traj.level,
            traj.size,
            traj.losses.len(),
            traj.reason,
            traj.losses[0],
            traj.losses.last().unwrap()
        );
    }
    let max_u = result.phi.max_displacement() / 1.66;
    println!("max displacement: {max_u:.2} px");
}
