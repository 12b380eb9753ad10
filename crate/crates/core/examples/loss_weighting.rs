//! Uncertainty-weighted combination of the enhancement and spatial losses.

use wtformer_lab::loss::{l_ns, l_ps, l_total, l_total_grad, write_loss_csv, LossRecord, LossWeights};
use wtformer_lab::scene::synth::NoiseKind;
use wtformer_lab::scene::{simulate_synthetic, RirOptions, SceneConfig};
use wtformer_lab::spatial::MusicConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = SceneConfig {
        snr_db: [-5.0, -5.0],
        ..SceneConfig::default()
    };
    let ex = simulate_synthetic(2, &config, NoiseKind::Pink, &RirOptions::default())?;
    let lns = l_ns(&ex.mixture, &ex.target_early)?;
    let lps = l_ps(&ex.mixture, &ex.target_early, &MusicConfig::default())?;
    println!("noisy input: L_ns {lns:.3}, L_ps {lps:.3e}");
    let unit = LossWeights::default();
    println!("l_total at sigma = 1: {:.4}, d/dlog sigma = {:?}", l_total(lns, lps, &unit), l_total_grad(lns, lps, &unit));

    // Gradient descent on the log-sigmas with the task losses frozen. Each
    // sigma^2 settles at 10 L_ns and L_ps respectively; a negative L_ns has no
    // such minimum and sigma1 collapses.
    let (lns, lps) = (lns.max(0.2), lps.max(1e-3));
    let mut w = LossWeights::default();
    let mut log = Vec::new();
    for step in 0..400 {
        if step % 50 == 0 {
            log.push(LossRecord::new(step, lns, lps, &w));
        }
        let g = l_total_grad(lns, lps, &w);
        w.log_sigma1 -= 0.02 * g[0];
        w.log_sigma2 -= 0.02 * g[1];
    }
    write_loss_csv(std::io::stdout().lock(), &log)?;
    println!(
        "sigma1^2 = {:.4} (10 L_ns = {:.4}), sigma2^2 = {:.4e} (L_ps = {:.4e})",
        w.sigma1().powi(2),
        10.0 * lns,
        w.sigma2().powi(2),
        lps
    );
    Ok(())
}
