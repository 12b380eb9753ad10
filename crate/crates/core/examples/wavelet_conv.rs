//! Haar analysis/synthesis and the wavelet convolution's receptive field.

use ndarray::Array4;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wtformer_lab::net::{haar_dwt2, haar_idwt2, WtConv};

fn main() -> wtformer_lab::Result<()> {
    let x = Array4::from_shape_fn((1, 2, 16, 12), |(_, c, i, j)| ((c + 1) * i) as f64 - (j as f64).sqrt());
    let sb = haar_dwt2(&x);
    let back = haar_idwt2(&sb)?;
    let energy = |a: &Array4<f64>| a.mapv(|v| v * v).sum();
    println!("subband shape {:?}", sb.ll.dim());
    println!("round-trip max error {:.2e}", (&back - &x).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b)));
    println!(
        "energy {:.6} vs {:.6}",
        energy(&x),
        energy(&sb.ll) + energy(&sb.lh) + energy(&sb.hl) + energy(&sb.hh)
    );

    // An impulse spreads further with every wavelet level.
    let mut impulse = Array4::zeros((1, 1, 32, 32));
    impulse[[0, 0, 16, 16]] = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for levels in 0..=3 {
        let conv = WtConv::new(1, 5, levels, &mut rng);
        let response = conv.forward(&impulse)? - conv.forward(&Array4::zeros(impulse.dim()))?;
        let support = response.iter().filter(|v| v.abs() > 1e-12).count();
        println!("levels {levels}: impulse reaches {support} of 1024 outputs");
    }
    Ok(())
}
