//! Multi-dimensional collaborative attention over channel, frequency and time.
//!
//! Each branch squeezes the tensor to a `[mean, std]` pair per index along its
//! axis, runs a two-in one-out 1-D convolution along that axis, and the three
//! excitations are averaged into one sigmoid gate.

use ndarray::{Array1, Array2, Array4, Axis};
use rand_chacha::ChaCha8Rng;

use super::ops::{sigmoid, uniform_init};
use super::{FeatureTensor, ParamSink, ParamSinkMut};

/// Kernel size for an axis of length `dim`: odd rounding of `(log2(dim) + 1) / 2`.
pub fn excitation_kernel(dim: usize) -> usize {
    let t = (((dim.max(1) as f64).log2() + 1.0) / 2.0).floor() as usize;
    if t % 2 == 1 {
        t
    } else {
        t + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    /// `[2, k]`: row 0 weighs the mean sequence, row 1 the std sequence.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Branch {
    fn new(dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let k = excitation_kernel(dim);
        Self {
            weight: Array2::from_shape_vec((2, k), uniform_init(rng, 2 * k, 2 * k)).expect("shape"),
            bias: Array1::from(uniform_init(rng, 2 * k, 1)),
        }
    }

    fn kernel(&self) -> usize {
        self.weight.ncols()
    }

    /// `[B, n]` excitation from `[B, n]` mean and std sequences.
    fn excite(&self, mean: &Array2<f64>, std: &Array2<f64>) -> Array2<f64> {
        let (b, n) = mean.dim();
        let k = self.kernel();
        let half = (k / 2) as isize;
        Array2::from_shape_fn((b, n), |(bi, i)| {
            let mut acc = self.bias[0];
            for j in 0..k {
                let src = i as isize + j as isize - half;
                if src >= 0 && (src as usize) < n {
                    acc += self.weight[[0, j]] * mean[[bi, src as usize]] + self.weight[[1, j]] * std[[bi, src as usize]];
                }
            }
            acc
        })
    }

    /// Returns (d_mean, d_std, d_weight, d_bias) for upstream `g` `[B, n]`.
    fn backward(&self, mean: &Array2<f64>, std: &Array2<f64>, g: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>, Array1<f64>) {
        let (b, n) = mean.dim();
        let k = self.kernel();
        let half = (k / 2) as isize;
        let mut d_mean = Array2::zeros((b, n));
        let mut d_std = Array2::zeros((b, n));
        let mut d_w = Array2::zeros((2, k));
        for bi in 0..b {
            for i in 0..n {
                let gi = g[[bi, i]];
                for j in 0..k {
                    let src = i as isize + j as isize - half;
                    if src >= 0 && (src as usize) < n {
                        let src = src as usize;
                        d_mean[[bi, src]] += self.weight[[0, j]] * gi;
                        d_std[[bi, src]] += self.weight[[1, j]] * gi;
                        d_w[[0, j]] += mean[[bi, src]] * gi;
                        d_w[[1, j]] += std[[bi, src]] * gi;
                    }
                }
            }
        }
        (d_mean, d_std, d_w, Array1::from_elem(1, g.sum()))
    }
}

/// Population mean and standard deviation of every slice along `axis`.
fn squeeze(x: &FeatureTensor, axis: usize) -> (Array2<f64>, Array2<f64>) {
    let b = x.dim().0;
    let n = x.len_of(Axis(axis));
    let mut mean = Array2::zeros((b, n));
    let mut std = Array2::zeros((b, n));
    for bi in 0..b {
        let xb = x.index_axis(Axis(0), bi);
        for i in 0..n {
            let lane = xb.index_axis(Axis(axis - 1), i);
            let cnt = lane.len() as f64;
            let mu = lane.sum() / cnt;
            let var = lane.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / cnt;
            mean[[bi, i]] = mu;
            std[[bi, i]] = var.sqrt();
        }
    }
    (mean, std)
}

fn squeeze_backward(x: &FeatureTensor, axis: usize, mean: &Array2<f64>, std: &Array2<f64>, d_mean: &Array2<f64>, d_std: &Array2<f64>, dx: &mut FeatureTensor) {
    let b = x.dim().0;
    let n = x.len_of(Axis(axis));
    for bi in 0..b {
        let xb = x.index_axis(Axis(0), bi);
        let mut db = dx.index_axis_mut(Axis(0), bi);
        for i in 0..n {
            let lane = xb.index_axis(Axis(axis - 1), i);
            let mut dlane = db.index_axis_mut(Axis(axis - 1), i);
            let cnt = lane.len() as f64;
            let gm = d_mean[[bi, i]] / cnt;
            let sd = std[[bi, i]];
            // d std / dx = (x - mu) / (N std); taken as 0 at std = 0.
            let gs = if sd > 0.0 { d_std[[bi, i]] / (cnt * sd) } else { 0.0 };
            let mu = mean[[bi, i]];
            ndarray::Zip::from(&mut dlane).and(&lane).for_each(|d, &v| *d += gm + gs * (v - mu));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mca {
    pub channel: Branch,
    pub frequency: Branch,
    pub time: Branch,
}

/// Intermediates of one [`Mca::forward_cached`] call.
#[derive(Debug, Clone)]
pub struct McaCache {
    input: FeatureTensor,
    pub gate: FeatureTensor,
    stats: [(Array2<f64>, Array2<f64>); 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct McaGrads {
    pub input: FeatureTensor,
    /// `(weight, bias)` for channel, frequency, time.
    pub branches: [(Array2<f64>, Array1<f64>); 3],
}

impl Mca {
    /// Kernel sizes come from the nominal extents `(channels, freq, time)`.
    pub fn new(channels: usize, freq: usize, time: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            channel: Branch::new(channels, rng),
            frequency: Branch::new(freq, rng),
            time: Branch::new(time, rng),
        }
    }

    pub fn branches(&self) -> [&Branch; 3] {
        [&self.channel, &self.frequency, &self.time]
    }

    pub fn num_params(&self) -> usize {
        self.branches().iter().map(|b| b.weight.len() + b.bias.len()).sum()
    }

    pub fn forward(&self, x: &FeatureTensor) -> FeatureTensor {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &FeatureTensor) -> (FeatureTensor, McaCache) {
        let (b, c, f, t) = x.dim();
        let stats = [squeeze(x, 1), squeeze(x, 2), squeeze(x, 3)];
        let [e_c, e_f, e_t] = [0, 1, 2].map(|i| self.branches()[i].excite(&stats[i].0, &stats[i].1));
        let gate = Array4::from_shape_fn((b, c, f, t), |(bi, ci, fi, ti)| {
            sigmoid((e_c[[bi, ci]] + e_f[[bi, fi]] + e_t[[bi, ti]]) / 3.0)
        });
        let out = x * &gate;
        (
            out,
            McaCache {
                input: x.clone(),
                gate,
                stats,
            },
        )
    }

    pub fn backward(&self, cache: &McaCache, g: &FeatureTensor) -> McaGrads {
        let x = &cache.input;
        let (b, c, f, t) = x.dim();
        let mut dx = g * &cache.gate;
        // d pre-activation, already divided by the branch count.
        let d_pre = ndarray::Zip::from(g)
            .and(x)
            .and(&cache.gate)
            .map_collect(|&gv, &xv, &s| gv * xv * s * (1.0 - s) / 3.0);
        let sums: [Array2<f64>; 3] = [
            sum_to(&d_pre, 1, b, c),
            sum_to(&d_pre, 2, b, f),
            sum_to(&d_pre, 3, b, t),
        ];
        let mut branches: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(3);
        for (i, branch) in self.branches().into_iter().enumerate() {
            let (mean, std) = &cache.stats[i];
            let (d_mean, d_std, d_w, d_b) = branch.backward(mean, std, &sums[i]);
            squeeze_backward(x, i + 1, mean, std, &d_mean, &d_std, &mut dx);
            branches.push((d_w, d_b));
        }
        let mut it = branches.into_iter();
        McaGrads {
            input: dx,
            branches: [it.next().expect("3"), it.next().expect("3"), it.next().expect("3")],
        }
    }

    pub(crate) fn visit(&self, name: &str, sink: &mut ParamSink<'_>) {
        for (tag, br) in ["channel", "frequency", "time"].iter().zip(self.branches()) {
            sink(&format!("{name}.{tag}.weight"), br.weight.shape(), br.weight.as_slice().expect("contiguous"), true);
            sink(&format!("{name}.{tag}.bias"), br.bias.shape(), br.bias.as_slice().expect("contiguous"), true);
        }
    }

    pub(crate) fn visit_mut(&mut self, name: &str, sink: &mut ParamSinkMut<'_>) {
        for (tag, br) in ["channel", "frequency", "time"].into_iter().zip([&mut self.channel, &mut self.frequency, &mut self.time]) {
            let shape = br.weight.shape().to_vec();
            sink(&format!("{name}.{tag}.weight"), &shape, br.weight.as_slice_mut().expect("contiguous"), true);
            sink(&format!("{name}.{tag}.bias"), &[1], br.bias.as_slice_mut().expect("contiguous"), true);
        }
    }
}

/// Sums a `[B, C, F, T]` tensor down to `[B, n]` along `axis`.
fn sum_to(x: &FeatureTensor, axis: usize, b: usize, n: usize) -> Array2<f64> {
    let mut out = Array2::zeros((b, n));
    for bi in 0..b {
        let xb = x.index_axis(Axis(0), bi);
        for i in 0..n {
            out[[bi, i]] = xb.index_axis(Axis(axis - 1), i).sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::s;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    fn random(shape: (usize, usize, usize, usize), seed: u64) -> FeatureTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_simple_fn(shape, || rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn kernel_sizes_are_odd_and_grow_slowly() {
        assert_eq!(excitation_kernel(8), 3);
        assert_eq!(excitation_kernel(64), 3);
        assert_eq!(excitation_kernel(161), 5);
        assert_eq!(excitation_kernel(401), 5);
        assert_eq!(excitation_kernel(1), 1);
    }

    #[test]
    fn gate_is_in_open_unit_interval_and_shape_is_kept() {
        let mca = Mca::new(8, 10, 12, &mut ChaCha8Rng::seed_from_u64(1));
        let x = random((2, 8, 10, 12), 2);
        let (y, cache) = mca.forward_cached(&x);
        assert_eq!(y.dim(), x.dim());
        assert!(cache.gate.iter().all(|&g| g > 0.0 && g < 1.0));
        let (_, half) = mca.forward_cached(&(&x * 0.5));
        assert_ne!(half.gate, cache.gate);
    }

    #[test]
    fn constant_channels_leave_only_the_mean_path() {
        let mut mca = Mca::new(3, 4, 5, &mut ChaCha8Rng::seed_from_u64(3));
        let x = Array4::from_shape_fn((1, 3, 4, 5), |(_, c, _, _)| c as f64 - 1.0);
        let gate_before = mca.forward_cached(&x).1.gate;
        // The channel branch sees std = 0, so its std weights cannot matter.
        mca.channel.weight.row_mut(1).fill(123.0);
        assert_eq!(mca.forward_cached(&x).1.gate, gate_before);
    }

    #[test]
    fn batch_entries_do_not_mix() {
        let mca = Mca::new(4, 6, 7, &mut ChaCha8Rng::seed_from_u64(4));
        let x = random((3, 4, 6, 7), 5);
        let y = mca.forward(&x);
        let mut xp = x.clone();
        xp.slice_mut(s![0, .., .., ..]).assign(&x.slice(s![2, .., .., ..]));
        xp.slice_mut(s![2, .., .., ..]).assign(&x.slice(s![0, .., .., ..]));
        let yp = mca.forward(&xp);
        assert_eq!(yp.slice(s![0, .., .., ..]), y.slice(s![2, .., .., ..]));
        assert_eq!(yp.slice(s![1, .., .., ..]), y.slice(s![1, .., .., ..]));
    }
}
