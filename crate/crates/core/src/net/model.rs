//! Full network: packed spectrogram in, MIMO complex mask and enhanced
//! spectrogram out.

use ndarray::{concatenate, Array1, Axis};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::blocks::{StageSpec, TransWtBlock, WtBlock};
use super::conformer::TfConformer;
use super::config::ModelConfig;
use super::mask::{apply_cirm, ComplexMask, MaskGenerator};
use super::mca::Mca;
use super::{FeatureTensor, ForwardCtx, ParamSink, ParamSinkMut};
use crate::error::{Error, Result};
use crate::signal::{pack_ri, Spectrogram};

/// Parameters of one top-level module.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModuleCount {
    pub name: String,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub total: usize,
    pub modules: Vec<ModuleCount>,
}

impl ParamCount {
    /// Fixed-width table, one row per module plus the total.
    pub fn table(&self) -> String {
        let mut out = format!("{:<16} {:>10}\n", "module", "params");
        for m in &self.modules {
            out.push_str(&format!("{:<16} {:>10}\n", m.name, m.params));
        }
        out.push_str(&format!("{:<16} {:>10}\n", "total", self.total));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WtFormer {
    pub config: ModelConfig,
    pub encoders: Vec<WtBlock>,
    pub skips: Vec<Mca>,
    pub bottleneck: TfConformer,
    /// Deepest stage first.
    pub decoders: Vec<TransWtBlock>,
    pub mask: MaskGenerator,
    /// `[log sigma1, log sigma2]` of the multi-task loss.
    pub loss_log_sigma: Array1<f64>,
}

fn stage_err(stage: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| Error::Stage {
        stage: stage.to_string(),
        reason: e.to_string(),
    }
}

impl WtFormer {
    /// Builds and initializes from `config.seed`, checking that every decoder
    /// stage mirrors its encoder stage.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let cfg = config;
        let mut freqs = vec![2 * cfg.freq_bins];
        let mut encoders = Vec::with_capacity(3);
        let mut c_in = cfg.num_mics;
        for i in 0..3 {
            let spec = StageSpec {
                c_in,
                c_out: cfg.widths[i],
                kernel: cfg.encoder_kernels[i],
                stride: cfg.freq_stride,
                pad: cfg.freq_pads[i],
                wt_kernel: cfg.wt_kernel,
                wt_levels: cfg.encoder_wt_levels[i],
            };
            let block = WtBlock::new(spec, cfg.dropout, &mut rng);
            let stage = format!("encoder{}", i + 1);
            let f = block.out_freq(freqs[i]).ok_or_else(|| Error::Stage {
                stage: stage.clone(),
                reason: format!("{} bins smaller than kernel {:?}", freqs[i], cfg.encoder_kernels[i]),
            })?;
            block.wtconv.check_extent(&stage, f, cfg.frames).map_err(stage_err(&stage))?;
            freqs.push(f);
            encoders.push(block);
            c_in = cfg.widths[i];
        }
        let skips = (0..3)
            .map(|i| Mca::new(cfg.widths[i], freqs[i + 1], cfg.frames, &mut rng))
            .collect();
        let bottleneck = TfConformer::new(cfg.conformer_dim, cfg.heads, cfg.ffn_expansion, cfg.conformer_kernel, cfg.dropout, &mut rng)?;
        let mut decoders = Vec::with_capacity(3);
        let mut upstream = cfg.conformer_dim;
        for (j, i) in [2usize, 1, 0].into_iter().enumerate() {
            let c_out = if i == 0 { cfg.decoder_channels } else { cfg.widths[i - 1] };
            let spec = StageSpec {
                c_in: upstream + cfg.widths[i],
                c_out,
                kernel: cfg.encoder_kernels[i],
                stride: cfg.freq_stride,
                pad: cfg.freq_pads[i],
                wt_kernel: cfg.wt_kernel,
                wt_levels: cfg.decoder_wt_levels[j],
            };
            let stage = format!("decoder{}", i + 1);
            let block = TransWtBlock::new(&stage, spec, freqs[i + 1], freqs[i], cfg.dropout, &mut rng)?;
            block.wtconv.check_extent(&stage, freqs[i], cfg.frames).map_err(stage_err(&stage))?;
            decoders.push(block);
            upstream = c_out;
        }
        let mask = MaskGenerator::new(cfg.decoder_channels, cfg.lstm_hidden, cfg.lstm_layers, cfg.num_mics, cfg.mask_compression, &mut rng);
        Ok(Self {
            config: config.clone(),
            encoders,
            skips,
            bottleneck,
            decoders,
            mask,
            loss_log_sigma: Array1::zeros(2),
        })
    }

    /// Frequency extent after each encoder stage, input first.
    pub fn stage_freqs(&self) -> Vec<usize> {
        let mut f = vec![2 * self.config.freq_bins];
        for e in &self.encoders {
            let next = e.out_freq(*f.last().expect("non-empty")).expect("checked at construction");
            f.push(next);
        }
        f
    }

    /// Packed `[1, M, 2F, T]` features to the decoder output `[1, C_d, 2F, T]`.
    pub fn features(&self, packed: &FeatureTensor, ctx: &mut ForwardCtx) -> Result<FeatureTensor> {
        let (_, m, two_f, _) = packed.dim();
        if m != self.config.num_mics || two_f != 2 * self.config.freq_bins {
            return Err(Error::Stage {
                stage: "input".into(),
                reason: format!(
                    "expected {} channels and {} packed bins, got {:?}",
                    self.config.num_mics,
                    2 * self.config.freq_bins,
                    packed.dim()
                ),
            });
        }
        let mut skips = Vec::with_capacity(3);
        let mut h = packed.clone();
        for (i, (enc, mca)) in self.encoders.iter().zip(&self.skips).enumerate() {
            let stage = format!("encoder{}", i + 1);
            h = enc.forward(&h, ctx).map_err(stage_err(&stage))?;
            skips.push(mca.forward(&h));
        }
        h = self.bottleneck.forward(&h, ctx).map_err(stage_err("tf-conformer"))?;
        for (dec, i) in self.decoders.iter().zip([2usize, 1, 0]) {
            let stage = format!("decoder{}", i + 1);
            let skip = &skips[i];
            if skip.dim().2 != h.dim().2 || skip.dim().3 != h.dim().3 {
                return Err(Error::Stage {
                    stage,
                    reason: format!("skip {:?} does not match upstream {:?}", skip.dim(), h.dim()),
                });
            }
            let fused = concatenate(Axis(1), &[h.view(), skip.view()]).expect("same extents");
            h = dec.forward(&fused, ctx).map_err(stage_err(&stage))?;
        }
        Ok(h)
    }

    /// Noisy `[M, F, T]` spectrogram to (enhanced spectrogram, mask).
    pub fn forward(&self, noisy: &Spectrogram, ctx: &mut ForwardCtx) -> Result<(Spectrogram, ComplexMask)> {
        let dec = self.features(&pack_ri(noisy), ctx)?;
        let mask = self
            .mask
            .forward(&dec)
            .map_err(stage_err("mask-generator"))?
            .pop()
            .expect("batch of one");
        let enhanced = apply_cirm(&mask, noisy).map_err(stage_err("apply-cirm"))?;
        Ok((enhanced, mask))
    }

    pub fn visit(&self, sink: &mut ParamSink<'_>) {
        for (i, e) in self.encoders.iter().enumerate() {
            e.visit(&format!("encoder{}", i + 1), sink);
        }
        for (i, m) in self.skips.iter().enumerate() {
            m.visit(&format!("mca{}", i + 1), sink);
        }
        self.bottleneck.visit("tf_conformer", sink);
        for (d, i) in self.decoders.iter().zip([3, 2, 1]) {
            d.visit(&format!("decoder{i}"), sink);
        }
        self.mask.visit("mask_generator", sink);
        sink("loss.log_sigma", self.loss_log_sigma.shape(), self.loss_log_sigma.as_slice().expect("contiguous"), true);
    }

    pub fn visit_mut(&mut self, sink: &mut ParamSinkMut<'_>) {
        for (i, e) in self.encoders.iter_mut().enumerate() {
            e.visit_mut(&format!("encoder{}", i + 1), sink);
        }
        for (i, m) in self.skips.iter_mut().enumerate() {
            m.visit_mut(&format!("mca{}", i + 1), sink);
        }
        self.bottleneck.visit_mut("tf_conformer", sink);
        for (d, i) in self.decoders.iter_mut().zip([3, 2, 1]) {
            d.visit_mut(&format!("decoder{i}"), sink);
        }
        self.mask.visit_mut("mask_generator", sink);
        sink("loss.log_sigma", &[2], self.loss_log_sigma.as_slice_mut().expect("contiguous"), true);
    }

    /// Trainable scalars, total and per top-level module, from the parameter walk.
    pub fn param_count(&self) -> ParamCount {
        let mut modules: Vec<ModuleCount> = Vec::new();
        let mut total = 0;
        self.visit(&mut |name, _, data, trainable| {
            if !trainable {
                return;
            }
            total += data.len();
            let top = name.split('.').next().unwrap_or(name);
            match modules.last_mut() {
                Some(m) if m.name == top => m.params += data.len(),
                _ => modules.push(ModuleCount {
                    name: top.to_string(),
                    params: data.len(),
                }),
            }
        });
        ParamCount { total, modules }
    }

    /// Closed-form count from the layer sizes, independent of the walk.
    pub fn num_params(&self) -> usize {
        self.encoders.iter().map(WtBlock::num_params).sum::<usize>()
            + self.skips.iter().map(Mca::num_params).sum::<usize>()
            + self.bottleneck.num_params()
            + self.decoders.iter().map(TransWtBlock::num_params).sum::<usize>()
            + self.mask.num_params()
            + self.loss_log_sigma.len()
    }
}
