use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Axis;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{Method, RunConfig};
use super::Failure;
use crate::beamform::{mb_mvdr, ti_mvdr, TiSteering};
use crate::error::{Error, Result};
use crate::gradcheck::{grad_check, GradBlock};
use crate::net::{load_checkpoint, ForwardCtx, WtFormer};
use crate::scene::{
    build_manifest, collect_corpus, read_manifest, render_mixture, sample_scene, write_manifest, ManifestRow, RirOptions, RoomScene, Split,
    REFERENCE_MIC,
};
use crate::signal::{istft, read_audio, read_wav, stft, write_complex_tensor, write_wav, MultichannelWaveform, StftParams};
use crate::spatial::{cue_deltas, music_spectrum, si_snr};

const MANIFEST: &str = "manifest.jsonl";

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Runs a writer against a temporary sibling and renames it into place.
fn via_tmp(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let tmp = tmp_path(path);
    write(&tmp)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn split_dir(root: &Path, split: Split) -> PathBuf {
    root.join(split.as_str())
}

fn report_file_errors(errors: &[(String, Error)]) -> std::result::Result<(), Failure> {
    for (id, e) in errors {
        eprintln!("{id}: {e}");
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!("{} file(s) failed", errors.len())))
    }
}

fn collect_errors(ids: impl Iterator<Item = String>, results: Vec<Result<()>>) -> Vec<(String, Error)> {
    ids.zip(results).filter_map(|(id, r)| r.err().map(|e| (id, e))).collect()
}

/// Loops `x` to `len` samples.
fn loop_to(x: &[f64], len: usize) -> Vec<f64> {
    (0..len).map(|i| x[i % x.len()]).collect()
}

fn noise_signal(cfg: &RunConfig, noise_files: &[PathBuf], row: &ManifestRow, k: usize, len: usize) -> Result<Vec<f64>> {
    let seed = row.seed.wrapping_mul(31).wrapping_add(1 + k as u64);
    let Some(dir) = &cfg.simulate.noise_dir else {
        return Ok(cfg.simulate.noise.generate(seed, len));
    };
    let path = dir.join(&noise_files[(seed % noise_files.len() as u64) as usize]);
    let wave = read_audio(&path)?;
    if wave.is_empty() {
        return Err(Error::InvalidWaveform(format!("{} is empty", path.display())));
    }
    Ok(loop_to(&wave.channel(0).to_vec(), len))
}

fn simulate_row(cfg: &RunConfig, corpus: &Path, out: &Path, noise_files: &[PathBuf], row: &ManifestRow) -> Result<()> {
    let len = cfg.scene.chunk_len();
    let utterance = read_audio(corpus.join(&row.utterance))?;
    let mut speech = utterance.channel(0).to_vec();
    if speech.len() < len {
        speech.resize(len, 0.0);
    }
    let mut scene = sample_scene(row.seed, &cfg.scene)?;
    scene.snr_db = row.snr_db;
    let noises = (0..scene.noise_pos.len())
        .map(|k| noise_signal(cfg, noise_files, row, k, len))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[f64]> = noises.iter().map(Vec::as_slice).collect();
    let rir = if cfg.simulate.anechoic {
        RirOptions::anechoic()
    } else {
        RirOptions::default()
    };
    let example = render_mixture(&scene, &speech, &refs, len, &rir)?;
    let dir = split_dir(out, row.split);
    write_wav(dir.join(format!("{}_mix.wav", row.id)), &example.mixture)?;
    write_wav(dir.join(format!("{}_target.wav", row.id)), &example.target_early)?;
    write_atomic(
        &dir.join(format!("{}_scene.json", row.id)),
        serde_json::to_string_pretty(&example.scene)?.as_bytes(),
    )
}

pub(crate) fn simulate(cfg: &RunConfig, corpus: &Path, out: &Path) -> std::result::Result<(), Failure> {
    let utterances = collect_corpus(corpus)?;
    let noise_files = match &cfg.simulate.noise_dir {
        Some(d) => collect_corpus(d)?,
        None => Vec::new(),
    };
    let rows = build_manifest(&utterances, &cfg.dataset)?;
    for split in Split::ALL {
        create_dir(&split_dir(out, split))?;
    }
    let results: Vec<Result<()>> = rows
        .par_iter()
        .map(|row| simulate_row(cfg, corpus, out, &noise_files, row))
        .collect();
    let errors = collect_errors(rows.iter().map(|r| r.id.clone()), results);
    write_manifest(&out.join(MANIFEST), &rows)?;
    for split in Split::ALL {
        println!("{split}: {}", rows.iter().filter(|r| r.split == split).count());
    }
    report_file_errors(&errors)
}

#[derive(Serialize)]
struct Sidecar<'a> {
    id: &'a str,
    split: Split,
    method: &'static str,
    channels: usize,
}

fn check_pair(mix: &MultichannelWaveform, target: &MultichannelWaveform) -> Result<()> {
    if mix.samples().dim() != target.samples().dim() || mix.sample_rate() != target.sample_rate() {
        return Err(Error::ShapeMismatch(format!(
            "mixture {:?} at {} Hz vs target {:?} at {} Hz",
            mix.samples().dim(),
            mix.sample_rate(),
            target.samples().dim(),
            target.sample_rate()
        )));
    }
    Ok(())
}

fn enhance_row(cfg: &RunConfig, data: &Path, out: &Path, model: Option<&WtFormer>, row: &ManifestRow) -> Result<()> {
    let src = split_dir(data, row.split);
    let dst = split_dir(out, row.split);
    let mix = read_wav(src.join(format!("{}_mix.wav", row.id)))?;
    let params = StftParams::default();
    let method = cfg.enhance.method;
    let enhanced = match method {
        Method::Identity => mix,
        Method::TiMvdr | Method::MbMvdr => {
            let target = read_wav(src.join(format!("{}_target.wav", row.id)))?;
            check_pair(&mix, &target)?;
            let (ms, ts) = (stft(&mix, &params)?, stft(&target, &params)?);
            let result = if method == Method::MbMvdr {
                mb_mvdr(&ms, &ts)?
            } else {
                ti_mvdr(&ms, &ts, TiSteering::OracleRtf)?
            };
            if cfg.enhance.dump_weights {
                let w = result.weights.weights.clone().insert_axis(Axis(0));
                write_complex_tensor(dst.join(format!("{}_weights.bin", row.id)), &w)?;
            }
            istft(&result.enhanced)?
        }
        Method::WtformerRandom => {
            let model = model.expect("model is built for wtformer runs");
            let (spec, _) = model.forward(&stft(&mix, &params)?, &mut ForwardCtx::eval())?;
            istft(&spec)?
        }
    };
    if enhanced.samples().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidWaveform("enhanced signal has non-finite samples".into()));
    }
    write_wav(dst.join(format!("{}_enh.wav", row.id)), &enhanced)?;
    let sidecar = Sidecar {
        id: &row.id,
        split: row.split,
        method: method.as_str(),
        channels: enhanced.num_channels(),
    };
    write_atomic(&dst.join(format!("{}_enh.json", row.id)), serde_json::to_string_pretty(&sidecar)?.as_bytes())
}

fn manifest_rows(data: &Path, split: Option<Split>) -> Result<Vec<ManifestRow>> {
    let rows = read_manifest(&data.join(MANIFEST))?;
    Ok(rows.into_iter().filter(|r| split.is_none_or(|s| r.split == s)).collect())
}

pub(crate) fn enhance(cfg: &RunConfig, data: &Path, out: &Path, split: Option<Split>) -> std::result::Result<(), Failure> {
    let rows = manifest_rows(data, split)?;
    let model = match cfg.enhance.method {
        Method::WtformerRandom => {
            let mut m = WtFormer::new(&cfg.model)?;
            if let Some(ck) = &cfg.enhance.checkpoint {
                load_checkpoint(&mut m, ck)?;
            }
            Some(m)
        }
        _ => None,
    };
    for s in Split::ALL {
        create_dir(&split_dir(out, s))?;
    }
    let results: Vec<Result<()>> = rows
        .par_iter()
        .map(|row| enhance_row(cfg, data, out, model.as_ref(), row))
        .collect();
    let errors = collect_errors(rows.iter().map(|r| r.id.clone()), results);
    println!("{}: {} of {} files", cfg.enhance.method.as_str(), rows.len() - errors.len(), rows.len());
    report_file_errors(&errors)
}

pub const EVAL_CSV_HEADER: &str = "id,si_snr_db,delta_itd_us,delta_ipd_rad,delta_ild_db";

/// Metrics of one enhanced file. Cue deltas need a multichannel output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub id: String,
    pub si_snr_db: f64,
    pub delta_itd_us: Option<f64>,
    pub delta_ipd_rad: Option<f64>,
    pub delta_ild_db: Option<f64>,
}

/// SI-SNR (channel mean for multichannel outputs, reference mic otherwise)
/// and spatial cue deltas against the target.
pub fn evaluate_pair(id: &str, enhanced: &MultichannelWaveform, target: &MultichannelWaveform) -> Result<EvalRow> {
    if enhanced.len() != target.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} samples", enhanced.len(), target.len())));
    }
    if enhanced.num_channels() == 1 {
        let si = si_snr(&enhanced.channel(0).to_vec(), &target.channel(REFERENCE_MIC).to_vec())?;
        return Ok(EvalRow {
            id: id.to_string(),
            si_snr_db: si,
            delta_itd_us: None,
            delta_ipd_rad: None,
            delta_ild_db: None,
        });
    }
    if enhanced.num_channels() != target.num_channels() {
        return Err(Error::ShapeMismatch(format!(
            "{} enhanced channels vs {} target channels",
            enhanced.num_channels(),
            target.num_channels()
        )));
    }
    let m = target.num_channels();
    let mut si = 0.0;
    for c in 0..m {
        si += si_snr(&enhanced.channel(c).to_vec(), &target.channel(c).to_vec())?;
    }
    let cues = cue_deltas(enhanced, target)?;
    Ok(EvalRow {
        id: id.to_string(),
        si_snr_db: si / m as f64,
        delta_itd_us: Some(cues.delta_itd_us),
        delta_ipd_rad: Some(cues.delta_ipd_rad),
        delta_ild_db: Some(cues.delta_ild_db),
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Header, one line per row, then a `mean` line.
pub(crate) fn eval_csv(rows: &[EvalRow]) -> String {
    let mut out = format!("{EVAL_CSV_HEADER}\n");
    let line = |id: &str, si: Option<f64>, itd, ipd, ild| format!("{id},{},{},{},{}\n", cell(si), cell(itd), cell(ipd), cell(ild));
    for r in rows {
        out.push_str(&line(&r.id, Some(r.si_snr_db), r.delta_itd_us, r.delta_ipd_rad, r.delta_ild_db));
    }
    out.push_str(&line(
        "mean",
        mean_of(rows.iter().map(|r| Some(r.si_snr_db))),
        mean_of(rows.iter().map(|r| r.delta_itd_us)),
        mean_of(rows.iter().map(|r| r.delta_ipd_rad)),
        mean_of(rows.iter().map(|r| r.delta_ild_db)),
    ));
    out
}

fn enhanced_ids(enhanced: &Path, split: Split) -> BTreeSet<String> {
    let Ok(entries) = fs::read_dir(split_dir(enhanced, split)) else {
        return BTreeSet::new();
    };
    entries
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter_map(|n| n.strip_suffix("_enh.wav").map(str::to_string))
        .collect()
}

pub(crate) fn evaluate(enhanced: &Path, reference: &Path, csv: &Path, split: Option<Split>) -> std::result::Result<(), Failure> {
    if !enhanced.is_dir() {
        return Err(Error::io(enhanced, std::io::Error::new(std::io::ErrorKind::NotFound, "enhanced directory not found")).into());
    }
    let rows = manifest_rows(reference, split)?;
    let mut unpaired = Vec::new();
    let mut paired = Vec::new();
    for row in &rows {
        let path = split_dir(enhanced, row.split).join(format!("{}_enh.wav", row.id));
        if path.is_file() {
            paired.push((row, path));
        } else {
            unpaired.push(format!("{}/{}: no enhanced file", row.split, row.id));
        }
    }
    for s in Split::ALL.into_iter().filter(|s| split.is_none_or(|x| x == *s)) {
        let known: BTreeSet<&str> = rows.iter().filter(|r| r.split == s).map(|r| r.id.as_str()).collect();
        for id in enhanced_ids(enhanced, s) {
            if !known.contains(id.as_str()) {
                unpaired.push(format!("{s}/{id}: no reference in manifest"));
            }
        }
    }
    let results: Vec<Result<EvalRow>> = paired
        .par_iter()
        .map(|(row, path)| {
            let target = read_wav(split_dir(reference, row.split).join(format!("{}_target.wav", row.id)))?;
            evaluate_pair(&row.id, &read_wav(path)?, &target)
        })
        .collect();
    let mut scored = Vec::new();
    let mut errors = Vec::new();
    for ((row, _), r) in paired.iter().zip(results) {
        match r {
            Ok(v) => scored.push(v),
            Err(e) => errors.push((row.id.clone(), e)),
        }
    }
    let text = eval_csv(&scored);
    write_atomic(csv, text.as_bytes())?;
    print!("{}", text.lines().last().map(|l| format!("{EVAL_CSV_HEADER}\n{l}\n")).unwrap_or_default());
    for u in &unpaired {
        eprintln!("skipped {u}");
    }
    report_file_errors(&errors)?;
    if unpaired.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!("{} unpaired file(s)", unpaired.len())))
    }
}

pub(crate) fn music(
    cfg: &RunConfig,
    input: &Path,
    csv: Option<&Path>,
    pgm: Option<&Path>,
    scene: Option<&Path>,
    tolerance_deg: f64,
) -> std::result::Result<(), Failure> {
    let wave = read_wav(input)?;
    let spectrum = music_spectrum(&wave, &cfg.music)?;
    if let Some(p) = csv {
        via_tmp(p, |t| spectrum.write_csv(t))?;
    }
    if let Some(p) = pgm {
        via_tmp(p, |t| spectrum.write_pgm(t))?;
    }
    let (bands, angles) = spectrum.shape();
    let peak = spectrum.peak_angle_deg();
    println!("spectrum {bands}x{angles}, peak {peak:.1} deg");
    let Some(scene_path) = scene else {
        return Ok(());
    };
    let text = fs::read_to_string(scene_path).map_err(|e| Error::io(scene_path, e))?;
    let scene: RoomScene = serde_json::from_str(&text).map_err(|e| Error::Malformed {
        what: "scene",
        path: scene_path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let truth = scene.speech_doa_deg();
    let err = (peak - truth).abs();
    println!("scene doa {truth:.2} deg, error {err:.2} deg");
    if err > tolerance_deg {
        return Err(Failure::Check(format!("MUSIC peak {peak:.1} deg is {err:.2} deg from {truth:.2} deg")));
    }
    Ok(())
}

pub(crate) fn gradcheck(cfg: &RunConfig, blocks: &[GradBlock]) -> std::result::Result<(), Failure> {
    let blocks = if blocks.is_empty() { GradBlock::ALL.to_vec() } else { blocks.to_vec() };
    let mut failed = Vec::new();
    for b in blocks {
        match grad_check(b, None, cfg.gradcheck.seed) {
            Ok(r) => {
                println!(
                    "{:<11} max_rel {:.3e} over {:>3} coords (worst {}) tol {:.0e} {}",
                    b.as_str(),
                    r.max_rel_error,
                    r.coordinates,
                    r.worst,
                    r.tolerance,
                    if r.passed { "PASS" } else { "FAIL" }
                );
                if !r.passed {
                    failed.push(b.as_str());
                }
            }
            Err(e @ Error::GradientCheck(_)) => {
                println!("{:<11} {e} FAIL", b.as_str());
                failed.push(b.as_str());
            }
            Err(e) => return Err(e.into()),
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!("gradient mismatch in {}", failed.join(", "))))
    }
}

pub(crate) fn describe(cfg: &RunConfig, checkpoint: Option<&Path>) -> std::result::Result<(), Failure> {
    let mut model = WtFormer::new(&cfg.model)?;
    if let Some(ck) = checkpoint {
        load_checkpoint(&mut model, ck)?;
    }
    print!("{}", model.param_count().table());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_rows_and_mean() {
        let rows = vec![
            EvalRow {
                id: "00000".into(),
                si_snr_db: -2.0,
                delta_itd_us: Some(100.0),
                delta_ipd_rad: Some(0.5),
                delta_ild_db: Some(1.0),
            },
            EvalRow {
                id: "00001".into(),
                si_snr_db: 4.0,
                delta_itd_us: None,
                delta_ipd_rad: None,
                delta_ild_db: None,
            },
        ];
        let text = eval_csv(&rows);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], EVAL_CSV_HEADER);
        assert_eq!(lines[2], "00001,4.000000,,,");
        assert_eq!(lines[3], "mean,1.000000,100.000000,0.500000,1.000000");
    }

    #[test]
    fn identical_inputs_score_the_epsilon_cap_and_zero_cues() {
        let t = crate::scene::simulate_synthetic(3, &Default::default(), crate::scene::synth::NoiseKind::White, &RirOptions::anechoic())
            .unwrap()
            .target_early;
        let r = evaluate_pair("x", &t, &t).unwrap();
        assert!(r.si_snr_db > 60.0);
        assert_eq!(r.delta_itd_us, Some(0.0));
        assert_eq!(r.delta_ild_db, Some(0.0));
    }
}
