use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use candle_core::DType;
use serde::{Deserialize, Serialize};

use nerfedit::encoder::StyleCode;
use nerfedit::eval::{attribute_inconsistency, mask_iou, psnr, spearman, ssim};
use nerfedit::flow::EditPipeline;
use nerfedit::image::{rgb_to_hsv, Image};
use nerfedit::nn::ops::to_vec_f64;
use nerfedit::nn::RandomFeatures;
use nerfedit::scene::{attributes_of, AttributeVector, ATTRIBUTE_NAMES};
use nerfedit::trainlog::TrainingLog;
use nerfedit::video::{run_video, toy_video, VideoStages};

use crate::fixture::{self, Fixture};
use crate::Verdict;

const SWEEP: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

fn pipeline(f: &Fixture) -> EditPipeline<'_> {
    EditPipeline { generator: &f.gen, encoder: &f.enc, flows: Some(&f.flows), mode: f.cfg.encoder.morph_mode }
}

/// Image and NeRF silhouette of one code.
fn render(f: &Fixture, w_geo: &[f64], w_tex: &[f64], d: &[f64]) -> (Image, Vec<f64>) {
    let out = f.gen.render_codes(&[w_geo.to_vec()], &[w_tex.to_vec()], &[d.to_vec()], f.gen.arch().output_resolution).unwrap();
    (Image::batch_from_tensor(&out.image).unwrap().remove(0), to_vec_f64(&out.silhouette).unwrap())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn training_smoke() -> Verdict {
    let f = fixture::get();
    let res = f.gen.arch().output_resolution;
    let codes = f.enc.encode(&f.held.images, f.cfg.encoder.morph_mode, None).unwrap();
    let (mut ps, mut ss) = (Vec::new(), Vec::new());
    for (img, (w, d)) in f.held.images.iter().zip(&codes) {
        let (rec, _) = render(f, &w.w_geo, &w.w_tex, d);
        ps.push(psnr(img, &rec, f.cfg.eval.psnr_cap).unwrap());
        ss.push(ssim(img, &rec, f.cfg.eval.ssim_window, f.cfg.eval.ssim_sigma).unwrap());
    }
    let med = median(ps.clone());
    let (first, last) = (f.enc_report.first.as_ref().unwrap(), f.enc_report.last.as_ref().unwrap());
    let style_drop = 1.0 - last.style / first.style;
    let view_drop = 1.0 - last.view / first.view;
    Verdict::new(
        med >= 22.0 && style_drop >= 0.5 && view_drop >= 0.5,
        format!(
            "median held-out PSNR {med:.2} dB at {res}x{res} (mean {:.2} dB, mean SSIM {:.3}, n = {}); L_style {:.3} -> {:.3} ({:.0}% drop), L_view {:.3} -> {:.3} ({:.0}% drop)",
            mean(&ps),
            mean(&ss),
            ps.len(),
            first.style,
            last.style,
            100.0 * style_drop,
            first.view,
            last.view,
            100.0 * view_drop
        ),
    )
}

/// Most common hue (36 bins) over opaque, saturated pixels.
fn hue_mode(img: &Image, sil: &[f64]) -> Option<f64> {
    let res = img.resolution();
    let r = (sil.len() as f64).sqrt() as usize;
    let mut bins = [0usize; 36];
    for y in 0..res {
        for x in 0..res {
            if sil[(y * r / res) * r + x * r / res] <= 0.5 {
                continue;
            }
            let (h, s, v) = rgb_to_hsv(img.pixel(y, x));
            if s > 0.05 && v > 0.05 {
                bins[((h * 36.0) as usize).min(35)] += 1;
            }
        }
    }
    let (i, &n) = bins.iter().enumerate().max_by_key(|(_, n)| **n)?;
    (n > 0).then_some((i as f64 + 0.5) / 36.0)
}

fn hue_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    d.min(1.0 - d)
}

fn edit(f: &Fixture, w: &StyleCode, a: &AttributeVector, edits: &[(&str, f64)]) -> (Vec<f64>, Vec<f64>) {
    let m: BTreeMap<String, f64> = edits.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    f.flows.edit_codes(&w.w_geo, &w.w_tex, a, &m).unwrap()
}

pub fn disentanglement() -> Verdict {
    let f = fixture::get();
    let p = pipeline(f);

    // texture transfer on a 3x3 grid of sources with spread-out hues
    let hue_attr = |i: usize| f.held.attributes[i].values()[2];
    let picks: Vec<usize> = [0.1, 0.5, 0.9]
        .iter()
        .map(|t| (0..f.held.len()).min_by(|&a, &b| (hue_attr(a) - t).abs().total_cmp(&(hue_attr(b) - t).abs())).unwrap())
        .collect();
    let inv: Vec<(StyleCode, Vec<f64>)> = picks.iter().map(|&i| p.invert(&f.held.images[i], None).unwrap()).collect();
    let base: Vec<(Image, Vec<f64>)> = inv.iter().map(|(w, d)| render(f, &w.w_geo, &w.w_tex, d)).collect();
    let mut tt_iou = 1.0f64;
    let (mut toward, mut off_diag) = (0, 0);
    for (i, (wi, di)) in inv.iter().enumerate() {
        for (j, (wj, _)) in inv.iter().enumerate() {
            let (img, sil) = render(f, &wi.w_geo, &wj.w_tex, di);
            tt_iou = tt_iou.min(mask_iou(&sil, &base[i].1));
            if i != j {
                off_diag += 1;
                let mo = hue_mode(&img, &sil);
                let mg = hue_mode(&base[i].0, &base[i].1);
                let mt = hue_mode(&base[j].0, &base[j].1);
                if let (Some(o), Some(g), Some(t)) = (mo, mg, mt) {
                    if hue_dist(o, t) < hue_dist(o, g) || (hue_dist(g, t) == 0.0 && hue_dist(o, t) == 0.0) {
                        toward += 1;
                    }
                }
            }
        }
    }

    // geometry edits vs predicted hue, texture edits vs silhouette
    let n = 20.min(f.held.len());
    let mut hue_shift = 0.0f64;
    let mut tex_iou = 1.0f64;
    for k in 0..n {
        let (w, d) = p.invert(&f.held.images[k], None).unwrap();
        let a = &f.held.attributes[k];
        let (img0, sil0) = render(f, &w.w_geo, &w.w_tex, &d);
        let mut geo_imgs = Vec::new();
        for name in ["elongation", "feature_size"] {
            for v in [0.2, 0.8] {
                let (g, t) = edit(f, &w, a, &[(name, v)]);
                geo_imgs.push(render(f, &g, &t, &d).0);
            }
        }
        let mut all = vec![img0];
        all.extend(geo_imgs);
        let preds = f.predictor.predict(&all).unwrap();
        for q in &preds[1..] {
            hue_shift = hue_shift.max((q.values()[2] - preds[0].values()[2]).abs());
        }
        for name in ["hue", "light_elevation"] {
            for v in [0.2, 0.8] {
                let (g, t) = edit(f, &w, a, &[(name, v)]);
                tex_iou = tex_iou.min(mask_iou(&render(f, &g, &t, &d).1, &sil0));
            }
        }
    }
    Verdict::new(
        tt_iou >= 0.98 && toward == off_diag && hue_shift <= 0.05 && tex_iou >= 0.98,
        format!(
            "texture transfer min IoU {tt_iou:.4}, hue mode moved toward texture source in {toward}/{off_diag} cells; geometry edits max |Δ predicted hue| {hue_shift:.4} over {n} images; texture edits min IoU {tex_iou:.4}"
        ),
    )
}

pub fn monotonicity() -> Verdict {
    let f = fixture::get();
    let p = pipeline(f);
    let n = 20.min(f.held.len());
    let mut rho = vec![Vec::new(); ATTRIBUTE_NAMES.len()];
    for k in 0..n {
        let (w, d) = p.invert(&f.held.images[k], None).unwrap();
        let a = &f.held.attributes[k];
        for (ai, name) in ATTRIBUTE_NAMES.iter().enumerate() {
            let imgs: Vec<Image> = SWEEP
                .iter()
                .map(|&t| {
                    let (g, tx) = edit(f, &w, a, &[(name, t)]);
                    render(f, &g, &tx, &d).0
                })
                .collect();
            let pred: Vec<f64> = f.predictor.predict(&imgs).unwrap().iter().map(|v| v.values()[ai]).collect();
            rho[ai].push(spearman(&SWEEP, &pred));
        }
    }
    let means: Vec<f64> = rho.iter().map(|r| mean(r)).collect();
    let detail = ATTRIBUTE_NAMES
        .iter()
        .zip(&means)
        .map(|(n, m)| format!("{n} {m:.3}"))
        .collect::<Vec<_>>()
        .join(", ");
    Verdict::new(means.iter().all(|&m| m >= 0.8), format!("mean Spearman ρ over {n} images: {detail}"))
}

pub fn mode_collapse() -> Verdict {
    let f = fixture::get();
    let last = |r: &nerfedit::inversion::InversionReport| r.variance_history.last().map(|v| v.1).unwrap_or(f64::NAN);
    let (full, nodisc) = (last(&f.enc_report), last(&f.nodisc_report));
    Verdict::new(
        nodisc < 0.2 && full > 0.5,
        format!(
            "variance ratio vs prior after {} steps: full {full:.3} (needs > 0.5), no discriminator {nodisc:.3} (needs < 0.2)",
            f.enc_report.steps
        ),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VideoResult {
    identity: u64,
    full: f64,
    per_frame: f64,
    psnr_before: f64,
    psnr_after: f64,
}

const VIDEO_EDIT: (&str, f64) = ("elongation", 0.75);

pub fn video_consistency() -> Verdict {
    let f = fixture::get();
    let cache = f.path(&format!("videos-{}-{}.json", VIDEO_EDIT.0, VIDEO_EDIT.1));
    let results: Vec<VideoResult> = match std::fs::read_to_string(&cache) {
        Ok(s) => serde_json::from_str(&s).unwrap(),
        Err(_) => {
            let features = RandomFeatures::new(&f.cfg.inversion.perceptual_channels, f.cfg.inversion.perceptual_seed, DType::F32).unwrap();
            let edits = BTreeMap::from([(VIDEO_EDIT.0.to_string(), VIDEO_EDIT.1)]);
            let mut out = Vec::new();
            for id in 0..10u64 {
                let seq = toy_video(f.cfg.stage_seed(&format!("video-{id}")), id, &f.cfg.video, &f.cfg.scene.ranges, f.gen.arch().output_resolution).unwrap();
                let coeffs = seq.coeffs.as_ref().unwrap();
                let attrs: Vec<AttributeVector> = coeffs.iter().map(|c| attributes_of(c, &f.cfg.scene.ranges)).collect();
                let mut log = TrainingLog::memory();
                let mut arm = |stages| {
                    run_video(&f.gen, &f.enc, Some(&f.flows), &seq.frames, None, f.cfg.encoder.morph_mode, &attrs, &edits, stages, &f.cfg.video, &features, &mut log).unwrap()
                };
                let full = arm(VideoStages::FULL);
                let single = arm(VideoStages::PER_FRAME);
                let score = |imgs: &[Image]| attribute_inconsistency(&f.predictor.predict(imgs).unwrap()).unwrap();
                let ft = full.finetune.as_ref().unwrap();
                let r = VideoResult { identity: id, full: score(&full.edited), per_frame: score(&single.edited), psnr_before: ft.psnr_before, psnr_after: ft.psnr_after };
                eprintln!("video {id}: {r:?}");
                out.push(r);
            }
            std::fs::write(&cache, serde_json::to_string_pretty(&out).unwrap()).unwrap();
            out
        }
    };
    let full: Vec<f64> = results.iter().map(|r| r.full).collect();
    let single: Vec<f64> = results.iter().map(|r| r.per_frame).collect();
    let (mf, ms) = (mean(&full), mean(&single));
    let improvement = 1.0 - mf / ms;
    let wins = results.iter().filter(|r| r.full < r.per_frame).count();
    let tuned = mean(&results.iter().map(|r| r.psnr_after - r.psnr_before).collect::<Vec<_>>());
    Verdict::new(
        mf < ms && improvement >= 0.2,
        format!(
            "attribute inconsistency with {}={}: full {mf:.4} vs per-frame {ms:.4} ({:.0}% improvement, full lower on {wins}/{} videos); fine-tuning gained {tuned:.2} dB frame PSNR",
            VIDEO_EDIT.0,
            VIDEO_EDIT.1,
            100.0 * improvement,
            results.len()
        ),
    )
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(p) = stack.pop() {
        if p.is_dir() {
            for e in std::fs::read_dir(&p).unwrap() {
                stack.push(e.unwrap().path());
            }
        } else {
            out.push(p.strip_prefix(root).unwrap().to_path_buf());
        }
    }
    out.sort();
    out
}

const TINY: &str = r#"
[generator.pretrain]
steps = 4
batch = 4
eval_every = 2
eval_samples = 4
[encoder.regressor]
steps = 4
batch = 4
[inversion]
steps = 4
batch = 4
monitor_every = 2
monitor_samples = 8
[flow]
train_steps = 4
batch = 8
steps = 4
"#;

pub fn determinism() -> Verdict {
    let f = fixture::get();
    let tmp = tempfile::tempdir().unwrap();
    let tiny = tmp.path().join("tiny.toml");
    std::fs::write(&tiny, TINY).unwrap();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let (gen, enc, flows, held) = (s(&f.path("generator.ckpt")), s(&f.path("encoder.ckpt")), s(&f.path("flows.ckpt")), s(&f.path("corpus-held-out")));
    let img = |i: usize| s(&f.path("corpus-held-out").join(format!("{i:06}.png")));
    let tiny = s(&tiny);
    let commands: Vec<(&str, Vec<String>)> = vec![
        ("scene gen", vec!["scene", "gen", "--count", "6", "--identities", "3", "--out", "{out}/data"].into_iter().map(String::from).collect()),
        ("gen pretrain", vec!["--config".into(), tiny.clone(), "gen".into(), "pretrain".into(), "--data".into(), held.clone(), "--out".into(), "{out}/g.ckpt".into(), "--log".into(), "{out}/g.log".into()]),
        ("train encoder", vec!["--config".into(), tiny.clone(), "train".into(), "encoder".into(), "--corpus".into(), held.clone(), "--gen-ckpt".into(), gen.clone(), "--out".into(), "{out}/e.ckpt".into(), "--log".into(), "{out}/e.log".into()]),
        ("flow train", vec!["--config".into(), tiny.clone(), "flow".into(), "train".into(), "--corpus".into(), held.clone(), "--out".into(), "{out}/f.ckpt".into()]),
        ("eval inversion", vec!["eval".into(), "inversion".into(), "--data".into(), held.clone(), "--gen-ckpt".into(), gen.clone(), "--enc-ckpt".into(), enc.clone(), "--limit".into(), "16".into(), "--out".into(), "{out}/inv.json".into()]),
        ("eval grid", vec!["eval".into(), "grid".into(), "--kind".into(), "multiview".into(), "--image".into(), img(0), "--gen-ckpt".into(), gen.clone(), "--enc-ckpt".into(), enc.clone(), "--flow-ckpt".into(), flows.clone(), "--predictor".into(), s(&f.path("predictor.ckpt")), "--set".into(), "hue=0.8".into(), "--out".into(), "{out}/grid.png".into()]),
    ];
    let exe = env!("CARGO_BIN_EXE_nerfedit");
    let mut problems = Vec::new();
    let mut compared = 0;
    for (label, args) in &commands {
        let mut outs = Vec::new();
        for run in ["a", "b"] {
            let out = tmp.path().join(label.replace(' ', "-")).join(run);
            std::fs::create_dir_all(&out).unwrap();
            let args: Vec<String> = args.iter().map(|a| a.replace("{out}", out.to_str().unwrap())).collect();
            let st = Command::new(exe).args(&args).env("RUST_LOG", "warn").output().unwrap();
            if !st.status.success() {
                problems.push(format!("{label} exited {:?}: {}", st.status.code(), String::from_utf8_lossy(&st.stderr).trim()));
            }
            outs.push(out);
        }
        let (fa, fb) = (files_under(&outs[0]), files_under(&outs[1]));
        if fa != fb || fa.is_empty() {
            problems.push(format!("{label}: different file sets"));
            continue;
        }
        for rel in &fa {
            compared += 1;
            if std::fs::read(outs[0].join(rel)).unwrap() != std::fs::read(outs[1].join(rel)).unwrap() {
                problems.push(format!("{label}: {} differs", rel.display()));
            }
        }
    }
    Verdict::new(
        problems.is_empty(),
        if problems.is_empty() {
            format!("{} commands run twice, {compared} output files bitwise identical", commands.len())
        } else {
            problems.join("; ")
        },
    )
}
