use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use candle_core::DType;
use clap::{Args, Parser, Subcommand};

use nerfedit::config::{ExperimentConfig, MorphMode};
use nerfedit::encoder::{Encoder, StyleCode};
use nerfedit::eval::{
    attribute_inconsistency, emit_grid, identity_score, predictor_meta, psnr, ssim, train_attribute_predictor,
    AttributePredictor, GridKind, MetricReport, ReportMeta,
};
use nerfedit::flow::{edit_image, texture_transfer, flow_meta, train_flows, EditPipeline, FlowArch, FlowModel, FlowSample};
use nerfedit::generator::{pretrain_from_dataset, pretrain_meta, sample_training_corpus, with_yaw, Generator, InversionCorpus};
use nerfedit::image::Image;
use nerfedit::inversion::{encoder_meta, fit_encoder, TrainOptions};
use nerfedit::nn::RandomFeatures;
use nerfedit::scene::{
    attributes_of, read_dataset, render_reference, sample_scene_coeffs, write_dataset, AttributeVector, MorphCoeffs,
};
use nerfedit::trainlog::TrainingLog;
use nerfedit::video::{
    edit_sequence, encode_frames, encode_sequence, extract_frame_irrelevant, finetune_generator, render_frames,
    smooth_codes, toy_video, FrameSequence,
};
use nerfedit::{Error, Result};

#[derive(Parser)]
#[command(name = "nerfedit", version, about = "3D-aware NeRF-GAN inversion and editing on a procedural face world")]
struct Cli {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Procedural scene datasets.
    #[command(subcommand)]
    Scene(SceneCmd),
    /// Generator pretraining, corpus sampling and rendering.
    #[command(subcommand)]
    Gen(GenCmd),
    /// Encoding images into style and view codes.
    #[command(subcommand)]
    Enc(EncCmd),
    /// Encoder training.
    #[command(subcommand)]
    Train(TrainCmd),
    /// Attribute flows: training, editing, texture transfer.
    #[command(subcommand)]
    Flow(FlowCmd),
    /// Video inversion, fine-tuning and editing.
    #[command(subcommand)]
    Video(VideoCmd),
    /// Metrics, the attribute predictor and figure grids.
    #[command(subcommand)]
    Eval(EvalCmd),
}

#[derive(Subcommand)]
enum SceneCmd {
    /// Renders a labelled dataset.
    Gen {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        identities: Option<usize>,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        overwrite: bool,
    },
}

#[derive(Subcommand)]
enum GenCmd {
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    SampleCorpus {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        overwrite: bool,
    },
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        /// JSON object with `w_geo` and `w_tex`.
        #[arg(long)]
        w_file: PathBuf,
        /// JSON array holding the view code.
        #[arg(long)]
        d_file: PathBuf,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ModeArgs {
    /// `oracle` or `regressor`; defaults to the config.
    #[arg(long)]
    mode: Option<MorphMode>,
}

#[derive(Subcommand)]
enum EncCmd {
    Encode {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        mode: ModeArgs,
        /// Ground-truth coefficients (JSON), required in oracle mode.
        #[arg(long)]
        coeffs: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum TrainCmd {
    Encoder {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        gen_ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Extra labelled procedural images for the coefficient regressor.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        no_discriminator: bool,
        #[arg(long)]
        real_data_only: bool,
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Models {
    #[arg(long)]
    gen_ckpt: PathBuf,
    #[arg(long)]
    enc_ckpt: PathBuf,
    #[command(flatten)]
    mode: ModeArgs,
}

#[derive(Subcommand)]
enum FlowCmd {
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    Edit {
        #[arg(long)]
        image: PathBuf,
        /// `attribute=value`, repeatable.
        #[arg(long = "set", value_parser = parse_edit)]
        edits: Vec<(String, f64)>,
        #[command(flatten)]
        models: Models,
        #[arg(long)]
        flow_ckpt: PathBuf,
        /// Attribute predictor; without it `--coeffs` supplies the attributes.
        #[arg(long)]
        predictor: Option<PathBuf>,
        #[arg(long)]
        coeffs: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    TextureTransfer {
        #[arg(long)]
        geo: PathBuf,
        #[arg(long)]
        tex: PathBuf,
        #[command(flatten)]
        models: Models,
        #[arg(long)]
        geo_coeffs: Option<PathBuf>,
        #[arg(long)]
        tex_coeffs: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum VideoCmd {
    /// Writes a procedural toy video.
    Toy {
        #[arg(long, default_value_t = 0)]
        identity: u64,
        #[arg(long)]
        out: PathBuf,
    },
    Invert {
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        enc_ckpt: PathBuf,
        #[command(flatten)]
        mode: ModeArgs,
        /// Skip identity sharing and smoothing.
        #[arg(long)]
        per_frame: bool,
        #[arg(long)]
        out: PathBuf,
    },
    Finetune {
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        gen_ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    Edit {
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        gen_ckpt: PathBuf,
        #[arg(long)]
        flow_ckpt: PathBuf,
        #[arg(long)]
        predictor: PathBuf,
        #[arg(long = "set", value_parser = parse_edit)]
        edits: Vec<(String, f64)>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum EvalCmd {
    TrainPredictor {
        #[arg(long)]
        data: PathBuf,
        /// Generator corpus added to the training images.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// PSNR, SSIM and identity scores of inversions.
    Inversion {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        models: Models,
        #[arg(long)]
        limit: Option<usize>,
        /// Also scores edited images against the originals.
        #[arg(long, requires = "edits")]
        flow_ckpt: Option<PathBuf>,
        #[arg(long = "set", value_parser = parse_edit, requires = "flow_ckpt")]
        edits: Vec<(String, f64)>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Temporal attribute inconsistency of a frame sequence.
    Consistency {
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        predictor: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Grid {
        #[arg(long)]
        kind: GridKind,
        #[arg(long = "image")]
        images: Vec<PathBuf>,
        #[arg(long)]
        video: Option<PathBuf>,
        #[command(flatten)]
        models: Models,
        #[arg(long)]
        flow_ckpt: Option<PathBuf>,
        #[arg(long)]
        predictor: Option<PathBuf>,
        #[arg(long = "set", value_parser = parse_edit)]
        edits: Vec<(String, f64)>,
        /// Attribute swept by `attribute-sweep`.
        #[arg(long)]
        attribute: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_edit(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected attribute=value, got `{s}`"))?;
    let v: f64 = v.parse().map_err(|e| format!("bad value in `{s}`: {e}"))?;
    Ok((k.trim().to_string(), v))
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn open_log(p: &Option<PathBuf>) -> Result<TrainingLog> {
    match p {
        Some(p) => TrainingLog::append_to(p),
        None => Ok(TrainingLog::memory()),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(p: &Path) -> Result<T> {
    let s = std::fs::read_to_string(p)?;
    serde_json::from_str(&s).map_err(|e| Error::arg(format!("{}: {e}", p.display())))
}

fn write_json<T: serde::Serialize>(p: &Path, v: &T) -> Result<()> {
    std::fs::write(p, serde_json::to_string_pretty(v)?)?;
    Ok(())
}

fn mode_of(m: &ModeArgs, cfg: &ExperimentConfig) -> MorphMode {
    m.mode.unwrap_or(cfg.encoder.morph_mode)
}

fn load_models(m: &Models) -> Result<(Generator, Encoder)> {
    Ok((Generator::load(&m.gen_ckpt, DType::F32)?.0, Encoder::load(&m.enc_ckpt, DType::F32)?.0))
}

fn load_coeffs(p: &Option<PathBuf>) -> Result<Option<MorphCoeffs>> {
    p.as_deref().map(read_json).transpose()
}

fn edit_map(edits: &[(String, f64)]) -> BTreeMap<String, f64> {
    edits.iter().cloned().collect()
}

/// Attributes from ground-truth coefficients when given, else the predictor.
fn attributes_for(
    image: &Image,
    coeffs: Option<&MorphCoeffs>,
    predictor: Option<&Path>,
    cfg: &ExperimentConfig,
) -> Result<AttributeVector> {
    match (coeffs, predictor) {
        (Some(c), _) => Ok(attributes_of(c, &cfg.scene.ranges)),
        (None, Some(p)) => Ok(AttributePredictor::load(p)?.0.predict(std::slice::from_ref(image))?.remove(0)),
        (None, None) => Err(Error::arg("pass --predictor or --coeffs to obtain the image attributes")),
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match cli.cmd {
        Cmd::Scene(SceneCmd::Gen { count, identities, resolution, out, overwrite }) => {
            let count = count.unwrap_or(cfg.scene.dataset_size);
            let identities = identities.unwrap_or(cfg.scene.identities).min(count);
            let res = resolution.unwrap_or(cfg.scene.resolution);
            let specs = sample_scene_coeffs(cfg.stage_seed("scene"), count, identities, &cfg.scene.ranges)?;
            let images = nerfedit::exec::try_map_range(Default::default(), specs.len(), |i| render_reference(&specs[i], res))?;
            let attrs: Vec<AttributeVector> = specs.iter().map(|s| attributes_of(&s.coeffs, &cfg.scene.ranges)).collect();
            write_dataset(&specs, &images, &attrs, None, &out, overwrite)?;
            println!("wrote {count} samples to {}", out.display());
        }
        Cmd::Gen(GenCmd::Pretrain { data, out, log }) => {
            let mut log = open_log(&log)?;
            let (g, report) = pretrain_from_dataset(&read_dataset(&data)?, &cfg, &mut log)?;
            g.save(&out, &pretrain_meta(&cfg, &report))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Cmd::Gen(GenCmd::SampleCorpus { ckpt, out, count, overwrite }) => {
            let (g, _) = Generator::load(&ckpt, DType::F32)?;
            let count = count.unwrap_or(cfg.generator.corpus_size);
            let corpus = sample_training_corpus(&g, count, cfg.stage_seed("corpus"))?;
            corpus.write(&out, overwrite)?;
            println!("wrote {count} corpus samples to {}", out.display());
        }
        Cmd::Gen(GenCmd::Render { ckpt, w_file, d_file, resolution, out }) => {
            let (g, _) = Generator::load(&ckpt, DType::F32)?;
            let w: StyleCode = read_json(&w_file)?;
            let d: Vec<f64> = read_json(&d_file)?;
            let res = resolution.unwrap_or(g.arch().output_resolution);
            let r = g.render_codes(&[w.w_geo], &[w.w_tex], &[d], res)?;
            Image::batch_from_tensor(&r.image)?.remove(0).save_png(&out)?;
        }
        Cmd::Enc(EncCmd::Encode { image, ckpt, mode, coeffs, out }) => {
            let (enc, _) = Encoder::load(&ckpt, DType::F32)?;
            let img = Image::load_png(&image)?;
            let oracle = load_coeffs(&coeffs)?.map(|c| vec![c]);
            let (w, d) = enc.encode(&[img], mode_of(&mode, &cfg), oracle.as_deref())?.remove(0);
            let v = serde_json::json!({ "w_geo": w.w_geo, "w_tex": w.w_tex, "d": d });
            match out {
                Some(p) => write_json(&p, &v)?,
                None => println!("{}", serde_json::to_string_pretty(&v)?),
            }
        }
        Cmd::Train(TrainCmd::Encoder { corpus, gen_ckpt, out, data, no_discriminator, real_data_only, log }) => {
            let (g, _) = Generator::load(&gen_ckpt, DType::F32)?;
            let corpus = InversionCorpus::read(&corpus)?;
            let extra = match &data {
                Some(p) => {
                    let h = read_dataset(p)?;
                    Some((h.load_images()?, h.records().iter().map(|r| r.coeffs.clone()).collect::<Vec<_>>()))
                }
                None => None,
            };
            let opts = TrainOptions {
                no_discriminator: no_discriminator || cfg.inversion.no_discriminator,
                real_data_only: real_data_only || cfg.inversion.real_data_only,
                snapshot: Some(out.with_extension("last-good")),
            };
            let mut log = open_log(&log)?;
            let (enc, report) =
                fit_encoder(&corpus, &g, &cfg, &opts, extra.as_ref().map(|(i, c)| (&i[..], &c[..])), &mut log)?;
            enc.save(&out, &encoder_meta(&cfg, &report))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Cmd::Flow(FlowCmd::Train { corpus, out, log }) => {
            let corpus = InversionCorpus::read(&corpus)?;
            let samples: Vec<FlowSample> = corpus
                .codes
                .iter()
                .zip(&corpus.attributes)
                .map(|(c, a)| FlowSample { w_geo: c.w_geo.clone(), w_tex: c.w_tex.clone(), attributes: a.clone() })
                .collect();
            let seed = cfg.stage_seed("flow");
            let mut model = FlowModel::init(FlowArch::from_config(&cfg), seed)?;
            let report = train_flows(&mut model, &samples, &cfg.flow, seed, &mut open_log(&log)?)?;
            model.save(&out, &flow_meta(&cfg, &report), Some(&report))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Cmd::Flow(FlowCmd::Edit { image, edits, models, flow_ckpt, predictor, coeffs, out }) => {
            let (g, e) = load_models(&models)?;
            let (f, _) = FlowModel::load(&flow_ckpt)?;
            let img = Image::load_png(&image)?;
            let c = load_coeffs(&coeffs)?;
            let a = attributes_for(&img, c.as_ref(), predictor.as_deref(), &cfg)?;
            let p = EditPipeline { generator: &g, encoder: &e, flows: Some(&f), mode: mode_of(&models.mode, &cfg) };
            edit_image(&p, &img, c.as_ref(), &a, &edit_map(&edits))?.save_png(&out)?;
        }
        Cmd::Flow(FlowCmd::TextureTransfer { geo, tex, models, geo_coeffs, tex_coeffs, out }) => {
            let (g, e) = load_models(&models)?;
            let p = EditPipeline { generator: &g, encoder: &e, flows: None, mode: mode_of(&models.mode, &cfg) };
            let (gc, tc) = (load_coeffs(&geo_coeffs)?, load_coeffs(&tex_coeffs)?);
            let oracles = gc.as_ref().zip(tc.as_ref());
            texture_transfer(&p, &Image::load_png(&geo)?, &Image::load_png(&tex)?, oracles)?.save_png(&out)?;
        }
        Cmd::Video(VideoCmd::Toy { identity, out }) => {
            let v = toy_video(cfg.stage_seed(&format!("video-{identity}")), identity, &cfg.video, &cfg.scene.ranges, cfg.generator.output_resolution)?;
            v.write(&out)?;
        }
        Cmd::Video(VideoCmd::Invert { video, enc_ckpt, mode, per_frame, out }) => {
            let (enc, _) = Encoder::load(&enc_ckpt, DType::F32)?;
            let mut seq = FrameSequence::read(&video)?;
            let coeffs = enc.extract_morph_coeffs(&seq.frames, mode_of(&mode, &cfg), seq.coeffs.as_deref())?;
            let codes = if per_frame {
                encode_frames(&enc, &seq.frames, &coeffs)?
            } else {
                let (b, a) = extract_frame_irrelevant(&coeffs)?;
                smooth_codes(&encode_sequence(&enc, &seq.frames, &coeffs, &b, &a)?, cfg.video.smoothing_weight, cfg.video.smooth_view)?
            };
            seq.codes = Some(codes);
            seq.write(&out)?;
        }
        Cmd::Video(VideoCmd::Finetune { video, gen_ckpt, out, log }) => {
            let (g, meta) = Generator::load(&gen_ckpt, DType::F32)?;
            let seq = FrameSequence::read(&video)?;
            let codes = seq.codes.as_ref().ok_or_else(|| Error::arg("video has no codes; run `video invert` first"))?;
            let feats = RandomFeatures::new(&cfg.inversion.perceptual_channels, cfg.inversion.perceptual_seed, DType::F32)?;
            let (tuned, report) = finetune_generator(&g, &seq.frames, codes, &cfg.video, &feats, &mut open_log(&log)?)?;
            let mut meta = meta;
            meta.notes = serde_json::json!({ "finetune": { "steps": report.steps, "psnr_before": report.psnr_before, "psnr_after": report.psnr_after }, "config_hash": cfg.hash() });
            tuned.save(&out, &meta)?;
            println!("mean frame PSNR {:.3} -> {:.3} dB", report.psnr_before, report.psnr_after);
        }
        Cmd::Video(VideoCmd::Edit { video, gen_ckpt, flow_ckpt, predictor, edits, out }) => {
            let (g, _) = Generator::load(&gen_ckpt, DType::F32)?;
            let (f, _) = FlowModel::load(&flow_ckpt)?;
            let (p, _) = AttributePredictor::load(&predictor)?;
            let mut seq = FrameSequence::read(&video)?;
            let codes = seq.codes.clone().ok_or_else(|| Error::arg("video has no codes; run `video invert` first"))?;
            let attrs = p.predict(&seq.frames)?;
            seq.frames = edit_sequence(&g, Some(&f), &codes, &attrs, &edit_map(&edits))?;
            seq.codes = None;
            seq.write(&out)?;
        }
        Cmd::Eval(EvalCmd::TrainPredictor { data, corpus, out, log }) => {
            let h = read_dataset(&data)?;
            let mut images = h.load_images()?;
            let mut attrs: Vec<AttributeVector> = h.records().iter().map(|r| r.attributes.clone()).collect();
            if let Some(c) = corpus {
                let c = InversionCorpus::read(&c)?;
                images.extend(c.images);
                attrs.extend(c.attributes);
            }
            let p = train_attribute_predictor(&images, &attrs, &cfg.eval.predictor, cfg.stage_seed("predictor"), &mut open_log(&log)?)?;
            p.save(&out, &predictor_meta(&cfg, &p))?;
            println!("{}", serde_json::to_string_pretty(&p.report())?);
        }
        Cmd::Eval(EvalCmd::Inversion { data, models, limit, flow_ckpt, edits, out }) => {
            let (g, e) = load_models(&models)?;
            let h = read_dataset(&data)?;
            let n = limit.unwrap_or(h.len()).min(h.len());
            let images: Vec<Image> = (0..n).map(|i| h.load_image(i)).collect::<Result<_>>()?;
            let oracle: Vec<MorphCoeffs> = h.records()[..n].iter().map(|r| r.coeffs.clone()).collect();
            let codes = e.encode(&images, mode_of(&models.mode, &cfg), Some(&oracle))?;
            let flows = flow_ckpt.as_deref().map(FlowModel::load).transpose()?.map(|f| f.0);
            let p = EditPipeline { generator: &g, encoder: &e, flows: flows.as_ref(), mode: mode_of(&models.mode, &cfg) };
            let edits: BTreeMap<String, f64> = edits.into_iter().collect();
            let mut rows = Vec::with_capacity(n);
            for (i, (img, (w, d))) in images.iter().zip(&codes).enumerate() {
                let rec = p.render(w, d)?;
                let mut row = BTreeMap::new();
                row.insert("psnr".to_string(), psnr(img, &rec, cfg.eval.psnr_cap)?);
                row.insert("ssim".to_string(), ssim(img, &rec, cfg.eval.ssim_window, cfg.eval.ssim_sigma)?);
                if let Some(r) = e.regressor().filter(|r| r.is_trained()) {
                    row.insert("identity_inverted".to_string(), identity_score(r, img, &rec)?);
                    if flows.is_some() {
                        let edited = edit_image(&p, img, Some(&oracle[i]), &h.records()[i].attributes, &edits)?;
                        row.insert("identity_edited".to_string(), identity_score(r, img, &edited)?);
                    }
                }
                rows.push(row);
            }
            let meta = ReportMeta::new(&cfg, &[("generator", &models.gen_ckpt), ("encoder", &models.enc_ckpt)])?;
            let report = MetricReport::new("inversion", rows, meta);
            report.save(&out)?;
            print!("{}", report.summary_table());
        }
        Cmd::Eval(EvalCmd::Consistency { video, predictor, out }) => {
            let (p, _) = AttributePredictor::load(&predictor)?;
            let seq = FrameSequence::read(&video)?;
            let preds = p.predict(&seq.frames)?;
            let rows = preds[1..]
                .iter()
                .map(|a| {
                    let mae = a.values().iter().zip(preds[0].values()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.values().len() as f64;
                    BTreeMap::from([("attribute_mae".to_string(), mae)])
                })
                .collect();
            let meta = ReportMeta::new(&cfg, &[("predictor", &predictor)])?;
            let report = MetricReport::new("temporal-consistency", rows, meta)
                .with_aggregate("attribute_inconsistency", attribute_inconsistency(&preds)?);
            report.save(&out)?;
            print!("{}", report.summary_table());
        }
        Cmd::Eval(EvalCmd::Grid { kind, images, video, models, flow_ckpt, predictor, edits, attribute, out }) => {
            let (g, e) = load_models(&models)?;
            let flows = flow_ckpt.as_deref().map(FlowModel::load).transpose()?.map(|f| f.0);
            let p = EditPipeline { generator: &g, encoder: &e, flows: flows.as_ref(), mode: mode_of(&models.mode, &cfg) };
            let imgs: Vec<Image> = images.iter().map(|p| Image::load_png(p)).collect::<Result<_>>()?;
            grid_command(&cfg, kind, &p, &imgs, video.as_deref(), predictor.as_deref(), &edit_map(&edits), attribute.as_deref(), &out)?;
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn grid_command(
    cfg: &ExperimentConfig,
    kind: GridKind,
    p: &EditPipeline,
    images: &[Image],
    video: Option<&Path>,
    predictor: Option<&Path>,
    edits: &BTreeMap<String, f64>,
    attribute: Option<&str>,
    out: &Path,
) -> Result<()> {
    let first = || images.first().ok_or_else(|| Error::arg("pass at least one --image"));
    let attrs = |img: &Image| attributes_for(img, None, predictor, cfg);
    match kind {
        GridKind::Multiview => {
            let img = first()?;
            let (w, d) = p.invert(img, None)?;
            let mut variants = vec![("inversion".to_string(), w.clone())];
            if !edits.is_empty() {
                let f = p.flows.ok_or_else(|| Error::arg("edits need --flow-ckpt"))?;
                let (g2, t2) = f.edit_codes(&w.w_geo, &w.w_tex, &attrs(img)?, edits)?;
                let label = edits.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(",");
                variants.push((label, StyleCode { w_geo: g2, w_tex: t2 }));
            }
            let yaws = [-0.6, -0.3, 0.0, 0.3, 0.6];
            let mut tiles = Vec::new();
            for (_, v) in &variants {
                let mut row = Vec::new();
                for yaw in yaws {
                    let dv = with_yaw(&d, yaw)?;
                    row.push(p.render(v, &dv)?);
                }
                tiles.push(row);
            }
            emit_grid(kind, &tiles, variants.into_iter().map(|v| v.0).collect(), yaws.iter().map(|y| format!("yaw={y}")).collect(), out)
        }
        GridKind::AttributeSweep => {
            let name = attribute.ok_or_else(|| Error::arg("attribute-sweep needs --attribute"))?;
            if p.flows.is_none() {
                return Err(Error::arg("attribute-sweep needs --flow-ckpt"));
            }
            let targets = [0.1, 0.3, 0.5, 0.7, 0.9];
            let mut tiles = Vec::new();
            for img in images {
                let a = attrs(img)?;
                let row = targets
                    .iter()
                    .map(|t| edit_image(p, img, None, &a, &BTreeMap::from([(name.to_string(), *t)])))
                    .collect::<Result<Vec<_>>>()?;
                tiles.push(row);
            }
            let rows = (0..images.len()).map(|i| format!("image {i}")).collect();
            emit_grid(kind, &tiles, rows, targets.iter().map(|t| format!("{name}={t}")).collect(), out)
        }
        GridKind::TextureTransfer => {
            let tiles = images
                .iter()
                .map(|g| images.iter().map(|t| texture_transfer(p, g, t, None)).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<String> = (0..images.len()).map(|i| format!("image {i}")).collect();
            emit_grid(kind, &tiles, labels.clone(), labels, out)
        }
        GridKind::VideoStrip => {
            let seq = FrameSequence::read(video.ok_or_else(|| Error::arg("video-strip needs --video"))?)?;
            let n = seq.len().min(8);
            let step = (seq.len() / n).max(1);
            let idx: Vec<usize> = (0..n).map(|i| i * step).collect();
            let mut tiles = vec![idx.iter().map(|&i| seq.frames[i].clone()).collect::<Vec<_>>()];
            let mut rows = vec!["frames".to_string()];
            if let Some(codes) = &seq.codes {
                let sel: Vec<_> = idx.iter().map(|&i| codes[i].clone()).collect();
                tiles.push(render_frames(p.generator, &sel)?);
                rows.push("inversion".into());
            }
            emit_grid(kind, &tiles, rows, idx.iter().map(|i| format!("frame {i}")).collect(), out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
