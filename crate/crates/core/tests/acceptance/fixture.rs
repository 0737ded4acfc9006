use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use candle_core::DType;

use nerfedit::config::ExperimentConfig;
use nerfedit::encoder::Encoder;
use nerfedit::eval::{predictor_meta, train_attribute_predictor, AttributePredictor};
use nerfedit::exec::{try_map_range, ExecPolicy};
use nerfedit::flow::{flow_meta, train_flows, FlowArch, FlowModel, FlowSample};
use nerfedit::generator::{pretrain_from_dataset, pretrain_meta, sample_training_corpus, Generator, InversionCorpus};
use nerfedit::inversion::{encoder_meta, fit_encoder, new_encoder, train_encoder, InversionData, InversionReport, TrainOptions};
use nerfedit::scene::{attributes_of, read_dataset, render_reference, sample_scene_coeffs, write_dataset, AttributeVector};
use nerfedit::trainlog::TrainingLog;

pub const HELD_OUT: usize = 200;

/// Trained models shared by the pipeline criteria.
pub struct Fixture {
    pub cfg: ExperimentConfig,
    pub dir: PathBuf,
    pub gen: Generator,
    pub held: InversionCorpus,
    pub enc: Encoder,
    pub enc_report: InversionReport,
    pub nodisc_report: InversionReport,
    pub predictor: AttributePredictor,
    pub flows: FlowModel,
}

impl Fixture {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

fn stage<T>(name: &str, f: impl FnOnce() -> T) -> T {
    let t = Instant::now();
    eprintln!("acceptance fixture: {name} ...");
    let out = f();
    eprintln!("acceptance fixture: {name} done in {:.0} s", t.elapsed().as_secs_f64());
    out
}

fn log_for(dir: &Path, name: &str) -> TrainingLog {
    TrainingLog::append_to(&dir.join(format!("{name}.log.jsonl"))).unwrap()
}

fn read_report(p: &Path) -> InversionReport {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn write_report(p: &Path, r: &InversionReport) {
    std::fs::write(p, serde_json::to_string_pretty(r).unwrap()).unwrap();
}

fn build() -> Fixture {
    let cfg = ExperimentConfig::default();
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("acceptance-{}", &cfg.hash()[..16]));
    std::fs::create_dir_all(&dir).unwrap();
    eprintln!("acceptance fixture at {}", dir.display());

    let data_dir = dir.join("scenes");
    if !data_dir.join("index.json").exists() {
        stage("procedural dataset", || {
            let s = &cfg.scene;
            let specs = sample_scene_coeffs(cfg.stage_seed("scene"), s.dataset_size, s.identities, &s.ranges).unwrap();
            let images = try_map_range(ExecPolicy::Parallel, specs.len(), |i| render_reference(&specs[i], s.resolution)).unwrap();
            let attrs: Vec<AttributeVector> = specs.iter().map(|p| attributes_of(&p.coeffs, &s.ranges)).collect();
            write_dataset(&specs, &images, &attrs, None, &data_dir, true).unwrap();
        });
    }
    let data = read_dataset(&data_dir).unwrap();

    let gen_path = dir.join("generator.ckpt");
    if !gen_path.exists() {
        stage("generator pretraining", || {
            let (g, r) = pretrain_from_dataset(&data, &cfg, &mut log_for(&dir, "pretrain")).unwrap();
            g.save(&gen_path, &pretrain_meta(&cfg, &r)).unwrap();
        });
    }
    let gen = Generator::load(&gen_path, DType::F32).unwrap().0;

    let corpus_dir = dir.join("corpus");
    let held_dir = dir.join("corpus-held-out");
    if !held_dir.join("index.json").exists() {
        stage("inversion corpus", || {
            let n = cfg.generator.corpus_size;
            let c = sample_training_corpus(&gen, n + HELD_OUT, cfg.stage_seed("corpus")).unwrap();
            let (train, held) = c.split(n);
            train.write(&corpus_dir, true).unwrap();
            held.write(&held_dir, true).unwrap();
        });
    }
    let train = InversionCorpus::read(&corpus_dir).unwrap();
    let held = InversionCorpus::read(&held_dir).unwrap();

    let enc_path = dir.join("encoder.ckpt");
    let enc_report_path = dir.join("encoder-report.json");
    if !enc_path.exists() {
        stage("encoder training", || {
            let images = data.load_images().unwrap();
            let coeffs: Vec<_> = data.records().iter().map(|r| r.coeffs.clone()).collect();
            let opts = TrainOptions { snapshot: Some(dir.join("encoder.last-good")), ..Default::default() };
            let (enc, r) = fit_encoder(&train, &gen, &cfg, &opts, Some((&images, &coeffs)), &mut log_for(&dir, "encoder")).unwrap();
            write_report(&enc_report_path, &r);
            enc.save(&enc_path, &encoder_meta(&cfg, &r)).unwrap();
        });
    }
    let enc = Encoder::load(&enc_path, DType::F32).unwrap().0;
    let enc_report = read_report(&enc_report_path);

    // same regressor, corpus and step budget; only the discriminator is dropped
    let nodisc_path = dir.join("encoder-no-discriminator.json");
    if !nodisc_path.exists() {
        stage("encoder training without discriminator", || {
            let mut e = new_encoder(&cfg, DType::F32).unwrap();
            if let Some(r) = enc.regressor() {
                e.set_regressor(r.clone());
            }
            let d = InversionData::from_corpus(&train, &e, cfg.encoder.morph_mode).unwrap();
            let opts = TrainOptions { no_discriminator: true, ..Default::default() };
            let r = train_encoder(&mut e, &d, &gen, &cfg, &opts, &mut log_for(&dir, "encoder-no-discriminator")).unwrap();
            write_report(&nodisc_path, &r);
        });
    }
    let nodisc_report = read_report(&nodisc_path);

    let pred_path = dir.join("predictor.ckpt");
    if !pred_path.exists() {
        stage("attribute predictor", || {
            let mut images = data.load_images().unwrap();
            let mut attrs: Vec<AttributeVector> = data.records().iter().map(|r| r.attributes.clone()).collect();
            images.extend(train.images.iter().cloned());
            attrs.extend(train.attributes.iter().cloned());
            let p = train_attribute_predictor(&images, &attrs, &cfg.eval.predictor, cfg.stage_seed("predictor"), &mut log_for(&dir, "predictor")).unwrap();
            p.save(&pred_path, &predictor_meta(&cfg, &p)).unwrap();
        });
    }
    let predictor = AttributePredictor::load(&pred_path).unwrap().0;

    let flow_path = dir.join("flows.ckpt");
    if !flow_path.exists() {
        stage("attribute flows", || {
            let samples: Vec<FlowSample> = train
                .codes
                .iter()
                .zip(&train.attributes)
                .map(|(c, a)| FlowSample { w_geo: c.w_geo.clone(), w_tex: c.w_tex.clone(), attributes: a.clone() })
                .collect();
            let seed = cfg.stage_seed("flow");
            let mut m = FlowModel::init(FlowArch::from_config(&cfg), seed).unwrap();
            let r = train_flows(&mut m, &samples, &cfg.flow, seed, &mut log_for(&dir, "flows")).unwrap();
            m.save(&flow_path, &flow_meta(&cfg, &r), Some(&r)).unwrap();
        });
    }
    let flows = FlowModel::load(&flow_path).unwrap().0;

    Fixture { cfg, dir, gen, held, enc, enc_report, nodisc_report, predictor, flows }
}

pub fn get() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(build)
}
