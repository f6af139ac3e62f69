use std::fs;
use std::path::{Path, PathBuf};

use bistet_core::data::{
    generate_dataset, load_dataset, load_dataset_with, load_lexicon, read_pgm, LabeledImage, Lexicon, PixelStats,
};
use bistet_core::infer::{
    evaluate_accuracy, extract_attention, lexicon_predict, predict_items, AttentionKind, Candidate, DecodeMode,
};
use bistet_core::model::{count_parameters, Model};
use bistet_core::train::{load_checkpoint, run_training, FINAL_CHECKPOINT};
use bistet_core::Tensor;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::{AttentionArgs, EvalArgs, GenDataArgs, ParamsArgs, PredictArgs, TrainArgs};

const PREDICT_CHUNK: usize = 64;
const RUN_CONFIG_FILE: &str = "run_config.json";
const HEATMAP_SCALE: usize = 8;

fn log_config(command: &str, cfg: &RunConfig, extra: &[(&str, String)]) {
    let mut line = format!("bistet {command}: resolved config {}", cfg.to_json());
    for (k, v) in extra {
        line.push_str(&format!(" {k}={v}"));
    }
    eprintln!("{line}");
}

fn required(value: Option<PathBuf>, what: &str, flag: &str) -> Result<PathBuf, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("{what} is required (--{flag} or paths.{} in the config)", flag.replace('-', "_"))))
}

fn parse_mode(s: &str) -> Result<DecodeMode, CliError> {
    s.parse().map_err(CliError::Core)
}

struct Loaded {
    model: Model,
    stats: PixelStats,
}

fn load_model(path: &Path) -> Result<Loaded, CliError> {
    let ck = load_checkpoint(path)?;
    let stats = ck.meta.stats.unwrap_or_else(PixelStats::identity);
    Ok(Loaded {
        model: ck.to_model()?,
        stats,
    })
}

fn load_lexicon_opt(path: Option<&Path>) -> Result<Option<Lexicon>, CliError> {
    path.map(load_lexicon).transpose().map_err(CliError::Core)
}

pub fn gen_data(args: GenDataArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(args.config.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.data.seed = seed;
    }
    if let Some(count) = args.count {
        cfg.data.count = count;
    }
    if args.out.is_some() {
        cfg.paths.out = args.out;
    }
    log_config("gen-data", &cfg, &[]);
    let out = required(cfg.paths.out.clone(), "output directory", "out")?;
    let manifest = generate_dataset(&cfg.data, &out)?;
    println!(
        "wrote {} images to {} (mean {:.6}, std {:.6})",
        manifest.count,
        out.display(),
        manifest.mean,
        manifest.std
    );
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(args.config.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if let Some(n) = args.iterations {
        cfg.train.total_iterations = n;
    }
    if args.out.is_some() {
        cfg.paths.out = args.out;
    }
    if args.train_data.is_some() {
        cfg.paths.train_data = args.train_data;
    }
    if args.eval_data.is_some() {
        cfg.paths.eval_data = args.eval_data;
    }
    log_config("train", &cfg, &[]);
    let out = required(cfg.paths.out.clone(), "output directory", "out")?;
    let train_dir = required(cfg.paths.train_data.clone(), "training data", "train-data")?;
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let path = out.join(RUN_CONFIG_FILE);
    fs::write(&path, cfg.to_json() + "\n").map_err(|e| CliError::io(&path, e))?;

    let train = load_dataset(&train_dir)?;
    let eval = cfg
        .paths
        .eval_data
        .as_deref()
        .map(|dir| load_dataset_with(dir, Some(train.stats)))
        .transpose()?;
    run_training(&cfg.train, &cfg.model, &train, eval.as_ref(), Some(&out), |row| {
        eprintln!("{}", row.to_tsv());
    })?;
    println!("{}", out.join(FINAL_CHECKPOINT).display());
    Ok(())
}

fn apply_lexicon(text: String, lexicon: Option<&Lexicon>) -> String {
    match lexicon {
        Some(lex) => lexicon_predict(&text.to_lowercase(), lex).to_string(),
        None => text,
    }
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(args.config.config.as_deref())?;
    if args.checkpoint.is_some() {
        cfg.paths.checkpoint = args.checkpoint;
    }
    if args.data.is_some() {
        cfg.paths.eval_data = args.data;
    }
    if args.lexicon.is_some() {
        cfg.paths.lexicon = args.lexicon;
    }
    if args.out.is_some() {
        cfg.paths.out = args.out;
    }
    let mode = parse_mode(&args.direction)?;
    log_config("eval", &cfg, &[("direction", args.direction.clone())]);
    let ck = required(cfg.paths.checkpoint.clone(), "checkpoint", "checkpoint")?;
    let data_dir = required(cfg.paths.eval_data.clone(), "evaluation data", "data")?;
    let Loaded { model, stats } = load_model(&ck)?;
    let lexicon = load_lexicon_opt(cfg.paths.lexicon.as_deref())?;
    let data = load_dataset_with(&data_dir, Some(stats))?;

    let items: Vec<&LabeledImage> = data.items.iter().collect();
    let preds = predict_items(&model, &items, mode, PREDICT_CHUNK)?;
    let texts: Vec<String> = preds.iter().map(|p| p.text.clone()).collect();
    let truths: Vec<String> = items.iter().map(|i| i.transcript.clone()).collect();
    let report = evaluate_accuracy(&texts, &truths, lexicon.as_ref())?;
    let tsv = report.to_tsv();
    print!("{tsv}");

    if let Some(out) = &cfg.paths.out {
        fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
        let path = out.join("report.tsv");
        fs::write(&path, &tsv).map_err(|e| CliError::io(&path, e))?;
        let mut lines = String::from("filename\tground_truth\tprediction\tdirection\tprobability\n");
        for ((name, item), p) in data.filenames.iter().zip(&items).zip(&preds) {
            let text = apply_lexicon(p.text.clone(), lexicon.as_ref());
            lines.push_str(&format!(
                "{name}\t{}\t{text}\t{}\t{:.6e}\n",
                item.transcript, p.direction, p.probability
            ));
        }
        let path = out.join("predictions.tsv");
        fs::write(&path, lines).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}

fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| CliError::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "pgm"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(CliError::Usage("no PGM images found in the given inputs".into()));
    }
    Ok(files)
}

fn load_image(path: &Path, model: &Model, stats: PixelStats) -> Result<LabeledImage, CliError> {
    let (w, h, raw) = read_pgm(path)?;
    let (mh, mw) = (model.config().image_height, model.config().image_width);
    if (h, w) != (mh, mw) {
        return Err(CliError::Usage(format!(
            "{} is {w}x{h}, the model expects {mw}x{mh}",
            path.display()
        )));
    }
    Ok(LabeledImage {
        height: h,
        width: w,
        pixels: raw.into_iter().map(|p| stats.normalize(p)).collect(),
        transcript: String::new(),
    })
}

pub fn predict(args: PredictArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(args.config.config.as_deref())?;
    if args.checkpoint.is_some() {
        cfg.paths.checkpoint = args.checkpoint;
    }
    if args.lexicon.is_some() {
        cfg.paths.lexicon = args.lexicon;
    }
    let mode = parse_mode(&args.direction)?;
    log_config("predict", &cfg, &[("direction", args.direction.clone())]);
    let ck = required(cfg.paths.checkpoint.clone(), "checkpoint", "checkpoint")?;
    let Loaded { model, stats } = load_model(&ck)?;
    let lexicon = load_lexicon_opt(cfg.paths.lexicon.as_deref())?;
    let files = expand_inputs(&args.inputs)?;
    let images = files
        .iter()
        .map(|f| load_image(f, &model, stats))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&LabeledImage> = images.iter().collect();
    let preds = predict_items(&model, &refs, mode, PREDICT_CHUNK)?;
    for (file, p) in files.iter().zip(preds) {
        let name = file.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let text = apply_lexicon(p.text, lexicon.as_ref());
        println!("{name}\t{text}\t{}\t{:.6e}", p.direction, p.probability);
    }
    Ok(())
}

pub fn attention(args: AttentionArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(args.config.config.as_deref())?;
    if args.checkpoint.is_some() {
        cfg.paths.checkpoint = args.checkpoint;
    }
    if args.out.is_some() {
        cfg.paths.out = args.out;
    }
    let mode = parse_mode(&args.direction)?;
    log_config("attention", &cfg, &[("direction", args.direction.clone())]);
    let ck = required(cfg.paths.checkpoint.clone(), "checkpoint", "checkpoint")?;
    let out = required(cfg.paths.out.clone(), "output directory", "out")?;
    let Loaded { model, stats } = load_model(&ck)?;
    let image = load_image(&args.image, &model, stats)?;
    let tensor = Tensor::new(&[image.height, image.width], image.pixels)?;
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;

    let last = model.config().n_layers.saturating_sub(1);
    println!("direction\ttext\tr\tdegenerate");
    for &dir in mode.directions() {
        let ex = extract_attention(&model, &tensor, dir)?;
        for m in &ex.maps {
            let stem = format!("{dir}_{}_layer{}_head{}", m.kind.as_str(), m.layer, m.head);
            write_map(&out, &stem, &m.to_pgm(HEATMAP_SCALE), &m.to_csv())?;
        }
        if model.config().n_layers == 0 {
            continue;
        }
        let mean = ex.character_cross_map(last)?;
        let stem = format!("{dir}_{}_layer{last}_mean", AttentionKind::DecoderCross.as_str());
        write_map(&out, &stem, &mean.to_pgm(HEATMAP_SCALE), &mean.to_csv())?;
        let text = Candidate::new(dir, ex.decoded.clone(), model.vocab())?.text;
        match ex.direction_score(last) {
            Ok(s) => println!("{dir}\t{text}\t{:.4}\t{}", s.r, s.degenerate),
            Err(_) => println!("{dir}\t{text}\tundefined\tfewer than 3 characters"),
        }
    }
    Ok(())
}

fn write_map(dir: &Path, stem: &str, pgm: &[u8], csv: &str) -> Result<(), CliError> {
    let p = dir.join(format!("{stem}.pgm"));
    fs::write(&p, pgm).map_err(|e| CliError::io(&p, e))?;
    let c = dir.join(format!("{stem}.csv"));
    fs::write(&c, csv).map_err(|e| CliError::io(&c, e))
}

pub fn params(args: ParamsArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(args.config.config.as_deref())?;
    log_config("params", &cfg, &[]);
    let counts = count_parameters(&cfg.model)?;
    println!("component\tparameters");
    for (name, n) in counts.rows() {
        println!("{name}\t{n}");
    }
    println!("total\t{}", counts.total());
    Ok(())
}
