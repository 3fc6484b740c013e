//! Command-line pipeline driver: scene synthesis, preparation, training,
//! evaluation, map rendering, feature export, and gradient checking.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use hsicnn::checkpoint::load_checkpoint;
use hsicnn::data::{
    enumerate_samples, normalize_cube, stratified_split, synth_generate, HsiCube, LabelRaster,
    SampleSet, SplitIndices,
};
use hsicnn::error::{Error, Result};
use hsicnn::eval::{
    confusion_matrix, export_features, render_map, FeatureLayer, MapMode, MetricsReport,
};
use hsicnn::gradcheck;
use hsicnn::model::{ArchConfig, Model};
use hsicnn::train::{train, TrainConfig};

const USAGE: &str = "\
hsicnn <command> [--flag value ...]

commands:
  synth            generate a synthetic labeled scene
                   --classes N --bands N --size N (or --width/--height)
                   --noise F --seed N --cube PATH --labels PATH
  prepare          validate, normalize, enumerate, and split a scene
                   --cube PATH --labels PATH --split RATIO --seed N --out DIR
  train            train a model on a prepared scene
                   --cube PATH --labels PATH --split PATH --preset NAME
                   --config PATH --iterations N --batch N --lr F --decay F
                   --eval-every N --checkpoint-every N --seed N --threads N
                   --checkpoint PATH --out HISTORY.csv
  eval             print overall/average accuracy on the test split
                   --cube --labels --split --checkpoint --threads [--out CSV]
  map              render a classification map as PPM
                   --cube --labels --checkpoint --mode full|labeled-only
                   --threads --out PATH
  export-features  write hidden-layer activations as CSV
                   --cube --labels --split --checkpoint --layer fc1|fc2
                   --set train|test|all --out PATH
  gradcheck        verify analytic gradients against finite differences
                   --seed N

Relative paths resolve against HSICNN_DATA_DIR (default: current directory).";

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    match run(&argv) {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("{USAGE}");
            ExitCode::from(2)
        }
        Err(CliError::Run(err)) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        CliError::Run(err)
    }
}

fn run(argv: &[String]) -> std::result::Result<ExitCode, CliError> {
    let Some(command) = argv.first() else {
        return Err(CliError::Usage("missing command".into()));
    };
    if command == "--help" || command == "-h" || command == "help" {
        println!("{USAGE}");
        return Ok(ExitCode::SUCCESS);
    }
    let mut args = Args::parse(&argv[1..])?;
    let code = match command.as_str() {
        "synth" => cmd_synth(&mut args)?,
        "prepare" => cmd_prepare(&mut args)?,
        "train" => cmd_train(&mut args)?,
        "eval" => cmd_eval(&mut args)?,
        "map" => cmd_map(&mut args)?,
        "export-features" => cmd_export(&mut args)?,
        "gradcheck" => cmd_gradcheck(&mut args)?,
        other => return Err(CliError::Usage(format!("unknown command '{other}'"))),
    };
    args.finish()?;
    Ok(code)
}

// ---------------------------------------------------------------------------
// Flag parsing

struct Args {
    values: HashMap<String, String>,
    consumed: HashSet<String>,
}

impl Args {
    fn parse(tokens: &[String]) -> std::result::Result<Self, CliError> {
        let mut values = HashMap::new();
        let mut it = tokens.iter();
        while let Some(token) = it.next() {
            let Some(name) = token.strip_prefix("--") else {
                return Err(CliError::Usage(format!("unexpected argument '{token}'")));
            };
            let Some(value) = it.next() else {
                return Err(CliError::Usage(format!("flag --{name} needs a value")));
            };
            if values.insert(name.to_string(), value.clone()).is_some() {
                return Err(CliError::Usage(format!("flag --{name} given twice")));
            }
        }
        Ok(Args {
            values,
            consumed: HashSet::new(),
        })
    }

    fn take(&mut self, name: &str) -> Option<String> {
        self.consumed.insert(name.to_string());
        self.values.get(name).cloned()
    }

    fn take_parsed<T: std::str::FromStr>(
        &mut self,
        name: &str,
    ) -> std::result::Result<Option<T>, CliError> {
        match self.take(name) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| {
                CliError::Usage(format!("cannot parse --{name} value '{raw}'"))
            }),
        }
    }

    fn finish(&self) -> std::result::Result<(), CliError> {
        for key in self.values.keys() {
            if !self.consumed.contains(key) {
                return Err(CliError::Usage(format!("unknown flag --{key}")));
            }
        }
        Ok(())
    }
}

fn data_root() -> PathBuf {
    std::env::var_os("HSICNN_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn resolve(root: &Path, flag: Option<String>, default_name: &str) -> PathBuf {
    let raw = flag.map(PathBuf::from).unwrap_or_else(|| PathBuf::from(default_name));
    if raw.is_absolute() {
        raw
    } else {
        root.join(raw)
    }
}

// ---------------------------------------------------------------------------
// Commands

fn cmd_synth(args: &mut Args) -> std::result::Result<ExitCode, CliError> {
    let root = data_root();
    let classes = args.take_parsed("classes")?.unwrap_or(8);
    let bands = args.take_parsed("bands")?.unwrap_or(176);
    let size: Option<usize> = args.take_parsed("size")?;
    let width = args.take_parsed("width")?.or(size).unwrap_or(64);
    let height = args.take_parsed("height")?.or(size).unwrap_or(64);
    let noise = args.take_parsed("noise")?.unwrap_or(0.1);
    let seed = args.take_parsed("seed")?.unwrap_or(0);
    let cube_path = resolve(&root, args.take("cube"), "cube.hsic");
    let labels_path = resolve(&root, args.take("labels"), "labels.pgm");
    args.finish()?;

    let (cube, labels) = synth_generate(classes, bands, width, height, noise, seed)?;
    cube.save(&cube_path)?;
    labels.save(&labels_path)?;
    println!(
        "wrote {width}x{height}x{bands} scene with {classes} classes to {} and {}",
        cube_path.display(),
        labels_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn load_scene(cube_path: &Path, labels_path: &Path) -> Result<(HsiCube, LabelRaster)> {
    let cube = HsiCube::load(cube_path)?;
    let labels = LabelRaster::load(labels_path)?;
    if cube.width() != labels.width() || cube.height() != labels.height() {
        return Err(Error::Dimension(format!(
            "cube {} is {}x{}, labels {} are {}x{}",
            cube_path.display(),
            cube.width(),
            cube.height(),
            labels_path.display(),
            labels.width(),
            labels.height()
        )));
    }
    Ok((cube, labels))
}

fn cmd_prepare(args: &mut Args) -> std::result::Result<ExitCode, CliError> {
    let root = data_root();
    let cube_path = resolve(&root, args.take("cube"), "cube.hsic");
    let labels_path = resolve(&root, args.take("labels"), "labels.pgm");
    let ratio: f64 = args.take_parsed("split")?.unwrap_or(0.8);
    let seed = args.take_parsed("seed")?.unwrap_or(0);
    let out_dir = match args.take("out") {
        Some(dir) => resolve(&root, Some(dir), "."),
        None => root.clone(),
    };
    args.finish()?;

    // Everything is validated before any output is written.
    let (cube, labels) = load_scene(&cube_path, &labels_path)?;
    let samples = enumerate_samples(&labels)?;
    let split = stratified_split(&samples, ratio, seed)?;
    let (normalized, stats) = normalize_cube(&cube);

    std::fs::create_dir_all(&out_dir).map_err(Error::from)?;
    let prepared_path = out_dir.join("prepared.hsic");
    let split_path = out_dir.join("split.txt");
    let manifest_path = out_dir.join("run.manifest");
    normalized.save(&prepared_path)?;
    split.save(&split_path)?;

    let mut manifest = String::new();
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    manifest.push_str(&format!("created_unix={now}\n"));
    manifest.push_str(&format!("cube={}\n", cube_path.display()));
    manifest.push_str(&format!("labels={}\n", labels_path.display()));
    manifest.push_str(&format!("prepared_cube={}\n", prepared_path.display()));
    manifest.push_str(&format!("split={}\n", split_path.display()));
    manifest.push_str(&format!("seed={seed}\n"));
    manifest.push_str(&format!("ratio={ratio}\n"));
    manifest.push_str(&format!("samples={}\n", samples.len()));
    manifest.push_str(&format!("classes={}\n", samples.n_classes()));
    manifest.push_str(&format!("bands={}\n", cube.bands()));
    manifest.push_str(&format!(
        "train_samples={}\ntest_samples={}\n",
        split.train.len(),
        split.test.len()
    ));
    for (i, s) in stats.iter().enumerate() {
        manifest.push_str(&format!("band_stat={i} {} {}\n", s.mean, s.std));
    }
    std::fs::write(&manifest_path, manifest).map_err(Error::from)?;

    println!(
        "prepared {} samples ({} train / {} test, {} classes); wrote {}, {}, {}",
        samples.len(),
        split.train.len(),
        split.test.len(),
        samples.n_classes(),
        prepared_path.display(),
        split_path.display(),
        manifest_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// Input paths shared by `eval`, `map`, and `export-features`.
fn pipeline_paths(args: &mut Args, root: &Path) -> (PathBuf, PathBuf, PathBuf) {
    (
        resolve(root, args.take("cube"), "prepared.hsic"),
        resolve(root, args.take("labels"), "labels.pgm"),
        resolve(root, args.take("checkpoint"), "model.ckpt"),
    )
}

fn load_pipeline(
    (cube_path, labels_path, ckpt_path): &(PathBuf, PathBuf, PathBuf),
) -> Result<(HsiCube, LabelRaster, SampleSet, Model<f32>)> {
    let (cube, labels) = load_scene(cube_path, labels_path)?;
    let samples = enumerate_samples(&labels)?;
    let model = load_checkpoint(ckpt_path)?;
    Ok((cube, labels, samples, model))
}

fn load_split_for(samples: &SampleSet, path: &Path) -> Result<SplitIndices> {
    let split = SplitIndices::load(path)?;
    split.validate(samples)?;
    Ok(split)
}

/// Key=value overrides shared by `train`'s --config file.
fn apply_config_file(
    path: &Path,
    arch: &mut ArchConfig,
    cfg: &mut TrainConfig,
) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| hsicnn::error::io_context(path, e))?;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Format(format!(
                "{}: line {} is not key=value",
                path.display(),
                lineno + 1
            ))
        })?;
        let bad = |what: &str| {
            Error::Format(format!(
                "{}: cannot parse {key}={value} as {what}",
                path.display()
            ))
        };
        let int = || -> Result<usize> { value.trim().parse().map_err(|_| bad("integer")) };
        match key.trim() {
            "bands" => arch.bands = int()?,
            "classes" => arch.classes = int()?,
            "conv1_kernel_depth" => arch.conv1_kernel_depth = int()?,
            "conv1_stride" => arch.conv1_stride = int()?,
            "conv1_kernels" => arch.conv1_kernels = int()?,
            "conv2_kernels" => arch.conv2_kernels = int()?,
            "conv2_stride" => arch.conv2_stride = int()?,
            "pool_window" => arch.pool_window = int()?,
            "pool_stride" => arch.pool_stride = int()?,
            "fc1_nodes" => arch.fc1_nodes = int()?,
            "fc2_nodes" => arch.fc2_nodes = int()?,
            "learning_rate" => cfg.learning_rate = value.trim().parse().map_err(|_| bad("float"))?,
            "decay" => cfg.decay = value.trim().parse().map_err(|_| bad("float"))?,
            "batch_size" => cfg.batch_size = int()?,
            "max_iterations" => cfg.max_iterations = int()? as u64,
            "eval_every" => cfg.eval_every = int()? as u64,
            "checkpoint_every" => cfg.checkpoint_every = int()? as u64,
            "seed" => cfg.seed = int()? as u64,
            "threads" => cfg.threads = int()?,
            other => {
                return Err(Error::Format(format!(
                    "{}: unknown config key '{other}'",
                    path.display()
                )))
            }
        }
    }
    Ok(())
}

fn cmd_train(args: &mut Args) -> std::result::Result<ExitCode, CliError> {
    let root = data_root();
    let cube_path = resolve(&root, args.take("cube"), "prepared.hsic");
    let labels_path = resolve(&root, args.take("labels"), "labels.pgm");
    let split_path = resolve(&root, args.take("split"), "split.txt");
    let ckpt_path = resolve(&root, args.take("checkpoint"), "model.ckpt");
    let history_path = resolve(&root, args.take("out"), "history.csv");

    let preset = args.take("preset");
    let config_path = args.take("config").map(|p| resolve(&root, Some(p), ""));
    let iterations: Option<u64> = args.take_parsed("iterations")?;
    let batch: Option<usize> = args.take_parsed("batch")?;
    let lr: Option<f64> = args.take_parsed("lr")?;
    let decay: Option<f64> = args.take_parsed("decay")?;
    let eval_every: Option<u64> = args.take_parsed("eval-every")?;
    let checkpoint_every: Option<u64> = args.take_parsed("checkpoint-every")?;
    let seed: Option<u64> = args.take_parsed("seed")?;
    let threads: Option<usize> = args.take_parsed("threads")?;
    args.finish()?;

    if !cube_path.exists() {
        return Err(CliError::Run(Error::Usage(format!(
            "{} does not exist; run `hsicnn prepare` first or pass --cube",
            cube_path.display()
        ))));
    }
    let (cube, labels) = load_scene(&cube_path, &labels_path)?;
    let samples = enumerate_samples(&labels)?;
    let split = load_split_for(&samples, &split_path)?;

    // Architecture: preset (or baseline) -> config file -> explicit flags.
    let mut arch = match &preset {
        Some(name) => ArchConfig::preset(name, cube.bands(), samples.n_classes())?,
        None => ArchConfig::new(cube.bands(), samples.n_classes()),
    };
    let mut cfg = TrainConfig::default();
    if let Some(config_path) = &config_path {
        apply_config_file(config_path, &mut arch, &mut cfg)?;
    }
    if let Some(v) = iterations {
        cfg.max_iterations = v;
    }
    if let Some(v) = batch {
        cfg.batch_size = v;
    }
    if let Some(v) = lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = decay {
        cfg.decay = v;
    }
    if let Some(v) = eval_every {
        cfg.eval_every = v;
    }
    if let Some(v) = checkpoint_every {
        cfg.checkpoint_every = v;
    }
    if let Some(v) = seed {
        cfg.seed = v;
    }
    if let Some(v) = threads {
        cfg.threads = v;
    }

    if arch.bands != cube.bands() {
        return Err(CliError::Run(Error::Config(format!(
            "configured band count {} does not match the cube's {}",
            arch.bands,
            cube.bands()
        ))));
    }
    let model = Model::<f32>::build(arch, cfg.seed)?;
    println!(
        "training {} parameters for {} iterations (batch {}, lr {}, decay {})",
        model.param_count(),
        cfg.max_iterations,
        cfg.batch_size,
        cfg.learning_rate,
        cfg.decay
    );
    let (_, history) = train(model, &cube, &samples, &split, &cfg, Some(&ckpt_path))?;
    history.save_csv(&history_path)?;
    if let Some(last) = history.points.last() {
        println!(
            "finished at iteration {}: loss {:.4}, train acc {:.4}, test acc {:.4}",
            last.iteration, last.loss, last.train_acc, last.test_acc
        );
    }
    println!(
        "checkpoint {} / history {}",
        ckpt_path.display(),
        history_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: &mut Args) -> std::result::Result<ExitCode, CliError> {
    let root = data_root();
    let split_path = resolve(&root, args.take("split"), "split.txt");
    let threads = args.take_parsed("threads")?.unwrap_or(1);
    let out = args.take("out");
    let paths = pipeline_paths(args, &root);
    args.finish()?;
    let (cube, _labels, samples, model) = load_pipeline(&paths)?;
    let split = load_split_for(&samples, &split_path)?;

    let records = samples.select(&split.test);
    let cm = confusion_matrix(&model, &cube, &records, samples.n_classes(), threads)?;
    let report = MetricsReport::from_confusion(&cm, &samples)?;
    print!("{}", report.render());
    if let Some(out) = out {
        let out = resolve(&root, Some(out), "metrics.csv");
        std::fs::write(&out, report.to_csv()).map_err(Error::from)?;
        println!("metrics written to {}", out.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_map(args: &mut Args) -> std::result::Result<ExitCode, CliError> {
    let root = data_root();
    let mode: MapMode = match args.take("mode") {
        Some(raw) => raw.parse()?,
        None => MapMode::Full,
    };
    let threads = args.take_parsed("threads")?.unwrap_or(1);
    let out = resolve(&root, args.take("out"), "map.ppm");
    let paths = pipeline_paths(args, &root);
    args.finish()?;
    let (cube, labels, _samples, model) = load_pipeline(&paths)?;
    let image = render_map(&model, &cube, &labels, mode, threads)?;
    image.save_ppm(&out)?;
    println!(
        "wrote {}x{} classification map to {}",
        image.width(),
        image.height(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_export(args: &mut Args) -> std::result::Result<ExitCode, CliError> {
    let root = data_root();
    let split_path = resolve(&root, args.take("split"), "split.txt");
    let layer: FeatureLayer = match args.take("layer") {
        Some(raw) => raw.parse()?,
        None => FeatureLayer::Fc2,
    };
    let set = args.take("set").unwrap_or_else(|| "all".into());
    let out = resolve(&root, args.take("out"), "features.csv");
    let paths = pipeline_paths(args, &root);
    args.finish()?;
    let (cube, _labels, samples, model) = load_pipeline(&paths)?;

    let indices: Vec<usize> = match set.as_str() {
        "all" => (0..samples.len()).collect(),
        "train" => load_split_for(&samples, &split_path)?.train,
        "test" => load_split_for(&samples, &split_path)?.test,
        other => {
            return Err(CliError::Run(Error::Usage(format!(
                "unknown sample set '{other}' (expected train, test, or all)"
            ))))
        }
    };
    let table = export_features(&model, &cube, &samples, &indices, layer)?;
    table.save_csv(&out)?;
    println!(
        "wrote {} rows x {} features to {}",
        table.rows.len(),
        table.feature_count(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: &mut Args) -> std::result::Result<ExitCode, CliError> {
    let seed = args.take_parsed("seed")?.unwrap_or(1);
    args.finish()?;
    let report = gradcheck::run_seeded_check(seed, 1e-5, 1e-6)?;
    print!("{}", report.summary());
    if report.passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::FAILURE)
    }
}
