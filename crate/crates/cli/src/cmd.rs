use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use freqsel::check::{format_table, run_checks};
use freqsel::codec::{encode_image, BlockDct, ChannelMoments, ChannelStats};
use freqsel::dataio::{gen_band_dataset, ppm_read, tensor_write, BandConfig, Dataset, Regime};
use freqsel::gate::GateMode;
use freqsel::model::{
    build_model, evaluate, metrics_csv, train, Checkpoint, GateSpec, ModelKind, ModelSpec, Preprocess, TrainConfig,
};
use freqsel::select::{list_mask, named_mask, square_mask, triangle_mask, HeatMap, SelectionMask, NAMED_MASKS};

#[derive(Parser, Debug)]
#[command(name = "freqsel", version, about = "Frequency-channel image codec, channel selection and desk-scale training")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Encode a PPM image into an FDT1 channel tensor.
    Encode(EncodeArgs),
    /// Compute per-channel mean and variance over a dataset.
    Stats(StatsArgs),
    /// Write a selection mask file.
    Mask(MaskArgs),
    /// Generate a synthetic band-signature dataset.
    GenData(GenDataArgs),
    /// Train a frequency or spatial classifier.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Aggregate gate decisions of a checkpoint into selection heat maps.
    Heatmap(HeatmapArgs),
    /// Run the built-in oracle and invariant suite.
    Check(CheckArgs),
}

pub enum Outcome {
    Success,
    CheckFailed,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Mask file or one of the named masks (e.g. DCT-24S).
    #[arg(long)]
    mask: Option<String>,
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    mask: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[group(id = "shape", required = true, multiple = false)]
struct MaskArgs {
    #[arg(long, group = "shape")]
    name: Option<String>,
    /// Per-component counts `kY,kCb,kCr`.
    #[arg(long, group = "shape", value_name = "KY,KCB,KCR")]
    square: Option<String>,
    #[arg(long, group = "shape", value_name = "KY,KCB,KCR")]
    triangle: Option<String>,
    /// Canonicalize an existing mask file.
    #[arg(long, group = "shape")]
    list: Option<PathBuf>,
    /// Destination; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RegimeArg {
    Anywhere,
    #[value(name = "high_only")]
    HighOnly,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 3)]
    m: usize,
    #[arg(long, default_value_t = 64.0)]
    a: f64,
    #[arg(long, default_value_t = 4.0)]
    sigma: f64,
    /// Square image side in pixels.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 100)]
    samples_per_class: usize,
    /// Hold out this many samples per class into `<out-dir>/test`.
    #[arg(long, default_value_t = 0)]
    test_per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = RegimeArg::Anywhere)]
    regime: RegimeArg,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Freq,
    Spatial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Sample,
    Threshold,
}

impl From<ModeArg> for GateMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sample => GateMode::Sample,
            ModeArg::Threshold => GateMode::Threshold,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_enum)]
    model: KindArg,
    /// Training manifest.
    #[arg(long)]
    data: PathBuf,
    /// Optional validation manifest, scored after every epoch.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Mask file or named mask (frequency models only).
    #[arg(long)]
    mask: Option<String>,
    #[arg(long, value_enum, default_value_t = Switch::Off)]
    gate: Switch,
    /// Feed spatial models 2x box-downsampled images.
    #[arg(long)]
    downsample: bool,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Anneal the temperature exponentially to this value.
    #[arg(long)]
    tau_final: Option<f64>,
    #[arg(long, default_value_t = 5)]
    lambda_warmup: usize,
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 4e-5)]
    weight_decay: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    lr_decay: f64,
    #[arg(long, default_value_t = 20)]
    decay_every: usize,
    /// Gate behaviour on the validation split.
    #[arg(long, value_enum, default_value_t = ModeArg::Sample)]
    eval_mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Checkpoint directory; `metrics.csv` is written inside it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Sample)]
    mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args, Debug)]
struct HeatmapArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Writes `<prefix>.csv` and `<prefix>_{y,cb,cr}.pgm`.
    #[arg(long)]
    out_prefix: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Sample)]
    mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Multiply the DC normalization of the transform under test.
    #[arg(long, hide = true)]
    corrupt_dct: Option<f64>,
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Encode(a) => encode(a)?,
        Command::Stats(a) => stats(a)?,
        Command::Mask(a) => mask(a)?,
        Command::GenData(a) => gen_data(a)?,
        Command::Train(a) => train_cmd(a)?,
        Command::Eval(a) => eval_cmd(a)?,
        Command::Heatmap(a) => heatmap(a)?,
        Command::Check(a) => return check(a),
    }
    Ok(Outcome::Success)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| freqsel::Error::io(path, e).into())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| freqsel::Error::io(path, e).into())
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| freqsel::Error::io(path, e).into())
}

fn load_mask(spec: &str) -> Result<SelectionMask> {
    if NAMED_MASKS.contains(&spec) {
        return Ok(named_mask(spec)?);
    }
    let text = read_text(Path::new(spec))?;
    list_mask(&text).with_context(|| format!("reading mask {spec}"))
}

fn counts(s: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("bad counts {s:?}"))?;
    match parts[..] {
        [y, cb, cr] => Ok((y, cb, cr)),
        _ => bail!(freqsel::Error::Config(format!("expected kY,kCb,kCr, got {s:?}"))),
    }
}

fn encode(a: EncodeArgs) -> Result<()> {
    let img = ppm_read(&read(&a.input)?).with_context(|| format!("decoding {}", a.input.display()))?;
    let mask = a.mask.as_deref().map(load_mask).transpose()?;
    let stats = match &a.stats {
        Some(p) => Some(ChannelMoments::parse(&read_text(p)?)?),
        None => None,
    };
    let t = encode_image(&img, mask.as_ref(), stats.as_ref())?;
    write(&a.out, &tensor_write(&t.tensor)?)?;
    let d = t.tensor.dims();
    println!("{} -> {}x{}x{}", a.out.display(), d[0], d[1], d[2]);
    Ok(())
}

fn stats(a: StatsArgs) -> Result<()> {
    let data = Dataset::load(&a.data)?;
    let mask = a.mask.as_deref().map(load_mask).transpose()?;
    let channels = mask.as_ref().map_or(192, SelectionMask::len);
    let mut acc = ChannelStats::new(channels);
    for img in &data.images {
        acc.update(&encode_image(img, mask.as_ref(), None)?.tensor)?;
    }
    write(&a.out, acc.finalize()?.to_text().as_bytes())?;
    println!("{} channels over {} images -> {}", channels, data.len(), a.out.display());
    Ok(())
}

fn mask(a: MaskArgs) -> Result<()> {
    let m = if let Some(name) = &a.name {
        named_mask(name)?
    } else if let Some(s) = &a.square {
        let (y, cb, cr) = counts(s)?;
        square_mask(y, cb, cr)?
    } else if let Some(s) = &a.triangle {
        let (y, cb, cr) = counts(s)?;
        triangle_mask(y, cb, cr)?
    } else if let Some(p) = &a.list {
        list_mask(&read_text(p)?)?
    } else {
        unreachable!("clap requires one mask source")
    };
    match &a.out {
        Some(p) => {
            write(p, m.to_text().as_bytes())?;
            let (y, cb, cr) = m.counts();
            println!("{} channels ({y},{cb},{cr}) -> {}", m.len(), p.display());
        }
        None => print!("{}", m.to_text()),
    }
    Ok(())
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let cfg = BandConfig {
        classes: a.k,
        samples_per_class: a.samples_per_class + a.test_per_class,
        signature_size: a.m,
        amplitude: a.a,
        sigma: a.sigma,
        height: a.size,
        width: a.size,
        seed: a.seed,
        regime: match a.regime {
            RegimeArg::Anywhere => Regime::Anywhere,
            RegimeArg::HighOnly => Regime::HighOnly,
        },
    };
    let data = gen_band_dataset(&cfg)?;
    if a.test_per_class == 0 {
        let p = data.write_to_dir(&a.out_dir)?;
        println!("{} samples -> {}", data.len(), p.display());
    } else {
        let (tr, te) = data.split_per_class(a.samples_per_class);
        let p1 = tr.write_to_dir(&a.out_dir.join("train"))?;
        let p2 = te.write_to_dir(&a.out_dir.join("test"))?;
        println!("{} samples -> {}", tr.len(), p1.display());
        println!("{} samples -> {}", te.len(), p2.display());
    }
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let data = Dataset::load(&a.data)?;
    let val = a.val.as_deref().map(Dataset::load).transpose()?;
    let (h, w) = (data.manifest.height, data.manifest.width);
    let preprocess = match a.model {
        KindArg::Freq => {
            if a.downsample {
                bail!(freqsel::Error::Config("--downsample applies to spatial models".into()));
            }
            let mask = a.mask.as_deref().map(load_mask).transpose()?.unwrap_or_else(SelectionMask::all);
            Preprocess::fit_freq(&data.images, mask)?
        }
        KindArg::Spatial => {
            if a.mask.is_some() || a.gate == Switch::On {
                bail!(freqsel::Error::Config("--mask and --gate apply to frequency models".into()));
            }
            Preprocess::fit_spatial(&data.images, a.downsample)?
        }
    };
    let [ih, iw, c] = preprocess.input_dims(h, w);
    let classes = data.manifest.classes;
    let mut spec = match a.model {
        KindArg::Freq => ModelSpec::freq(ih, iw, c, classes),
        KindArg::Spatial => ModelSpec::spatial(ih, iw, classes),
    }
    .with_seed(a.seed);
    if a.gate == Switch::On {
        spec = spec.with_gate(GateSpec {
            tau: a.tau,
            lambda: a.lambda,
            ..GateSpec::default()
        });
    }
    let mut model = build_model(spec)?;
    let train_set = preprocess.apply_dataset(&data)?;
    let val_set = val.as_ref().map(|v| preprocess.apply_dataset(v)).transpose()?;
    let cfg = TrainConfig {
        lr: a.lr,
        momentum: a.momentum,
        weight_decay: a.weight_decay,
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr_decay: a.lr_decay,
        decay_interval: a.decay_every,
        tau_final: a.tau_final,
        lambda_warmup: a.lambda_warmup,
        seed: a.seed,
        threads: a.threads,
        eval_mode: a.eval_mode.into(),
    };
    let rows = train(&mut model, &train_set, val_set.as_deref(), &cfg)?;
    let ckpt = Checkpoint { model, preprocess };
    ckpt.save(&a.out)?;
    let csv = metrics_csv(&rows);
    write(&a.out.join("metrics.csv"), csv.as_bytes())?;
    if let Some(last) = csv.lines().last() {
        println!("{last}");
    }
    println!("checkpoint -> {}", a.out.display());
    Ok(())
}

fn load_for_eval(ckpt: &Path, data: &Path) -> Result<(Checkpoint, Dataset, Vec<freqsel::model::Sample>)> {
    let ck = Checkpoint::load(ckpt)?;
    let data = Dataset::load(data)?;
    if data.manifest.classes != ck.model.spec.classes {
        bail!(freqsel::Error::Config(format!(
            "dataset has {} classes, checkpoint {}",
            data.manifest.classes, ck.model.spec.classes
        )));
    }
    let samples = ck.preprocess.apply_dataset(&data)?;
    Ok((ck, data, samples))
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let (ck, _, samples) = load_for_eval(&a.ckpt, &a.data)?;
    let ev = evaluate(&ck.model, &samples, a.mode.into(), a.seed, a.threads)?;
    print!("accuracy {:.4} loss {:.6}", ev.accuracy, ev.loss);
    if let Some(on) = ev.mean_channels_on {
        print!(" mean_channels_on {on:.3} mode {}", GateMode::from(a.mode).name());
    }
    println!();
    Ok(())
}

fn heatmap(a: HeatmapArgs) -> Result<()> {
    let (ck, _, samples) = load_for_eval(&a.ckpt, &a.data)?;
    if ck.model.spec.kind != ModelKind::Freq || ck.model.gate().is_none() {
        bail!(freqsel::Error::Config("heat maps need a gated frequency checkpoint".into()));
    }
    let mode: GateMode = a.mode.into();
    let ev = evaluate(&ck.model, &samples, mode, a.seed, a.threads)?;
    let mut map = HeatMap::new();
    for d in &ev.decisions {
        map.record(&ck.preprocess.expand_decision(d)?)?;
    }
    for p in map.write(&a.out_prefix)? {
        println!("{}", p.display());
    }
    println!(
        "accuracy {:.4} mean_channels_on {:.3} mode {}",
        ev.accuracy,
        ev.mean_channels_on.unwrap_or(0.0),
        mode.name()
    );
    Ok(())
}

fn check(a: CheckArgs) -> Result<Outcome> {
    let dct = match a.corrupt_dct {
        Some(s) => BlockDct::with_dc_scale(s),
        None => BlockDct::new(),
    };
    let rows = run_checks(&dct, a.seed);
    print!("{}", format_table(&rows));
    let failed = rows.iter().filter(|r| !r.passed).count();
    if failed == 0 {
        println!("all {} checks passed", rows.len());
        Ok(Outcome::Success)
    } else {
        println!("{failed} of {} checks failed", rows.len());
        Ok(Outcome::CheckFailed)
    }
}
