use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use downscaler_core::baseline::train_baseline;
use downscaler_core::cvae::train_cvae;
use downscaler_core::data::generate_dataset;
use downscaler_core::ensemble::{sample_test_slice, Model};
use downscaler_core::eval::compare_models;
use downscaler_core::io::{common_log_scale, read_dataset, write_dataset, write_pgm, Checkpoint, SampleSet};
use downscaler_core::train::EpochLoss;
use downscaler_core::{Dataset32, RandomStream};

use crate::config::RunConfig;
use crate::{CliError, ModelArg};

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    RunConfig::load_or_default(path).map_err(|e| CliError::config(e.to_string()))
}

fn load_data(path: &Path) -> Result<Dataset32, CliError> {
    read_dataset(path).map_err(|e| CliError::from_core(e).context(&format!("dataset {}", path.display())))
}

fn write_err(path: &Path) -> impl FnOnce(downscaler_core::Error) -> CliError + '_ {
    move |e| CliError::from_core(e).context(&format!("writing {}", path.display()))
}

pub fn gen_data(config: Option<&Path>, out: &Path) -> Result<String, CliError> {
    let cfg = load_config(config)?;
    let data: Dataset32 = generate_dataset(&cfg.synth, &RandomStream::new(cfg.seed))?;
    write_dataset(&data, out).map_err(write_err(out))?;
    Ok(format!(
        "wrote {}: X {:?}, Y {:?}, split {}, seed {}\n",
        out.display(),
        data.predictors.shape(),
        data.precip.shape(),
        data.split_index,
        cfg.seed
    ))
}

pub fn loss_csv(history: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,total,recon,kl\n");
    for (e, l) in history.iter().enumerate() {
        writeln!(s, "{e},{},{},{}", l.total, l.recon, l.kl).expect("write to string");
    }
    s
}

pub fn train(
    model: ModelArg,
    data_path: &Path,
    config: Option<&Path>,
    out: &Path,
    loss_path: Option<&Path>,
) -> Result<String, CliError> {
    let cfg = load_config(config)?;
    let data = load_data(data_path)?;
    let (hc, wc) = data.coarse_extent();
    let c = data.channels();
    let (trained, history) = match model {
        ModelArg::Cvae => {
            let (m, h) = train_cvae(&data, cfg.cvae_arch(c, hc, wc), &cfg.cvae_train())?;
            (Model::Cvae(m), h)
        }
        ModelArg::Baseline => {
            let (m, h) = train_baseline(&data, cfg.baseline_arch(c, hc, wc), &cfg.baseline_train(), cfg.wet_threshold)?;
            (Model::Baseline(m), h)
        }
    };
    let loss_path = loss_path.map_or_else(
        || {
            let mut p = out.as_os_str().to_owned();
            p.push(".loss.csv");
            PathBuf::from(p)
        },
        Path::to_path_buf,
    );
    trained.to_checkpoint().write(out).map_err(write_err(out))?;
    std::fs::write(&loss_path, loss_csv(&history))
        .map_err(|e| CliError::from_core(e.into()).context(&format!("writing {}", loss_path.display())))?;
    let first = history.first().map_or(f64::NAN, |l| l.total);
    let last = history.last().map_or(f64::NAN, |l| l.total);
    Ok(format!(
        "trained {} for {} epochs: loss {first:.5} -> {last:.5}; wrote {}\n",
        trained.kind().name(),
        history.len(),
        out.display()
    ))
}

pub fn sample(
    ckpt_path: &Path,
    data_path: &Path,
    n: usize,
    seed: u64,
    out: &Path,
    pgm_dir: Option<&Path>,
    pgm_day: usize,
) -> Result<String, CliError> {
    if n == 0 {
        return Err(CliError::config("n must be >= 1"));
    }
    let ck = Checkpoint::read(ckpt_path)
        .map_err(|e| CliError::from_core(e).context(&format!("checkpoint {}", ckpt_path.display())))?;
    let model = Model::from_checkpoint(&ck)?;
    let data = load_data(data_path)?;
    model.check_dataset(&data)?;
    let test = data.test_range();
    if pgm_dir.is_some() && pgm_day >= test.len() {
        return Err(CliError::config(format!("pgm_day {pgm_day} outside the {} test days", test.len())));
    }
    let set = sample_test_slice(&model, &data, n, seed)?;
    set.write(out).map_err(write_err(out))?;
    let mut msg = format!(
        "wrote {}: {} samples {:?} from test day {}\n",
        out.display(),
        model.kind().name(),
        set.samples.shape(),
        set.first_time
    );
    if let Some(dir) = pgm_dir {
        let t = test.start + pgm_day;
        let truth = data.precip_at(t);
        let members = set.ensemble(pgm_day)?;
        let mut all: Vec<_> = members.iter().collect();
        all.push(&truth);
        let scale = common_log_scale(&all);
        std::fs::create_dir_all(dir).map_err(|e| CliError::from_core(e.into()))?;
        let kind = model.kind().name();
        for (i, m) in members.iter().enumerate() {
            let p = dir.join(format!("{kind}_day{t}_member{i}.pgm"));
            write_pgm(m, scale, &p).map_err(write_err(&p))?;
        }
        let p = dir.join(format!("truth_day{t}.pgm"));
        write_pgm(&truth, scale, &p).map_err(write_err(&p))?;
        writeln!(msg, "wrote {} maps for day {t} to {}", members.len() + 1, dir.display()).expect("write to string");
    }
    Ok(msg)
}

pub fn evaluate(
    data_path: &Path,
    cvae_path: &Path,
    baseline_path: &Path,
    out: &Path,
    config: Option<&Path>,
) -> Result<String, CliError> {
    let cfg = load_config(config)?;
    let data = load_data(data_path)?;
    let read = |p: &Path| {
        SampleSet::read(p).map_err(|e| CliError::from_core(e).context(&format!("samples {}", p.display())))
    };
    let cvae = read(cvae_path)?;
    let baseline = read(baseline_path)?;
    let report = compare_models(&cvae, &baseline, &data, &cfg.eval())?;
    std::fs::write(out, report.to_csv())
        .map_err(|e| CliError::from_core(e.into()).context(&format!("writing {}", out.display())))?;
    Ok(format!("{}\n", report.verdict()))
}
