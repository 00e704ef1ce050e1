use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use gsmdet_core::bdnn::{load_bundle, save_bundle, train_bdnn, BdnnTrainOptions, Provenance, TrainingDataOptions};
use gsmdet_core::bench::{mac_count, run_sweep, write_ber_csv, write_mac_csv, PairRecord, TimingReport};
use gsmdet_core::detectors::{BlockLinearDetector, MlDetector};
use gsmdet_core::neural::{EpochStats, TrainSpec};
use gsmdet_core::{BdnnDetector, BdnnModel, Detector, DetectorKind, GsmConfig, LinearVariant};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::plot::ber_svg;

pub const TRAINING_CSV: &str = "training_loss.csv";
pub const BER_CSV: &str = "ber.csv";
pub const PAIRS_CSV: &str = "pairs.csv";
pub const BER_SVG: &str = "ber.svg";
pub const COMPLEXITY_CSV: &str = "complexity.csv";

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn create_file(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn write_with<F>(path: &Path, f: F) -> CliResult<()>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let mut w = create_file(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

pub fn model_dir(cfg: &RunConfig) -> PathBuf {
    cfg.sweep.model.clone().unwrap_or_else(|| cfg.out.join("model"))
}

fn train_options(cfg: &RunConfig, gsm: &GsmConfig) -> CliResult<BdnnTrainOptions> {
    let spec = TrainSpec {
        learning_rate: cfg.train.lr,
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch,
        seed: cfg.seed,
        validation_fraction: cfg.train.validation_fraction,
    };
    spec.validate()?;
    if cfg.train.samples == 0 {
        return Err(CliError::Config("samples must be >= 1".into()));
    }
    Ok(BdnnTrainOptions {
        hidden: cfg.hidden(gsm.mod_order())?,
        samples: cfg.train.samples,
        spec,
        data: TrainingDataOptions { mode: cfg.train.features, train_snr_db: cfg.train.train_snr_db },
    })
}

fn write_training_csv(path: &Path, history: &[Vec<EpochStats>]) -> CliResult<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    write_with(path, |w| {
        writeln!(w, "subnet,epoch,train_loss,val_loss,val_accuracy")?;
        for (k, curve) in history.iter().enumerate() {
            for e in curve {
                writeln!(w, "{k},{},{},{},{}", e.epoch, e.train_loss, opt(e.val_loss), opt(e.val_accuracy))?;
            }
        }
        Ok(())
    })
}

pub fn train(mut cfg: RunConfig) -> CliResult<()> {
    let gsm = cfg.gsm()?;
    let opts = train_options(&cfg, &gsm)?;
    cfg.train.hidden = Some(opts.hidden.clone());
    let model_dir = model_dir(&cfg);
    cfg.sweep.model = Some(model_dir.clone());
    create_dir(&cfg.out)?;

    println!(
        "training {} sub-networks, layout {:?}, {} samples x {} epochs",
        gsm.n_active(),
        gsmdet_core::bdnn::network_layout(&gsm, &opts.hidden),
        opts.samples,
        opts.spec.epochs
    );
    let trained = train_bdnn(&gsm, &opts)?;
    save_bundle(&trained.model, &Provenance::of(&opts), &model_dir)?;
    write_training_csv(&cfg.out.join(TRAINING_CSV), &trained.history)?;
    cfg.write_effective(&cfg.out)?;
    for (k, curve) in trained.history.iter().enumerate() {
        if let Some(last) = curve.last() {
            match last.val_accuracy {
                Some(acc) => println!("sub-network {k}: loss {:.5}, validation accuracy {acc:.4}", last.train_loss),
                None => println!("sub-network {k}: loss {:.5}", last.train_loss),
            }
        }
    }
    println!("model written to {}", model_dir.display());
    Ok(())
}

fn load_model(dir: &Path, gsm: &GsmConfig) -> CliResult<BdnnModel> {
    let (model, _manifest) = load_bundle(dir)?;
    model.check_compatible(gsm)?;
    Ok(model)
}

fn write_pairs_csv(path: &Path, pairs: &[PairRecord]) -> CliResult<()> {
    write_with(path, |w| {
        writeln!(w, "snr_db,first,second,bits,first_only,second_only,difference,stderr")?;
        for p in pairs {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                p.snr_db,
                p.first,
                p.second,
                p.bits,
                p.first_only,
                p.second_only,
                p.difference(),
                p.stderr()
            )?;
        }
        Ok(())
    })
}

pub fn sweep(mut cfg: RunConfig) -> CliResult<()> {
    let gsm = cfg.gsm()?;
    let grid = cfg.snr_grid()?;
    let kinds = cfg.detectors()?;
    if cfg.sweep.slots == 0 {
        return Err(CliError::Config("slots must be >= 1".into()));
    }
    let model = if kinds.contains(&DetectorKind::BlockDnn) {
        let dir = cfg
            .sweep
            .model
            .clone()
            .ok_or_else(|| CliError::Config("B-DNN requested but no model bundle given (use --model)".into()))?;
        Some(load_model(&dir, &gsm)?)
    } else {
        None
    };
    cfg.sweep.detectors = kinds.iter().map(|k| k.to_string()).collect();

    let mut owned: Vec<Box<dyn Detector>> = Vec::new();
    for kind in &kinds {
        owned.push(match kind {
            DetectorKind::Ml => Box::new(MlDetector::new(&gsm)),
            DetectorKind::BlockZf => Box::new(BlockLinearDetector::new(&gsm, LinearVariant::Zf)),
            DetectorKind::BlockMmse => Box::new(BlockLinearDetector::new(&gsm, LinearVariant::Mmse)),
            DetectorKind::BlockDnn => Box::new(BdnnDetector::new(&gsm, model.clone().expect("loaded above"))?),
        });
    }
    let dets: Vec<&dyn Detector> = owned.iter().map(|d| d.as_ref()).collect();

    create_dir(&cfg.out)?;
    let out = run_sweep(&gsm, &dets, &grid, cfg.sweep.slots, cfg.seed)?;
    let csv = cfg.out.join(BER_CSV);
    write_with(&csv, |w| write_ber_csv(&out.records, w))?;
    write_pairs_csv(&cfg.out.join(PAIRS_CSV), &out.pairs)?;
    if cfg.sweep.plot {
        let title = format!(
            "N_t={} N_r={} N_p={} {}",
            gsm.n_tx(),
            gsm.n_rx(),
            gsm.n_active(),
            gsm.constellation().name()
        );
        let path = cfg.out.join(BER_SVG);
        std::fs::write(&path, ber_svg(&out.records, &title)).map_err(|e| CliError::io(&path, e))?;
    } else {
        // A stale plot from an earlier run would contradict the CSV.
        let _ = std::fs::remove_file(cfg.out.join(BER_SVG));
    }
    cfg.write_effective(&cfg.out)?;

    for r in &out.records {
        println!("{:>8} {:>6} dB  BER {:.4e} (+/- {:.1e})", r.detector, r.snr_db, r.ber, r.stderr());
    }
    let total = |name: &str| -> f64 { out.records.iter().filter(|r| r.detector == name).map(|r| r.elapsed_ns as f64).sum() };
    let reference = if kinds.contains(&DetectorKind::Ml) { "ML".to_string() } else { kinds[0].to_string() };
    let ref_ns = total(&reference).max(1.0);
    let slots_total = (cfg.sweep.slots * grid.len()) as f64;
    println!("timing ({}):", TimingReport::NOTE);
    for k in &kinds {
        let name = k.to_string();
        let ns = total(&name);
        println!("{name:>8} {:>10.0} ns/slot  {:>7.1}% of {reference}", ns / slots_total, 100.0 * ns / ref_ns);
    }
    println!("results written to {}", csv.display());
    Ok(())
}

pub fn complexity(mut cfg: RunConfig) -> CliResult<()> {
    let gsm = cfg.gsm()?;
    let widths: Vec<usize> = match &cfg.sweep.model {
        Some(dir) => load_model(dir, &gsm)?.layout()[1..].to_vec(),
        None => {
            let hidden = cfg.hidden(gsm.mod_order())?;
            cfg.train.hidden = Some(hidden.clone());
            hidden.into_iter().chain([gsm.mod_order()]).collect()
        }
    };
    let rows = DetectorKind::ALL
        .iter()
        .map(|&k| mac_count(k, &gsm, Some(&widths)))
        .collect::<gsmdet_core::Result<Vec<_>>>()?;
    create_dir(&cfg.out)?;
    let path = cfg.out.join(COMPLEXITY_CSV);
    write_with(&path, |w| write_mac_csv(&rows, w))?;
    cfg.write_effective(&cfg.out)?;
    let mut stdout = std::io::stdout().lock();
    write_mac_csv(&rows, &mut stdout).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(())
}
