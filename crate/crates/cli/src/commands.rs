use std::path::Path;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use mrha_core::alert::mock::MockGateway;
use mrha_core::alert::{format_alert, send_sms, spawn_dispatcher, Dispatcher, SmsRequest};
use mrha_core::config::AppConfig;
use mrha_core::model::{init_parameters, load_checkpoint, save_checkpoint, ModelConfig, ModelParams};
use mrha_core::skeleton::{split_dataset, ActivityClass, ActivityLabel, SkeletonFrame, SplitMode, SynthOptions};
use mrha_core::stream::{run_stream, ActivityEvent, FrameSource, ReplaySource, SocketSource, SourceError};
use mrha_core::train::{check_samples, evaluate, train as fit, write_history_csv, EvalReport};
use serde_json::json;

use crate::data::{describe, load_corpus, sequence_file_name, write_corpus};
use crate::error::{data, usage, CliError, Result};
use crate::{SourceKind, SplitOpts, Subset};

const DELIVERY_LOG: &str = "deliveries.jsonl";

fn load_config(path: &Path) -> Result<AppConfig> {
    AppConfig::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))
}

pub fn gen_data(out: &Path, per_class: usize, seed: u64, duration: f64, classes: &[ActivityClass]) -> Result<()> {
    if per_class == 0 {
        return Err(usage("--per-class must be at least 1"));
    }
    if !(duration.is_finite() && duration > 0.0) {
        return Err(usage("--duration must be positive"));
    }
    let mut opts = SynthOptions::new(per_class, seed);
    opts.duration = duration;
    if !classes.is_empty() {
        opts.classes = classes.to_vec();
    }
    let named: Vec<_> = opts
        .classes
        .iter()
        .flat_map(|&c| (0..per_class).map(move |j| (c, j)))
        .zip(opts.generate())
        .map(|((c, j), seq)| (sequence_file_name(c, j), seq))
        .collect();
    let rows = write_corpus(out, &named)?;
    println!("wrote {} sequences and {}", rows.len(), out.join(crate::data::MANIFEST).display());
    Ok(())
}

/// Loads a checkpoint; with a config, its model section must describe the
/// same tensors.
fn load_model(checkpoint: &Path, expected: Option<&ModelConfig>) -> Result<ModelParams> {
    let params = load_checkpoint(checkpoint).map_err(|e| data(format!("{}: {e}", checkpoint.display())))?;
    match expected {
        Some(cfg) if cfg != params.config() => {
            let named = params.names().iter().cloned().zip(params.tensors().iter().cloned()).collect();
            ModelParams::from_tensors(cfg.clone(), named)
                .map_err(|e| data(format!("checkpoint {} does not match the configured model: {e}", checkpoint.display())))
        }
        _ => Ok(params),
    }
}

fn split_report(mode: SplitMode, train: &[mrha_core::skeleton::LabeledSample], test: &[mrha_core::skeleton::LabeledSample]) {
    let name = match mode {
        SplitMode::CrossSubject => "cross-subject",
        SplitMode::CrossView => "cross-view",
    };
    println!("split {name}");
    println!("  train: {}", describe(train));
    println!("  test:  {}", describe(test));
}

pub fn train(
    config_path: &Path,
    mode: SplitMode,
    checkpoint: &Path,
    data_dir: Option<&Path>,
    history: Option<&Path>,
    split: &SplitOpts,
) -> Result<()> {
    let config = load_config(config_path)?;
    let data_dir = data_dir.map_or_else(|| config.paths.data_dir.clone(), Path::to_path_buf);
    let history = history.map_or_else(|| config.paths.logs.join("history.csv"), Path::to_path_buf);

    let samples = load_corpus(&data_dir, config.model.input_grid)?;
    let params = init_parameters(&config.model, config.train.seed).map_err(usage)?;
    check_samples(&params, &samples).map_err(data)?;
    let seed = split.split_seed.unwrap_or(config.train.seed);
    let (train_set, test_set) = split_dataset(samples, mode, split.train_fraction, seed).map_err(data)?;
    split_report(mode, &train_set, &test_set);

    for p in [checkpoint, &history] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            ensure_dir(dir)?;
        }
    }
    println!("model: {} parameters", params.scalar_count());
    let outcome = fit(params, &train_set, &config.train, |r| {
        println!("epoch {:>3}  loss {:.4}  accuracy {:.3}", r.epoch, r.loss, r.accuracy);
        true
    })
    .map_err(data)?;
    write_history_csv(&outcome.history, &history).map_err(|e| usage(format!("{}: {e}", history.display())))?;
    save_checkpoint(&outcome.params, checkpoint).map_err(|e| usage(format!("{}: {e}", checkpoint.display())))?;

    let train_acc = evaluate(&outcome.params, &train_set).map_err(data)?.accuracy;
    let test_acc = evaluate(&outcome.params, &test_set).map_err(data)?.accuracy;
    println!("final train accuracy {train_acc:.4}");
    println!("final test accuracy {test_acc:.4}");
    println!("checkpoint {}", checkpoint.display());
    println!("history {}", history.display());
    Ok(())
}

pub fn eval(
    checkpoint: &Path,
    data_dir: &Path,
    mode: Option<SplitMode>,
    subset: Subset,
    config_path: Option<&Path>,
    out: Option<&Path>,
    split: &SplitOpts,
) -> Result<()> {
    let config = config_path.map(load_config).transpose()?;
    let params = load_model(checkpoint, config.as_ref().map(|c| &c.model))?;
    let config = config.unwrap_or_default();
    let samples = load_corpus(data_dir, params.config().input_grid)?;
    let (set, stem) = match mode {
        None => (samples, "eval_all".to_string()),
        Some(mode) => {
            let seed = split.split_seed.unwrap_or(config.train.seed);
            let (tr, te) = split_dataset(samples, mode, split.train_fraction, seed).map_err(data)?;
            split_report(mode, &tr, &te);
            match subset {
                Subset::Train => (tr, "eval_train".into()),
                Subset::Test => (te, "eval_test".into()),
            }
        }
    };
    check_samples(&params, &set).map_err(data)?;
    let report: EvalReport = evaluate(&params, &set).map_err(data)?;
    let out = out.map_or_else(|| config.paths.logs.clone(), Path::to_path_buf);
    ensure_dir(&out)?;
    report.write_files(&out, &stem).map_err(|e| usage(format!("{}: {e}", out.display())))?;
    print!("{}", report.to_key_values());
    println!("report {}", out.join(format!("{stem}.txt")).display());
    Ok(())
}

/// Shifts stream timestamps so that 0 maps to `origin` Unix seconds.
struct Shifted<S> {
    inner: S,
    origin: f64,
}

impl<S: FrameSource> FrameSource for Shifted<S> {
    fn next_frame(&mut self) -> Option<std::result::Result<SkeletonFrame, SourceError>> {
        self.inner.next_frame().map(|r| {
            r.map(|mut f| {
                f.timestamp += self.origin;
                f
            })
        })
    }
}

fn now_unix() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

#[allow(clippy::too_many_arguments)]
pub fn stream(
    checkpoint: &Path,
    source: SourceKind,
    input: Option<&Path>,
    listen: &str,
    alerts: bool,
    config_path: Option<&Path>,
    start_time: Option<f64>,
    pace: bool,
) -> Result<()> {
    let config = config_path.map(load_config).transpose()?;
    let params = load_model(checkpoint, config.as_ref().map(|c| &c.model))?;
    let config = config.unwrap_or_default();
    if alerts {
        config.validate_gateway().map_err(usage)?;
    }
    let origin = start_time.unwrap_or_else(now_unix);
    if !origin.is_finite() {
        return Err(usage("--start-time must be finite"));
    }

    let dispatcher = if alerts {
        ensure_dir(&config.paths.logs)?;
        let log_path = config.paths.logs.join(DELIVERY_LOG);
        Some(spawn_dispatcher(
            Dispatcher::new(config.gateway.clone(), Some(&log_path)).map_err(usage)?,
            config.stream.queue_capacity,
        ))
    } else {
        None
    };
    let sender = dispatcher.as_ref().map(|(tx, _)| tx.clone());
    let sink = |e: &ActivityEvent| {
        println!("{}", serde_json::to_string(e).expect("event serializes"));
        if let Some(tx) = &sender {
            if tx.send(e.clone()).is_err() {
                log::error!("alert worker stopped; event {} not dispatched", e.id);
            }
        }
    };

    let summary = match source {
        SourceKind::File => {
            let path = input.ok_or_else(|| usage("--source file requires --input"))?;
            let src = ReplaySource::open(path, pace).map_err(|e| data(format!("{}: {e}", path.display())))?;
            run_stream(Shifted { inner: src, origin }, &params, &config.stream, sink)
        }
        SourceKind::Socket => {
            let src = SocketSource::bind(listen).map_err(|e| usage(format!("cannot listen on {listen}: {e}")))?;
            let addr = src.local_addr().map_err(usage)?;
            eprintln!("listening for frames on {addr}");
            run_stream(Shifted { inner: src, origin }, &params, &config.stream, sink)
        }
    }
    .map_err(data)?;
    drop(sender);

    let mut alert_summary = None;
    let mut failure = None;
    if let Some((tx, worker)) = dispatcher {
        drop(tx);
        let d = worker.join().map_err(|_| CliError::Gateway("alert worker panicked".into()))?;
        let sent = d.results().iter().filter(|r| r.accepted).count();
        let failed = d.results().iter().filter(|r| !r.accepted).count();
        if failed > 0 || d.queued() > 0 || d.dropped() > 0 {
            failure = Some(format!(
                "{failed} failed delivery attempt(s), {} event(s) undelivered, {} dropped",
                d.queued(),
                d.dropped()
            ));
        }
        alert_summary = Some(json!({
            "accepted": sent,
            "failed": failed,
            "undelivered": d.queued(),
            "dropped": d.dropped(),
            "log": d.log_path().map(|p| p.display().to_string()),
        }));
    }
    println!("{}", json!({ "summary": summary, "alerts": alert_summary }));
    if let Some(source_error) = &summary.source_error {
        eprintln!("source stopped early: {source_error}");
    }
    match failure {
        Some(f) => Err(CliError::Gateway(f)),
        None => Ok(()),
    }
}

pub fn send_test_alert(config_path: &Path) -> Result<()> {
    let config = load_config(config_path)?;
    config.validate_gateway().map_err(usage)?;
    if config.gateway.recipients.is_empty() {
        return Err(usage("gateway.recipients is empty"));
    }
    let now = now_unix().floor();
    let event = ActivityEvent {
        id: 0,
        label: ActivityLabel::new(ActivityClass::A43, true),
        confidence: 1.0,
        window_start: now - 2.0,
        window_end: now,
    };
    let offset = config.gateway.offset().map_err(usage)?;
    let body = format!("[TEST] {}", format_alert(&event, &config.gateway.patient_label, offset).map_err(usage)?);
    let mut failed = 0;
    for to in &config.gateway.recipients {
        let request = SmsRequest {
            to: to.clone(),
            from: config.gateway.from_number.clone(),
            body: body.clone(),
        };
        let result = send_sms(&request, &config.gateway);
        failed += usize::from(!result.accepted);
        println!("{}", serde_json::to_string(&result).expect("result serializes"));
    }
    if failed > 0 {
        return Err(CliError::Gateway(format!("{failed} of {} test alert(s) not accepted", config.gateway.recipients.len())));
    }
    Ok(())
}

pub fn mock_gateway(listen: &str, script: Vec<u16>) -> Result<()> {
    let mock = MockGateway::bind(listen, script).map_err(|e| usage(format!("cannot listen on {listen}: {e}")))?;
    println!("mock gateway at {}", mock.base_url());
    let mut seen = 0;
    loop {
        std::thread::sleep(Duration::from_millis(100));
        let reqs = mock.requests();
        for r in &reqs[seen..] {
            let line = json!({
                "method": r.method,
                "path": r.path,
                "status": r.status,
                "form": r.form().into_iter().collect::<std::collections::BTreeMap<_, _>>(),
            });
            println!("{line}");
        }
        seen = reqs.len();
    }
}
